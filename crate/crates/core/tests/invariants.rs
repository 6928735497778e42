mod support;

#[test]
fn invariant_suite_holds() {
    let failed: Vec<_> = support::invariant_suite(11).into_iter().filter(|c| !c.pass).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
