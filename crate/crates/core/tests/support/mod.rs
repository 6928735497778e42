//! Checks shared by the integration tests and the acceptance binary. Every
//! reference value here is recomputed independently of the library code
//! under test.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use afs_core::attention::{compute_dataset_weights, AttentionConfig, AttentionParams};
use afs_core::baselines::{fisher_score, min_max_normalize, relieff, ReliefConfig};
use afs_core::data::{awgn_noise, kfold_splits, load_idx, save_idx, Dataset, IdxImages};
use afs_core::eval::weights_csv;
use afs_core::learner::{set_frozen, weight_features, Activation, LearnerConfig, LearnerParams, Targets, Task};
use afs_core::nn::{adam_step, rng_from_seed, two_logit_softmax, AdamConfig, Matrix, Parameters};
use afs_core::trainer::{joint_gradients, joint_objective, train_afs, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// Outcome of one named check.
#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            pass,
            detail: detail.into(),
        }
    }
}

fn uniform_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------- gradients

#[derive(Debug)]
pub struct GradientReport {
    pub graphs: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub elapsed: Duration,
}

/// Relative error with an absolute floor so that entries whose true
/// gradient is zero are compared on an absolute scale.
pub const GRADIENT_REL_FLOOR: f64 = 1e-6;
pub const GRADIENT_STEP: f64 = 1e-5;

/// Compares analytic gradients of the joint objective with central finite
/// differences on `graphs` random miniature attention + learner graphs
/// (`d ≤ 6`, `m ≤ 8`). Smooth activations are used so the difference
/// quotient is well defined everywhere.
pub fn gradient_suite(graphs: usize, seed: u64) -> GradientReport {
    let start = Instant::now();
    let mut rng = rng_from_seed(seed);
    let mut report = GradientReport {
        graphs,
        entries: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        elapsed: Duration::ZERO,
    };
    for g in 0..graphs {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=8);
        let att_cfg = AttentionConfig {
            input_dim: d,
            n_e: rng.random_range(1..=4),
            hidden_layers: rng.random_range(0..=2),
            hidden_width: rng.random_range(1..=3),
        };
        let task = if g % 4 == 3 { Task::Regression } else { Task::Classification };
        let outputs = rng.random_range(if task == Task::Regression { 1..=2 } else { 2..=3 });
        let mut layer_sizes = vec![d];
        for _ in 0..rng.random_range(0..=2) {
            layer_sizes.push(rng.random_range(1..=5));
        }
        layer_sizes.push(outputs);
        let learner_cfg = LearnerConfig {
            layer_sizes,
            task,
            activation: Activation::Tanh,
        };
        let lambda = [0.0, 1e-3, 0.05][g % 3];

        let mut attention = AttentionParams::init(att_cfg, rng.random()).unwrap();
        let mut learner = LearnerParams::init(learner_cfg, rng.random()).unwrap();
        let scale = rng.random_range(1.0..6.0);
        for p in attention.params_mut().into_iter().chain(learner.params_mut()) {
            p.value_mut().iter_mut().for_each(|v| *v *= scale);
        }
        let x = uniform_matrix(m, d, -1.0, 1.0, &mut rng);
        let y = match task {
            Task::Classification => Targets::Classes((0..m).map(|_| rng.random_range(0..outputs)).collect()),
            Task::Regression => Targets::Values(uniform_matrix(m, outputs, -1.0, 1.0, &mut rng)),
        };

        attention.zero_grad();
        learner.zero_grad();
        joint_gradients(&mut attention, &mut learner, &x, &y, lambda).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = attention
            .params()
            .into_iter()
            .chain(learner.params())
            .map(|p| (p.name().to_string(), p.grad().as_slice().to_vec()))
            .collect();

        let n_att = attention.params().len();
        for (t, (name, grads)) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let eval = |delta: f64, attention: &mut AttentionParams, learner: &mut LearnerParams| {
                    {
                        let mut tensors: Vec<_> = attention.params_mut().into_iter().chain(learner.params_mut()).collect();
                        tensors[t].value_mut()[j] += delta;
                    }
                    let f = joint_objective(attention, learner, &x, &y, lambda).unwrap();
                    let mut tensors: Vec<_> = attention.params_mut().into_iter().chain(learner.params_mut()).collect();
                    tensors[t].value_mut()[j] -= delta;
                    f
                };
                let plus = eval(GRADIENT_STEP, &mut attention, &mut learner);
                let minus = eval(-GRADIENT_STEP, &mut attention, &mut learner);
                let numeric = (plus - minus) / (2.0 * GRADIENT_STEP);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_REL_FLOOR);
                report.entries += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    let module = if t < n_att { "attention" } else { "learner" };
                    report.worst = format!("graph {g} {module} {name}[{j}]: analytic {a:e}, numeric {numeric:e}");
                }
            }
        }
    }
    report.elapsed = start.elapsed();
    report
}

// --------------------------------------------------------------- invariants

fn small_problem(seed: u64, m: usize, d: usize) -> (Dataset, TrainConfig) {
    let mut rng = rng_from_seed(seed);
    let x = uniform_matrix(m, d, 0.0, 1.0, &mut rng);
    let labels = (0..m)
        .map(|i| usize::from(x[(i, 0)] + 0.5 * x[(i, 1 % d)] > 0.75))
        .collect();
    let ds = Dataset::classification("invariants", x, labels).unwrap();
    let mut cfg = TrainConfig::for_dataset(&ds);
    cfg.steps = 60;
    cfg.batch_size = 16;
    cfg.attention.n_e = 8;
    cfg.attention.hidden_width = 4;
    cfg.learner = LearnerConfig::classifier(d, 16, 2);
    cfg.seed = seed;
    (ds, cfg)
}

pub fn invariant_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = rng_from_seed(seed);

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (p, n) = (rng.random_range(-800.0..800.0), rng.random_range(-800.0..800.0));
        worst = worst.max((two_logit_softmax(p, n) + two_logit_softmax(n, p) - 1.0).abs());
    }
    checks.push(Check::new("two-logit softmax sums to one", worst <= 1e-12, format!("max deviation {worst:e}")));

    let (ds, cfg) = small_problem(seed, 97, 5);
    let trained = train_afs(&ds, &cfg).unwrap();
    let mut a_ok = true;
    let mut a_range = (f64::INFINITY, f64::NEG_INFINITY);
    for params in [&AttentionParams::init(cfg.attention, seed).unwrap(), &trained.attention] {
        let a = params.forward(ds.features()).unwrap();
        for &v in a.attention().as_slice() {
            a_ok &= v > 0.0 && v < 1.0;
            a_range = (a_range.0.min(v), a_range.1.max(v));
        }
    }
    checks.push(Check::new(
        "attention entries in (0,1)",
        a_ok,
        format!("observed range [{:.6}, {:.6}]", a_range.0, a_range.1),
    ));

    let a = trained.attention.forward(ds.features()).unwrap();
    let a = a.attention();
    let mut dev = 0.0f64;
    let mut in_unit = true;
    for (k, &s) in trained.weights().as_slice().iter().enumerate() {
        let mean = (0..a.rows()).map(|i| a[(i, k)]).sum::<f64>() / a.rows() as f64;
        dev = dev.max((mean - s).abs());
        in_unit &= (0.0..=1.0).contains(&s);
    }
    checks.push(Check::new(
        "feature weights are column means in [0,1]",
        in_unit && dev <= 1e-12,
        format!("max deviation from column mean {dev:e}"),
    ));

    let ones = Matrix::filled(ds.len(), ds.feature_count(), 1.0);
    let g = weight_features(ds.features(), &ones).unwrap();
    checks.push(Check::new("G = X when A = 1", &g == ds.features(), "bitwise comparison"));

    let reference = compute_dataset_weights(ds.features(), &trained.attention, ds.len()).unwrap();
    let mut part_dev = 0.0f64;
    for bs in [1, 2, 7, 13, 50] {
        let w = compute_dataset_weights(ds.features(), &trained.attention, bs).unwrap();
        for (x, y) in w.as_slice().iter().zip(reference.as_slice()) {
            part_dev = part_dev.max((x - y).abs());
        }
    }
    checks.push(Check::new(
        "dataset weights independent of batch partition",
        part_dev <= 1e-12,
        format!("max deviation {part_dev:e} over batch sizes 1,2,7,13,50"),
    ));

    let mut attention = AttentionParams::init(cfg.attention, seed).unwrap();
    let mut learner = LearnerParams::init(cfg.learner.clone(), seed + 1).unwrap();
    let before: Vec<Matrix> = learner.params().iter().map(|p| p.value().clone()).collect();
    set_frozen(&mut learner, true);
    let adam = AdamConfig::default();
    for step in 1..=100u64 {
        joint_gradients(&mut attention, &mut learner, ds.features(), ds.targets(), 1e-4).unwrap();
        adam_step(attention.params_mut().into_iter().chain(learner.params_mut()), &adam, step).unwrap();
    }
    let frozen_ok = learner.params().iter().zip(&before).all(|(p, b)| p.value() == b);
    checks.push(Check::new("frozen learner is bit-invariant", frozen_ok, "100 joint Adam steps"));

    let again = train_afs(&ds, &cfg).unwrap();
    let csv_a = weights_csv(trained.weights().as_slice(), "afs").unwrap();
    let csv_b = weights_csv(again.weights().as_slice(), "afs").unwrap();
    checks.push(Check::new(
        "same seed gives byte-identical weights CSV",
        csv_a == csv_b,
        format!("{} bytes", csv_a.len()),
    ));
    checks
}

// ------------------------------------------------------------------ oracles

/// Fisher score straight from its definition, one feature at a time.
pub fn fisher_oracle(x: &Matrix, labels: &[usize]) -> Vec<f64> {
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    (0..x.cols())
        .map(|k| {
            let col: Vec<f64> = (0..x.rows()).map(|i| x[(i, k)]).collect();
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for c in 0..classes {
                let vals: Vec<f64> = col.iter().zip(labels).filter(|(_, &y)| y == c).map(|(v, _)| *v).collect();
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                num += n * (mean - mu).powi(2);
                den += n * var;
            }
            num / (den + 1e-12)
        })
        .collect()
}

/// ReliefF by exhaustive trace: every instance visited in index order,
/// neighbours found by fully sorting all candidates by (distance, index).
/// Accumulation follows the same per-feature order as the definition:
/// hits first, then other classes in ascending label order.
pub fn relieff_oracle(x: &Matrix, labels: &[usize], k: usize) -> Vec<f64> {
    let (m, d) = (x.rows(), x.cols());
    let mut xn = vec![vec![0.0; d]; m];
    for f in 0..d {
        let col: Vec<f64> = (0..m).map(|i| x[(i, f)]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..m {
            xn[i][f] = if hi > lo { (col[i] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    let classes = labels.iter().max().unwrap() + 1;
    let prior = |c: usize| labels.iter().filter(|&&y| y == c).count() as f64 / m as f64;
    let scale = (m * k) as f64;
    let dist = |a: usize, b: usize| -> f64 { (0..d).map(|f| (xn[a][f] - xn[b][f]).abs()).sum() };
    let mut w = vec![0.0; d];
    for r in 0..m {
        let neighbours = |c: usize| -> Vec<usize> {
            let mut all: Vec<usize> = (0..m).filter(|&j| j != r && labels[j] == c).collect();
            all.sort_by(|&a, &b| dist(r, a).total_cmp(&dist(r, b)).then(a.cmp(&b)));
            all.truncate(k);
            all
        };
        for h in neighbours(labels[r]) {
            for f in 0..d {
                w[f] -= (xn[r][f] - xn[h][f]).abs() / scale;
            }
        }
        for c in 0..classes {
            if c == labels[r] || prior(c) == 0.0 {
                continue;
            }
            let coef = prior(c) / (1.0 - prior(labels[r]));
            for miss in neighbours(c) {
                for f in 0..d {
                    w[f] += coef * ((xn[r][f] - xn[miss][f]).abs() / scale);
                }
            }
        }
    }
    w
}

/// Empirical SNR in dB of the noise `awgn_noise` draws for `features`.
pub fn empirical_snr_db(features: &Matrix, snr_db: f64, seed: u64) -> f64 {
    let noise = awgn_noise(features, snr_db, seed).unwrap();
    let signal = features.as_slice().iter().map(|v| v * v).sum::<f64>() / features.len() as f64;
    let power = noise.as_slice().iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    10.0 * (signal / power).log10()
}

fn idx_round_trip() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    let mut bytes = Vec::new();
    for v in [0x0803u32, 2, 2, 2] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend_from_slice(&[0, 255, 128, 64, 10, 20, 30, 40]);
    let mut label_bytes = Vec::new();
    for v in [0x0801u32, 2] {
        label_bytes.extend_from_slice(&v.to_be_bytes());
    }
    label_bytes.extend_from_slice(&[3, 7]);
    std::fs::write(&img, &bytes).map_err(|e| e.to_string())?;
    std::fs::write(&lab, &label_bytes).map_err(|e| e.to_string())?;

    let (ds, shape) = load_idx(&img, &lab).map_err(|e| e.to_string())?;
    if shape != (IdxImages { rows: 2, cols: 2 }) {
        return Err(format!("shape {shape:?}"));
    }
    let expected = [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0];
    if ds.features().row(0) != expected {
        return Err(format!("first image {:?}", ds.features().row(0)));
    }
    if ds.labels() != Some(&[3, 7][..]) {
        return Err(format!("labels {:?}", ds.labels()));
    }
    let (img2, lab2) = (dir.path().join("img2"), dir.path().join("lab2"));
    save_idx(&ds, shape, &img2, &lab2).map_err(|e| e.to_string())?;
    if std::fs::read(&img2).unwrap() != bytes || std::fs::read(&lab2).unwrap() != label_bytes {
        return Err("re-encoded bytes differ".into());
    }
    Ok(())
}

/// `snr_source` supplies MNIST-sized data for the SNR check.
pub fn oracle_suite(seed: u64, snr_source: &Matrix) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = rng_from_seed(seed);

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=20);
        let d = rng.random_range(1..=6);
        let classes = rng.random_range(2..=4).min(m);
        let x = uniform_matrix(m, d, -3.0, 3.0, &mut rng);
        let mut labels: Vec<usize> = (0..m).map(|i| i % classes).collect();
        labels.shuffle(&mut rng);
        let got = fisher_score(&x, &labels).unwrap().w;
        for (g, o) in got.iter().zip(fisher_oracle(&x, &labels)) {
            worst = worst.max((g - o).abs() / o.abs().max(1.0));
        }
    }
    checks.push(Check::new(
        "fisher score matches brute force",
        worst <= 1e-9,
        format!("max error {worst:e} over 200 instances (relative above 1)"),
    ));

    let mut mismatches = 0;
    let mut instances = 0;
    while instances < 200 {
        let m = rng.random_range(4..=10);
        let d = rng.random_range(1..=5);
        let classes = rng.random_range(2..=3);
        let k = rng.random_range(1..=2);
        let x = uniform_matrix(m, d, 0.0, 1.0, &mut rng);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        // every class present needs k + 1 members
        let ok = (0..classes).all(|c| {
            let n = labels.iter().filter(|&&y| y == c).count();
            n == 0 || n > k
        }) && (0..classes).filter(|c| labels.contains(c)).count() >= 2;
        if !ok {
            continue;
        }
        instances += 1;
        let cfg = ReliefConfig {
            k_neighbors: k,
            ..ReliefConfig::default()
        };
        if relieff(&x, &labels, &cfg).unwrap().w != relieff_oracle(&x, &labels, k) {
            mismatches += 1;
        }
    }
    checks.push(Check::new(
        "relieff equals exhaustive trace",
        mismatches == 0,
        format!("{mismatches} of {instances} instances differ"),
    ));

    let mut endpoints = true;
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let z = min_max_normalize(&w);
        let (imin, imax) = (
            (0..n).min_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap(),
            (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap(),
        );
        endpoints &= z[imin] == 0.0 && z[imax] == 1.0 && z.iter().all(|v| (0.0..=1.0).contains(v));
        endpoints &= (0..n).all(|i| (0..n).all(|j| (w[i] < w[j]) <= (z[i] <= z[j])));
    }
    endpoints &= min_max_normalize(&[2.5; 4]) == vec![0.5; 4];
    checks.push(Check::new("min-max normalisation endpoints", endpoints, "min → 0, max → 1, constant → 0.5"));

    let measured = empirical_snr_db(snr_source, 9.5, seed);
    checks.push(Check::new(
        "AWGN empirical SNR",
        (measured - 9.5).abs() <= 0.5,
        format!("target 9.5 dB, measured {measured:.4} dB on {}x{}", snr_source.rows(), snr_source.cols()),
    ));

    let mut partitions = true;
    for _ in 0..100 {
        let m = rng.random_range(3..80);
        let folds = rng.random_range(2..=m.min(6));
        let repeats = rng.random_range(1..=3);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..3)).collect();
        let plan = kfold_splits(m, folds, repeats, rng.random(), Some(&labels)).unwrap();
        for r in 0..repeats {
            let mut count = vec![0; m];
            let cells: Vec<_> = plan.cells.iter().filter(|c| c.repeat == r).collect();
            partitions &= cells.len() == folds;
            for c in &cells {
                partitions &= c.train.len() + c.test.len() == m && !c.test.is_empty();
                partitions &= c.test.iter().all(|i| !c.train.contains(i));
                c.test.iter().for_each(|&i| count[i] += 1);
            }
            partitions &= count.iter().all(|&n| n == 1);
        }
    }
    checks.push(Check::new("k-fold splits partition the samples", partitions, "100 random plans"));

    let idx = idx_round_trip();
    checks.push(Check::new(
        "IDX round trip on a hand-built file",
        idx.is_ok(),
        idx.err().unwrap_or_else(|| "2 images of 2x2".into()),
    ));
    checks
}

/// MNIST-sized stand-in (60000 × 784) with pixel-like values.
pub fn synthetic_mnist_sized(seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let data = (0..60_000 * 784)
        .map(|_| if rng.random::<f64>() < 0.8 { 0.0 } else { rng.random::<f64>() })
        .collect();
    Matrix::from_vec(60_000, 784, data).unwrap()
}
