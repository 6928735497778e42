use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::nn::matrix::Matrix;

/// Standard deviation used for every freshly initialised tensor.
pub const INIT_STDDEV: f64 = 0.1;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a master seed with a stream tag (splitmix64 finaliser), giving
/// independent but reproducible sub-seeds.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a short label into a seed tag.
pub fn tag(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Draws `N(0, stddev²)` values, redrawing anything outside `±2·stddev`.
pub fn truncated_normal<R: Rng + ?Sized>(rows: usize, cols: usize, stddev: f64, rng: &mut R) -> Matrix {
    let bound = 2.0 * stddev;
    let data = (0..rows * cols)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            let v = z * stddev;
            if v.abs() <= bound {
                break v;
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// Truncated normal with the default `0.1` standard deviation.
pub fn truncated_normal_init(rows: usize, cols: usize, seed: u64) -> Matrix {
    truncated_normal(rows, cols, INIT_STDDEV, &mut rng_from_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_are_within_two_sigma() {
        let m = truncated_normal_init(50, 40, 3);
        assert!(m.as_slice().iter().all(|v| v.abs() <= 0.2));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = truncated_normal_init(17, 9, 42);
        let b = truncated_normal_init(17, 9, 42);
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&truncated_normal_init(17, 9, 43)));
    }

    #[test]
    fn sample_moments_match_truncated_normal() {
        // The ±2σ truncated normal has std σ·sqrt(1 - 2·2φ(2)/(2Φ(2)-1)) ≈ 0.0880σ/0.1.
        let m = truncated_normal_init(1, 100_000, 11);
        let n = m.len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.005, "mean {mean}");
        let std = var.sqrt();
        assert!((0.08..=0.10).contains(&std), "std {std}");
    }

    #[test]
    fn derived_seeds_differ_per_tag() {
        assert_ne!(derive_seed(1, tag("a")), derive_seed(1, tag("b")));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
