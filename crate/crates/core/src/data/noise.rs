//! Synthetic n-MNIST-style corruptions: additive white Gaussian noise,
//! linear motion blur, and reduced contrast followed by AWGN.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::init::rng_from_seed;
use crate::nn::Matrix;

/// Parameters of a synthesized corruption, recorded next to derived datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "noise", rename_all = "lowercase")]
pub enum NoiseSpec {
    Awgn {
        snr_db: f64,
        seed: u64,
    },
    #[serde(rename = "mb")]
    MotionBlur {
        length: usize,
        angle_deg: f64,
    },
    #[serde(rename = "rcawgn")]
    RcAwgn {
        contrast: f64,
        snr_db: f64,
        seed: u64,
    },
}

impl NoiseSpec {
    pub fn apply(&self, dataset: &Dataset, image_rows: usize, image_cols: usize) -> Result<Dataset> {
        match *self {
            NoiseSpec::Awgn { snr_db, seed } => synthesize_awgn(dataset, snr_db, seed),
            NoiseSpec::MotionBlur { length, angle_deg } => {
                synthesize_motion_blur(dataset, length, angle_deg, image_rows, image_cols)
            }
            NoiseSpec::RcAwgn { contrast, snr_db, seed } => synthesize_rc_awgn(dataset, contrast, snr_db, seed),
        }
    }
}

/// The zero-mean Gaussian noise that [`synthesize_awgn`] adds, before
/// clamping. Its variance is `mean(x²) / 10^(snr_db/10)`.
pub fn awgn_noise(features: &Matrix, snr_db: f64, seed: u64) -> Result<Matrix> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::contract(format!("SNR {snr_db} dB is not usable")));
    }
    let mut noise = Matrix::zeros(features.rows(), features.cols());
    if snr_db == f64::INFINITY || features.is_empty() {
        return Ok(noise);
    }
    let signal_power = features.sum_of_squares() / features.len() as f64;
    let variance = signal_power / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::contract(format!("noise distribution: {e}")))?;
    let mut rng = rng_from_seed(seed);
    for v in noise.as_mut_slice() {
        *v = normal.sample(&mut rng);
    }
    Ok(noise)
}

pub fn synthesize_awgn(dataset: &Dataset, snr_db: f64, seed: u64) -> Result<Dataset> {
    let noise = awgn_noise(dataset.features(), snr_db, seed)?;
    if snr_db == f64::INFINITY {
        return Ok(dataset.clone());
    }
    let mut noisy = dataset.features().add(&noise)?;
    noisy.map_inplace(|v| v.clamp(0.0, 1.0));
    dataset.with_features(noisy)
}

/// Kernel taps `(d_row, d_col, weight)` of a linear motion of `length`
/// pixels at `angle_deg` (counter-clockwise from the positive column axis),
/// centred on the origin. Weights sum to one.
pub fn motion_blur_kernel(length: usize, angle_deg: f64) -> Result<Vec<(isize, isize, f64)>> {
    if length == 0 || !angle_deg.is_finite() {
        return Err(Error::contract("motion blur needs length ≥ 1 and a finite angle"));
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let centre = (length as f64 - 1.0) / 2.0;
    let mut taps: Vec<(isize, isize, f64)> = Vec::new();
    for t in 0..length {
        let s = t as f64 - centre;
        let (dr, dc) = ((-s * sin).round() as isize, (s * cos).round() as isize);
        match taps.iter_mut().find(|(r, c, _)| (*r, *c) == (dr, dc)) {
            Some(tap) => tap.2 += 1.0 / length as f64,
            None => taps.push((dr, dc, 1.0 / length as f64)),
        }
    }
    Ok(taps)
}

/// Blurs every image with [`motion_blur_kernel`]; pixels outside the image
/// count as zero.
pub fn synthesize_motion_blur(
    dataset: &Dataset,
    kernel_length: usize,
    angle_deg: f64,
    image_rows: usize,
    image_cols: usize,
) -> Result<Dataset> {
    if image_rows * image_cols != dataset.feature_count() {
        return Err(Error::Dimension {
            op: "synthesize_motion_blur",
            left: (image_rows, image_cols),
            right: (dataset.len(), dataset.feature_count()),
        });
    }
    let taps = motion_blur_kernel(kernel_length, angle_deg)?;
    if taps.len() == 1 {
        return Ok(dataset.clone());
    }
    let src = dataset.features();
    let mut out = Matrix::zeros(src.rows(), src.cols());
    let (rows, cols) = (image_rows as isize, image_cols as isize);
    for i in 0..src.rows() {
        let (img, dst) = (src.row(i), out.row_mut(i));
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for &(dr, dc, w) in &taps {
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..rows).contains(&rr) && (0..cols).contains(&cc) {
                        acc += w * img[(rr * cols + cc) as usize];
                    }
                }
                dst[(r * cols + c) as usize] = acc.clamp(0.0, 1.0);
            }
        }
    }
    dataset.with_features(out)
}

/// `x → 0.5 + contrast·(x − 0.5)` followed by AWGN at `snr_db`.
pub fn synthesize_rc_awgn(dataset: &Dataset, contrast_factor: f64, snr_db: f64, seed: u64) -> Result<Dataset> {
    if !(contrast_factor > 0.0 && contrast_factor <= 1.0) {
        return Err(Error::contract(format!(
            "contrast factor {contrast_factor} outside (0, 1]"
        )));
    }
    let reduced = if contrast_factor == 1.0 {
        dataset.clone()
    } else {
        dataset.with_features(dataset.features().map(|v| 0.5 + contrast_factor * (v - 0.5)))?
    };
    synthesize_awgn(&reduced, snr_db, seed)
}
