//! Filter-method feature scores: Fisher score and ReliefF, plus the min-max
//! normalisation that turns either into attention pretraining targets.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::rng_from_seed;
use crate::nn::Matrix;

/// Guard added to the Fisher denominator so zero within-class variance
/// gives a huge but finite score.
pub const FISHER_VARIANCE_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineWeights {
    pub w: Vec<f64>,
    pub method: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Fisher,
    Relieff,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Fisher => "fisher",
            BaselineMethod::Relieff => "relieff",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fisher" => Ok(BaselineMethod::Fisher),
            "relieff" => Ok(BaselineMethod::Relieff),
            other => Err(Error::contract(format!("unknown base method `{other}`"))),
        }
    }
}

/// ReliefF hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliefConfig {
    pub k_neighbors: usize,
    /// Number of visited instances; `None` visits every instance.
    pub sample_count: Option<usize>,
    pub seed: u64,
}

impl Default for ReliefConfig {
    fn default() -> Self {
        ReliefConfig {
            k_neighbors: 5,
            sample_count: None,
            seed: 0,
        }
    }
}

fn class_groups(x: &Matrix, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    if labels.len() != x.rows() {
        return Err(Error::Dimension {
            op: "baseline",
            left: x.shape(),
            right: (labels.len(), 1),
        });
    }
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    let mut groups = vec![Vec::new(); c];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    Ok(groups)
}

/// Fisher score per feature:
/// `Σ_j n_j (μ_jk − μ_k)² / (Σ_j n_j σ²_jk + guard)` with population
/// variances.
pub fn fisher_score(x: &Matrix, labels: &[usize]) -> Result<BaselineWeights> {
    let groups = class_groups(x, labels)?;
    let present: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::contract("Fisher score needs at least two classes"));
    }
    let d = x.cols();
    let m = x.rows() as f64;
    let grand: Vec<f64> = x.column_sums().into_iter().map(|s| s / m).collect();

    let mut between = vec![0.0; d];
    let mut within = vec![0.0; d];
    for g in present {
        let n = g.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in g {
            for (mu, v) in mean.iter_mut().zip(x.row(i)) {
                *mu += v;
            }
        }
        mean.iter_mut().for_each(|mu| *mu /= n);
        let mut var = vec![0.0; d];
        for &i in g {
            for ((s, v), mu) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - mu) * (v - mu);
            }
        }
        for k in 0..d {
            between[k] += n * (mean[k] - grand[k]).powi(2);
            // n · (var_sum / n)
            within[k] += var[k];
        }
    }
    let w = between
        .iter()
        .zip(&within)
        .map(|(b, w)| b / (w + FISHER_VARIANCE_GUARD))
        .collect();
    Ok(BaselineWeights {
        w,
        method: "fisher".into(),
    })
}

/// Columns rescaled to `[0, 1]` by their range; constant columns become 0.
fn range_normalised(x: &Matrix) -> Matrix {
    let d = x.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..x.rows() {
        for (k, &v) in x.row(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (k, v) in out.row_mut(i).iter_mut().enumerate() {
            let range = hi[k] - lo[k];
            *v = if range > 0.0 { (*v - lo[k]) / range } else { 0.0 };
        }
    }
    out
}

#[inline]
fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `k` nearest members of `group` to `target` (excluding `target`), by
/// l1 distance then index.
fn nearest(target: usize, group: &[usize], k: usize, dist: &[f64]) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = group
        .iter()
        .filter(|&&j| j != target)
        .map(|&j| (dist[j], j))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if cand.len() > k {
        cand.select_nth_unstable_by(k, by);
        cand.truncate(k);
    }
    cand.sort_by(by);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// ReliefF with `k` nearest hits and, per other class, `k` nearest misses
/// under l1 distance on range-normalised features. Misses are weighted by
/// `P(C) / (1 − P(class(R)))`; every contribution is scaled by `1/(s·k)`.
pub fn relieff(x: &Matrix, labels: &[usize], config: &ReliefConfig) -> Result<BaselineWeights> {
    let groups = class_groups(x, labels)?;
    let (m, d, k) = (x.rows(), x.cols(), config.k_neighbors);
    if k == 0 {
        return Err(Error::contract("ReliefF needs k_neighbors ≥ 1"));
    }
    let present = groups.iter().filter(|g| !g.is_empty()).count();
    if present < 2 {
        return Err(Error::contract("ReliefF needs at least two classes"));
    }

    let visits: Vec<usize> = match config.sample_count {
        Some(s) if s < m => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng_from_seed(config.seed));
            order.truncate(s);
            order
        }
        _ => (0..m).collect(),
    };
    for &r in &visits {
        let own = labels[r];
        for (c, g) in groups.iter().enumerate() {
            let needed = if c == own { k + 1 } else { k };
            if !g.is_empty() && g.len() < needed {
                return Err(Error::contract(format!(
                    "class {c} has {} samples; ReliefF with k = {k} needs {needed}",
                    g.len()
                )));
            }
        }
    }

    let xn = range_normalised(x);
    if xn.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(BaselineWeights {
            w: vec![0.0; d],
            method: "relieff".into(),
        });
    }
    let priors: Vec<f64> = groups.iter().map(|g| g.len() as f64 / m as f64).collect();
    let scale = visits.len() as f64 * k as f64;

    let mut w = vec![0.0; d];
    let mut dist = vec![0.0; m];
    for &r in &visits {
        let row = xn.row(r);
        for (j, dj) in dist.iter_mut().enumerate() {
            *dj = l1(row, xn.row(j));
        }
        let own = labels[r];
        for h in nearest(r, &groups[own], k, &dist) {
            for ((wf, a), b) in w.iter_mut().zip(row).zip(xn.row(h)) {
                *wf -= (a - b).abs() / scale;
            }
        }
        for (c, g) in groups.iter().enumerate() {
            if c == own || g.is_empty() {
                continue;
            }
            let coef = priors[c] / (1.0 - priors[own]);
            for miss in nearest(r, g, k, &dist) {
                for ((wf, a), b) in w.iter_mut().zip(row).zip(xn.row(miss)) {
                    *wf += coef * ((a - b).abs() / scale);
                }
            }
        }
    }
    Ok(BaselineWeights {
        w,
        method: "relieff".into(),
    })
}

/// `(w − min) / (max − min)`; a constant vector maps to all `0.5`.
pub fn min_max_normalize(w: &[f64]) -> Vec<f64> {
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; w.len()];
    }
    let range = hi - lo;
    w.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
}
