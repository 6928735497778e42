//! The attention module.
//!
//! A shared extraction layer `E = tanh(X·W1 + b1)` feeds `d` small
//! per-feature networks. Network `k` maps `E` through `L` tanh hidden layers
//! to a pair of logits `(p_k, n_k)` ("selected" / "unselected"); the
//! selection probability is `a_k = exp(p_k) / (exp(p_k) + exp(n_k))`.
//! Averaging `a_k` over a dataset gives the feature weight `s_k`.
//!
//! The per-feature networks all share one architecture, so their parameters
//! are stored as block tensors and evaluated together:
//!
//! * hidden layer 0: `N_E × (d·H)`, column block `k` belongs to feature `k`;
//! * hidden layer `l ≥ 1`: `d × (H·H)`, row `k` is feature `k`'s `H × H`
//!   matrix in row-major `[input][output]` order;
//! * output heads `wp`, `wn`: `d × last_width`, biases `1 × d`.
//!
//! [`attention_logits`] evaluates a single feature network directly from
//! its unpacked parameters and serves as the reference for the block path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::{rng_from_seed, truncated_normal, INIT_STDDEV};
use crate::nn::matrix::{add_matmul_tn, matmul, matmul_nt, Matrix};
use crate::nn::ops::two_logit_softmax;
use crate::nn::param::{ParamKind, ParamTensor, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    /// Number of input features `d`. Usually filled in from the dataset.
    pub input_dim: usize,
    /// Width of the shared extraction layer `E`.
    pub n_e: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            input_dim: 0,
            n_e: 128,
            hidden_layers: 1,
            hidden_width: 8,
        }
    }
}

impl AttentionConfig {
    pub fn with_input_dim(mut self, d: usize) -> Self {
        self.input_dim = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::contract("attention input_dim must be at least 1"));
        }
        if self.n_e == 0 {
            return Err(Error::contract("attention n_e must be at least 1"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::contract("attention hidden_width must be at least 1"));
        }
        Ok(())
    }

    /// Width feeding the output heads.
    pub fn last_width(&self) -> usize {
        if self.hidden_layers == 0 {
            self.n_e
        } else {
            self.hidden_width
        }
    }
}

/// Selection probabilities `a_i^k`, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix(Matrix);

impl AttentionMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::contract(format!("attention entry {v} outside (0, 1)")));
        }
        Ok(AttentionMatrix(values))
    }

    pub fn values(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Per-feature weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights(Vec<f64>);

impl FeatureWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("feature weight {v} outside [0, 1]")));
        }
        Ok(FeatureWeights(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Unpacked parameters of one feature's attention network.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet {
    /// `(weights in × out, bias)` per hidden layer.
    pub hidden: Vec<(Matrix, Vec<f64>)>,
    pub wp: Vec<f64>,
    pub bp: f64,
    pub wn: Vec<f64>,
    pub bn: f64,
}

#[derive(Clone, Debug)]
pub struct AttentionParams {
    config: AttentionConfig,
    pub(crate) w1: ParamTensor,
    pub(crate) b1: ParamTensor,
    pub(crate) hidden: Vec<(ParamTensor, ParamTensor)>,
    pub(crate) wp: ParamTensor,
    pub(crate) bp: ParamTensor,
    pub(crate) wn: ParamTensor,
    pub(crate) bn: ParamTensor,
}

fn hidden_shape(config: &AttentionConfig, layer: usize) -> (usize, usize) {
    let (d, h) = (config.input_dim, config.hidden_width);
    if layer == 0 {
        (config.n_e, d * h)
    } else {
        (d, h * h)
    }
}

impl AttentionParams {
    /// All-zero parameters with the right shapes.
    pub fn zeros(config: AttentionConfig) -> Result<Self> {
        config.validate()?;
        let (d, ne, h) = (config.input_dim, config.n_e, config.hidden_width);
        let hidden = (0..config.hidden_layers)
            .map(|l| {
                let (r, c) = hidden_shape(&config, l);
                (
                    ParamTensor::new(format!("attention.hidden{l}.w"), ParamKind::Weight, Matrix::zeros(r, c)),
                    ParamTensor::new(format!("attention.hidden{l}.b"), ParamKind::Bias, Matrix::zeros(1, d * h)),
                )
            })
            .collect();
        let last = config.last_width();
        Ok(AttentionParams {
            config,
            w1: ParamTensor::new("attention.w1", ParamKind::Weight, Matrix::zeros(d, ne)),
            b1: ParamTensor::new("attention.b1", ParamKind::Bias, Matrix::zeros(1, ne)),
            hidden,
            wp: ParamTensor::new("attention.wp", ParamKind::Weight, Matrix::zeros(d, last)),
            bp: ParamTensor::new("attention.bp", ParamKind::Bias, Matrix::zeros(1, d)),
            wn: ParamTensor::new("attention.wn", ParamKind::Weight, Matrix::zeros(d, last)),
            bn: ParamTensor::new("attention.bn", ParamKind::Bias, Matrix::zeros(1, d)),
        })
    }

    /// Every tensor, biases included, drawn from the truncated normal in
    /// declaration order from a single seeded stream.
    pub fn init(config: AttentionConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng_from_seed(seed);
        for p in params.params_mut() {
            let (r, c) = p.shape();
            p.value = truncated_normal(r, c, INIT_STDDEV, &mut rng);
        }
        Ok(params)
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// Sets the shared extraction layer.
    pub fn set_extraction(&mut self, w1: Matrix, b1: &[f64]) -> Result<()> {
        self.w1.set_value(w1)?;
        self.b1.set_value(Matrix::row_vector(b1))
    }

    pub fn feature_net(&self, k: usize) -> Result<FeatureNet> {
        self.check_feature(k)?;
        let h = self.config.hidden_width;
        let hidden = self
            .hidden
            .iter()
            .enumerate()
            .map(|(l, (w, b))| {
                let bias = b.value.as_slice()[k * h..(k + 1) * h].to_vec();
                let weights = if l == 0 {
                    w.value.select_columns(&(k * h..(k + 1) * h).collect::<Vec<_>>())
                } else {
                    Matrix::from_vec(h, h, w.value.row(k).to_vec()).expect("h×h block")
                };
                (weights, bias)
            })
            .collect();
        Ok(FeatureNet {
            hidden,
            wp: self.wp.value.row(k).to_vec(),
            bp: self.bp.value.as_slice()[k],
            wn: self.wn.value.row(k).to_vec(),
            bn: self.bn.value.as_slice()[k],
        })
    }

    pub fn set_feature_net(&mut self, k: usize, net: &FeatureNet) -> Result<()> {
        self.check_feature(k)?;
        let h = self.config.hidden_width;
        let last = self.config.last_width();
        if net.hidden.len() != self.hidden.len() || net.wp.len() != last || net.wn.len() != last {
            return Err(Error::contract(format!(
                "feature net architecture does not match {:?}",
                self.config
            )));
        }
        for (l, ((w, b), (nw, nb))) in self.hidden.iter_mut().zip(&net.hidden).enumerate() {
            let expected = if l == 0 { (self.config.n_e, h) } else { (h, h) };
            if nw.shape() != expected || nb.len() != h {
                return Err(Error::ShapeMismatch {
                    name: w.name().to_string(),
                    expected,
                    found: nw.shape(),
                });
            }
            b.value.as_mut_slice()[k * h..(k + 1) * h].copy_from_slice(nb);
            if l == 0 {
                for r in 0..self.config.n_e {
                    w.value.row_mut(r)[k * h..(k + 1) * h].copy_from_slice(nw.row(r));
                }
            } else {
                w.value.row_mut(k).copy_from_slice(nw.as_slice());
            }
        }
        self.wp.value.row_mut(k).copy_from_slice(&net.wp);
        self.wn.value.row_mut(k).copy_from_slice(&net.wn);
        self.bp.value.as_mut_slice()[k] = net.bp;
        self.bn.value.as_mut_slice()[k] = net.bn;
        Ok(())
    }

    fn check_feature(&self, k: usize) -> Result<()> {
        if k >= self.config.input_dim {
            return Err(Error::Index {
                what: "feature",
                index: k,
                len: self.config.input_dim,
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::Dimension {
                op: "attention",
                left: batch.shape(),
                right: self.w1.shape(),
            });
        }
        Ok(())
    }
}

impl Parameters for AttentionParams {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.w1, &self.b1];
        for (w, b) in &self.hidden {
            out.push(w);
            out.push(b);
        }
        out.extend([&self.wp, &self.bp, &self.wn, &self.bn]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.w1, &mut self.b1];
        for (w, b) in &mut self.hidden {
            out.push(w);
            out.push(b);
        }
        out.extend([&mut self.wp, &mut self.bp, &mut self.wn, &mut self.bn]);
        out
    }
}

/// `tanh(batch · W1 + b1)`.
pub fn extract_e(batch: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    params.check_batch(batch)?;
    let mut e = matmul(batch, &params.w1.value)?;
    e.add_row_inplace(params.b1.value.as_slice())?;
    e.map_inplace(f64::tanh);
    Ok(e)
}

/// Selected / unselected logits of feature `k` for every row of `e`,
/// evaluated directly from that feature's own network.
pub fn attention_logits(e: &Matrix, k: usize, params: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let net = params.feature_net(k)?;
    if e.cols() != params.config.n_e {
        return Err(Error::Dimension {
            op: "attention_logits",
            left: e.shape(),
            right: (params.config.n_e, params.config.last_width()),
        });
    }
    let mut p = Vec::with_capacity(e.rows());
    let mut n = Vec::with_capacity(e.rows());
    for i in 0..e.rows() {
        let mut h = e.row(i).to_vec();
        for (w, b) in &net.hidden {
            h = (0..w.cols())
                .map(|j| (b[j] + (0..w.rows()).map(|t| h[t] * w[(t, j)]).sum::<f64>()).tanh())
                .collect();
        }
        p.push(net.bp + dot(&h, &net.wp));
        n.push(net.bn + dot(&h, &net.wn));
    }
    Ok((p, n))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediate values kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    e: Matrix,
    hidden: Vec<Matrix>,
    a: Matrix,
}

impl AttentionCache {
    pub fn attention(&self) -> &Matrix {
        &self.a
    }
}

impl AttentionParams {
    /// Block forward pass over all features, keeping activations.
    pub fn forward(&self, batch: &Matrix) -> Result<AttentionCache> {
        let e = extract_e(batch, self)?;
        let (d, h) = (self.config.input_dim, self.config.hidden_width);
        let m = batch.rows();

        let mut hidden: Vec<Matrix> = Vec::with_capacity(self.hidden.len());
        for (l, (w, b)) in self.hidden.iter().enumerate() {
            let mut z = if l == 0 {
                matmul(&e, &w.value)?
            } else {
                let prev = &hidden[l - 1];
                let mut z = Matrix::zeros(m, d * h);
                for i in 0..m {
                    let (src, dst) = (prev.row(i), z.row_mut(i));
                    for k in 0..d {
                        let block = w.value.row(k);
                        let x = &src[k * h..(k + 1) * h];
                        let out = &mut dst[k * h..(k + 1) * h];
                        for (t, &xt) in x.iter().enumerate() {
                            let wrow = &block[t * h..(t + 1) * h];
                            for (o, &wv) in out.iter_mut().zip(wrow) {
                                *o += xt * wv;
                            }
                        }
                    }
                }
                z
            };
            z.add_row_inplace(b.value.as_slice())?;
            z.map_inplace(f64::tanh);
            hidden.push(z);
        }

        let (p, n) = match hidden.last() {
            None => {
                let mut p = matmul_nt(&e, &self.wp.value)?;
                let mut n = matmul_nt(&e, &self.wn.value)?;
                p.add_row_inplace(self.bp.value.as_slice())?;
                n.add_row_inplace(self.bn.value.as_slice())?;
                (p, n)
            }
            Some(top) => {
                let mut p = Matrix::zeros(m, d);
                let mut n = Matrix::zeros(m, d);
                let (bp, bn) = (self.bp.value.as_slice(), self.bn.value.as_slice());
                for i in 0..m {
                    let src = top.row(i);
                    let (prow, nrow) = (p.row_mut(i), n.row_mut(i));
                    for k in 0..d {
                        let hk = &src[k * h..(k + 1) * h];
                        prow[k] = bp[k] + dot(hk, self.wp.value.row(k));
                    }
                    for k in 0..d {
                        let hk = &src[k * h..(k + 1) * h];
                        nrow[k] = bn[k] + dot(hk, self.wn.value.row(k));
                    }
                }
                (p, n)
            }
        };

        let mut a = p;
        for (av, nv) in a.as_mut_slice().iter_mut().zip(n.as_slice()) {
            *av = two_logit_softmax(*av, *nv);
        }
        Ok(AttentionCache { e, hidden, a })
    }

    /// Accumulates parameter gradients given `∂L/∂A`.
    pub fn backward(&mut self, batch: &Matrix, cache: &AttentionCache, grad_a: &Matrix) -> Result<()> {
        cache.a.check_same_shape(grad_a, "attention backward")?;
        let (d, h) = (self.config.input_dim, self.config.hidden_width);
        let m = batch.rows();

        // da/dp = a(1-a) = -da/dn
        let mut dp = grad_a.clone();
        for (g, &a) in dp.as_mut_slice().iter_mut().zip(cache.a.as_slice()) {
            *g *= a * (1.0 - a);
        }
        let dp_sums = dp.column_sums();
        for (gp, (gn, s)) in self
            .bp
            .grad
            .as_mut_slice()
            .iter_mut()
            .zip(self.bn.grad.as_mut_slice().iter_mut().zip(&dp_sums))
        {
            *gp += s;
            *gn -= s;
        }

        let mut d_e = match cache.hidden.last() {
            None => {
                add_matmul_tn(&mut self.wp.grad, &dp, &cache.e)?;
                let neg = dp.scaled(-1.0);
                add_matmul_tn(&mut self.wn.grad, &neg, &cache.e)?;
                let diff = self.wp.value.add(&self.wn.value.scaled(-1.0))?;
                matmul(&dp, &diff)?
            }
            Some(top) => {
                let mut d_h = Matrix::zeros(m, d * h);
                for i in 0..m {
                    let src = top.row(i);
                    let drow = dp.row(i);
                    let dst = d_h.row_mut(i);
                    for k in 0..d {
                        let g = drow[k];
                        if g == 0.0 {
                            continue;
                        }
                        let hk = &src[k * h..(k + 1) * h];
                        let gwp = &mut self.wp.grad.row_mut(k)[..];
                        for (gw, &hv) in gwp.iter_mut().zip(hk) {
                            *gw += g * hv;
                        }
                        let gwn = &mut self.wn.grad.row_mut(k)[..];
                        for (gw, &hv) in gwn.iter_mut().zip(hk) {
                            *gw -= g * hv;
                        }
                        let (wp, wn) = (self.wp.value.row(k), self.wn.value.row(k));
                        for (j, out) in dst[k * h..(k + 1) * h].iter_mut().enumerate() {
                            *out = g * (wp[j] - wn[j]);
                        }
                    }
                }
                self.backward_hidden(cache, d_h)?
            }
        };

        // through tanh of E
        for (g, &ev) in d_e.as_mut_slice().iter_mut().zip(cache.e.as_slice()) {
            *g *= 1.0 - ev * ev;
        }
        add_matmul_tn(&mut self.w1.grad, batch, &d_e)?;
        for (gb, s) in self.b1.grad.as_mut_slice().iter_mut().zip(d_e.column_sums()) {
            *gb += s;
        }
        Ok(())
    }

    /// Reverse pass through the hidden stack; returns `∂L/∂E`.
    fn backward_hidden(&mut self, cache: &AttentionCache, mut d_h: Matrix) -> Result<Matrix> {
        let (d, h) = (self.config.input_dim, self.config.hidden_width);
        for l in (0..self.hidden.len()).rev() {
            let out = &cache.hidden[l];
            for (g, &hv) in d_h.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *g *= 1.0 - hv * hv;
            }
            let (w, b) = &mut self.hidden[l];
            for (gb, s) in b.grad.as_mut_slice().iter_mut().zip(d_h.column_sums()) {
                *gb += s;
            }
            if l == 0 {
                add_matmul_tn(&mut w.grad, &cache.e, &d_h)?;
                return matmul_nt(&d_h, &w.value);
            }
            let input = &cache.hidden[l - 1];
            let m = input.rows();
            let mut d_in = Matrix::zeros(m, d * h);
            for i in 0..m {
                let (x, dz) = (input.row(i), d_h.row(i));
                let dst = d_in.row_mut(i);
                for k in 0..d {
                    let xk = &x[k * h..(k + 1) * h];
                    let dzk = &dz[k * h..(k + 1) * h];
                    let wk = w.value.row(k);
                    let gk = w.grad.row_mut(k);
                    for t in 0..h {
                        let (wrow, grow) = (&wk[t * h..(t + 1) * h], &mut gk[t * h..(t + 1) * h]);
                        let mut acc = 0.0;
                        for j in 0..h {
                            grow[j] += xk[t] * dzk[j];
                            acc += wrow[j] * dzk[j];
                        }
                        dst[k * h + t] = acc;
                    }
                }
            }
            d_h = d_in;
        }
        unreachable!("hidden stack is non-empty when called")
    }
}

/// `A[i][k] = softmax(p_i^k, n_i^k)` for a batch.
pub fn attention_forward(batch: &Matrix, params: &AttentionParams) -> Result<AttentionMatrix> {
    Ok(AttentionMatrix(params.forward(batch)?.a))
}

/// Column means of an attention matrix.
pub fn feature_weights(attention: &AttentionMatrix) -> Result<FeatureWeights> {
    let a = attention.values();
    if a.rows() == 0 {
        return Err(Error::contract("feature weights of an empty attention matrix"));
    }
    let m = a.rows() as f64;
    FeatureWeights::new(a.column_sums().into_iter().map(|s| s / m).collect())
}

/// Feature weights over a whole dataset, streamed in batches.
///
/// Column sums are accumulated with Neumaier compensation so the result does
/// not depend on how the rows are partitioned.
pub fn compute_dataset_weights(features: &Matrix, params: &AttentionParams, batch_size: usize) -> Result<FeatureWeights> {
    let m = features.rows();
    if m == 0 {
        return Err(Error::contract("feature weights of an empty dataset"));
    }
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    params.check_batch(features)?;
    let d = features.cols();
    let mut sum = vec![0.0f64; d];
    let mut comp = vec![0.0f64; d];
    let mut start = 0;
    while start < m {
        let end = (start + batch_size).min(m);
        let rows: Vec<usize> = (start..end).collect();
        let batch = features.select_rows(&rows);
        let a = params.forward(&batch)?.a;
        for i in 0..a.rows() {
            for ((s, c), &v) in sum.iter_mut().zip(comp.iter_mut()).zip(a.row(i)) {
                let t = *s + v;
                if s.abs() >= v.abs() {
                    *c += (*s - t) + v;
                } else {
                    *c += (v - t) + *s;
                }
                *s = t;
            }
        }
        start = end;
    }
    FeatureWeights::new(
        sum.iter()
            .zip(&comp)
            .map(|(s, c)| ((s + c) / m as f64).clamp(0.0, 1.0))
            .collect(),
    )
}
