//! Hybrid initialisation: score features with a filter method, min-max
//! normalise the scores into `W_fs`, pretrain the attention module so every
//! row of `A` regresses onto `W_fs`, then train jointly as usual.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{compute_dataset_weights, AttentionParams, FeatureWeights};
use crate::baselines::{fisher_score, min_max_normalize, relieff, BaselineMethod, BaselineWeights, ReliefConfig};
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::learner::LearnerParams;
use crate::nn::init::{derive_seed, tag};
use crate::nn::param::{adam_step, l2_penalty, l2_penalty_backward, AdamConfig, Parameters};
use crate::nn::Matrix;

use super::{train_afs_from, AfsResult, LoggedStep, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    /// Pretraining stops once a batch MSE falls below this value.
    pub mse_tolerance: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1000,
            batch_size: 100,
            lambda: 1e-4,
            mse_tolerance: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Logged `(step, batch MSE)` pairs.
    pub history: Vec<LoggedStep>,
    /// Optimizer steps actually taken.
    pub steps_run: usize,
    /// MSE of the last evaluated batch.
    pub final_mse: f64,
}

/// Batch MSE between `A` and `W_fs` broadcast to every row, averaged over
/// all `m·d` entries, and its gradient with respect to `A`.
fn target_mse(a: &Matrix, target: &[f64]) -> (f64, Matrix) {
    let n = a.len() as f64;
    let d = target.len();
    let mut grad = a.clone();
    let mut sum = 0.0;
    for (j, v) in grad.as_mut_slice().iter_mut().enumerate() {
        let diff = *v - target[j % d];
        sum += diff * diff;
        *v = 2.0 * diff / n;
    }
    (sum / n, grad)
}

/// Trains only the attention parameters so that every attention row
/// approaches `target`. The learner is not involved. Adam moments are reset
/// before the first step.
pub fn pretrain_attention(
    dataset: &Dataset,
    target: &FeatureWeights,
    mut params: AttentionParams,
    config: &PretrainConfig,
) -> Result<(AttentionParams, PretrainReport)> {
    if target.len() != dataset.feature_count() || params.input_dim() != dataset.feature_count() {
        return Err(Error::Dimension {
            op: "pretrain_attention",
            left: (params.input_dim(), target.len()),
            right: (dataset.len(), dataset.feature_count()),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    config.adam.validate()?;
    for p in params.params_mut() {
        p.reset_moments();
        p.zero_grad();
    }
    let mut report = PretrainReport {
        history: Vec::new(),
        steps_run: 0,
        final_mse: f64::NAN,
    };
    if config.steps == 0 {
        return Ok((params, report));
    }

    let w = target.as_slice();
    let mut batches = BatchStream::new(dataset.len(), config.batch_size, config.seed)?;
    let log_every = config.log_every.max(1);
    for step in 1..=config.steps {
        let idx = batches.next().expect("batch stream is endless");
        let x = dataset.features().select_rows(&idx);
        let cache = params.forward(&x)?;
        let (mse, grad_a) = target_mse(cache.attention(), w);
        report.final_mse = mse;
        if mse < config.mse_tolerance {
            report.history.push(LoggedStep { step, objective: mse });
            break;
        }
        let objective = mse + l2_penalty(params.params(), config.lambda);
        params.backward(&x, &cache, &grad_a)?;
        l2_penalty_backward(params.params_mut(), config.lambda);
        adam_step(params.params_mut(), &config.adam, step as u64)?;
        report.steps_run = step;
        if step % log_every == 0 || step == config.steps {
            report.history.push(LoggedStep { step, objective });
        }
    }
    Ok((params, report))
}

/// Output of [`hybrid_init_train`].
#[derive(Clone, Debug)]
pub struct HybridResult {
    /// Raw filter-method scores.
    pub base: BaselineWeights,
    /// `W_fs`: the min-max normalised scores used as pretraining targets.
    pub target: FeatureWeights,
    /// Dataset feature weights right after pretraining.
    pub pretrained: FeatureWeights,
    pub pretrain: PretrainReport,
    pub afs: AfsResult,
}

/// Filter-method scores for a classification dataset.
pub fn base_weights(dataset: &Dataset, method: BaselineMethod, relief: &ReliefConfig) -> Result<BaselineWeights> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::contract("filter methods need class labels"))?;
    match method {
        BaselineMethod::Fisher => fisher_score(dataset.features(), labels),
        BaselineMethod::Relieff => relieff(dataset.features(), labels, relief),
    }
}

/// The three-step hybrid pipeline. Attention starts from the same seeded
/// initialisation [`super::train_afs`] would use, so zero pretraining steps
/// reproduce `train_afs` exactly. `pretrain.seed` only drives pretraining
/// batch order.
pub fn hybrid_init_train(
    dataset: &Dataset,
    method: BaselineMethod,
    relief: &ReliefConfig,
    pretrain: &PretrainConfig,
    train: &TrainConfig,
) -> Result<HybridResult> {
    train.validate_for(dataset)?;
    let start = Instant::now();
    let base = base_weights(dataset, method, relief)?;
    let target = FeatureWeights::new(min_max_normalize(&base.w))?;

    let attention = AttentionParams::init(train.attention, train.attention_seed())?;
    let (attention, pretrain_report) = pretrain_attention(dataset, &target, attention, pretrain)?;
    let pretrained = compute_dataset_weights(dataset.features(), &attention, train.weights_batch_size.max(1))?;

    let learner = LearnerParams::init(train.learner.clone(), train.learner_seed())?;
    let mut afs = train_afs_from(dataset, train, attention, learner)?;
    afs.report.wall_time = start.elapsed();
    Ok(HybridResult {
        base,
        target,
        pretrained,
        pretrain: pretrain_report,
        afs,
    })
}

/// Seed for pretraining batches derived from a run's master seed.
pub fn pretrain_seed(master: u64) -> u64 {
    derive_seed(master, tag("pretrain"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionConfig;
    use crate::learner::LearnerConfig;
    use crate::trainer::train_afs;

    fn dataset() -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..48 {
            let y = i % 2;
            let signal = y as f64 + 0.1 * ((i * 7 % 5) as f64);
            let weak = 0.3 * y as f64 + ((i * 13 % 11) as f64) / 11.0;
            let noise = ((i * 29 % 17) as f64) / 17.0;
            rows.push(vec![signal, weak, noise, 0.5 * noise + 0.2]);
            labels.push(y);
        }
        Dataset::classification("hybrid", Matrix::from_rows(&rows), labels).unwrap()
    }

    fn small_train(ds: &Dataset, steps: usize) -> TrainConfig {
        let mut cfg = TrainConfig::for_dataset(ds);
        cfg.steps = steps;
        cfg.batch_size = 16;
        cfg.attention = AttentionConfig {
            input_dim: ds.feature_count(),
            n_e: 8,
            hidden_layers: 1,
            hidden_width: 4,
        };
        cfg.learner = LearnerConfig::classifier(ds.feature_count(), 12, 2);
        cfg
    }

    /// Independent Spearman oracle: Pearson correlation of average ranks.
    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let below = v.iter().filter(|y| *y < x).count() as f64;
                    let equal = v.iter().filter(|y| *y == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        }
        let (ra, rb) = (ranks(a), ranks(b));
        let n = ra.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn zero_pretraining_equals_plain_training() {
        let ds = dataset();
        let cfg = small_train(&ds, 25);
        let pre = PretrainConfig {
            steps: 0,
            ..PretrainConfig::default()
        };
        let hybrid = hybrid_init_train(&ds, BaselineMethod::Fisher, &ReliefConfig::default(), &pre, &cfg).unwrap();
        let plain = train_afs(&ds, &cfg).unwrap();
        assert_eq!(hybrid.afs.weights(), plain.weights());
        assert_eq!(hybrid.afs.report.history, plain.report.history);
        for (a, b) in hybrid.afs.learner.params().iter().zip(plain.learner.params()) {
            assert_eq!(a.value(), b.value());
        }
        assert_eq!(hybrid.pretrain.steps_run, 0);
    }

    #[test]
    fn pretraining_tracks_target_ranking() {
        let ds = dataset();
        let cfg = small_train(&ds, 0);
        let target = FeatureWeights::new(vec![1.0, 0.6, 0.0, 0.25]).unwrap();
        let attention = AttentionParams::init(cfg.attention, 3).unwrap();
        let pre = PretrainConfig {
            steps: 1500,
            batch_size: 16,
            mse_tolerance: 0.0,
            ..PretrainConfig::default()
        };
        let (params, report) = pretrain_attention(&ds, &target, attention, &pre).unwrap();
        let s = compute_dataset_weights(ds.features(), &params, 16).unwrap();
        assert!(spearman(s.as_slice(), target.as_slice()) >= 0.9, "{:?}", s);
        assert!(report.final_mse < 0.02, "{}", report.final_mse);
        assert_eq!(report.steps_run, 1500);
    }

    #[test]
    fn half_target_starts_close_and_stays_close() {
        let ds = dataset();
        let cfg = small_train(&ds, 0);
        let target = FeatureWeights::new(vec![0.5; 4]).unwrap();
        let attention = AttentionParams::init(cfg.attention, 8).unwrap();
        let pre = PretrainConfig {
            steps: 200,
            batch_size: 16,
            mse_tolerance: 0.0,
            log_every: 1,
            ..PretrainConfig::default()
        };
        let (_, report) = pretrain_attention(&ds, &target, attention, &pre).unwrap();
        assert!(report.history[0].objective < 0.05);
        assert!(report.final_mse <= 1e-3, "{}", report.final_mse);
    }

    #[test]
    fn early_stop_on_tolerance() {
        let ds = dataset();
        let cfg = small_train(&ds, 0);
        let target = FeatureWeights::new(vec![0.5; 4]).unwrap();
        let attention = AttentionParams::init(cfg.attention, 8).unwrap();
        let pre = PretrainConfig {
            steps: 1000,
            batch_size: 16,
            mse_tolerance: 1.0,
            ..PretrainConfig::default()
        };
        let (after, report) = pretrain_attention(&ds, &target, attention.clone(), &pre).unwrap();
        assert_eq!(report.steps_run, 0);
        for (a, b) in after.params().iter().zip(attention.params()) {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let ds = dataset();
        let cfg = small_train(&ds, 0);
        let target = FeatureWeights::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let attention = AttentionParams::init(cfg.attention, 2).unwrap();
        let pre = PretrainConfig {
            steps: 0,
            ..PretrainConfig::default()
        };
        let (after, _) = pretrain_attention(&ds, &target, attention.clone(), &pre).unwrap();
        for (a, b) in after.params().iter().zip(attention.params()) {
            assert_eq!(a.value(), b.value());
        }
    }

    #[test]
    fn constant_base_scores_map_to_half() {
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![0.3, 0.3, 0.3]).collect();
        let labels: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let ds = Dataset::classification("flat", Matrix::from_rows(&rows), labels).unwrap();
        let mut cfg = small_train(&ds, 5);
        cfg.batch_size = 4;
        let pre = PretrainConfig {
            steps: 5,
            batch_size: 4,
            ..PretrainConfig::default()
        };
        let out = hybrid_init_train(&ds, BaselineMethod::Fisher, &ReliefConfig::default(), &pre, &cfg).unwrap();
        assert_eq!(out.target.as_slice(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn mse_gradient_matches_finite_difference() {
        let a = Matrix::from_rows(&[[0.2, 0.7], [0.9, 0.4]]);
        let t = [0.5, 0.1];
        let (loss, grad) = target_mse(&a, &t);
        let expected = ((0.2f64 - 0.5).powi(2) + 0.6f64.powi(2) + 0.4f64.powi(2) + 0.3f64.powi(2)) / 4.0;
        assert!((loss - expected).abs() < 1e-15);
        let h = 1e-6;
        for j in 0..4 {
            let mut ap = a.clone();
            ap.as_mut_slice()[j] += h;
            let mut am = a.clone();
            am.as_mut_slice()[j] -= h;
            let fd = (target_mse(&ap, &t).0 - target_mse(&am, &t).0) / (2.0 * h);
            assert!((fd - grad.as_slice()[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_wrong_target_length() {
        let ds = dataset();
        let cfg = small_train(&ds, 0);
        let attention = AttentionParams::init(cfg.attention, 1).unwrap();
        let target = FeatureWeights::new(vec![0.5; 3]).unwrap();
        assert!(pretrain_attention(&ds, &target, attention, &PretrainConfig::default()).is_err());
    }
}
