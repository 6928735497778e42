//! Turning feature weights into accuracy numbers: rank features, keep the
//! top `K`, retrain a benchmark classifier on them and score a held-out set.

mod export;

pub use export::{export_heatmap, export_weights, heatmap_pgm, import_weights, weights_csv, write_curve_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BatchStream, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::learner::{task_loss_with_grad, Activation, LearnerConfig, LearnerParams, Task};
use crate::nn::init::{derive_seed, tag};
use crate::nn::param::{adam_step, l2_penalty_backward, AdamConfig, Parameters};
use crate::nn::Matrix;

/// Features in descending weight order, ties by ascending index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub order: Vec<usize>,
    pub weights: Vec<f64>,
}

impl FeatureRanking {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.order[..k.min(self.order.len())]
    }
}

pub fn rank_features(weights: &[f64]) -> Result<FeatureRanking> {
    if let Some(k) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::contract(format!("weight of feature {k} is {}", weights[k])));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable sort keeps ascending index among equal weights
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    Ok(FeatureRanking {
        order,
        weights: weights.to_vec(),
    })
}

/// Columns `ranking.order[..k]`, in that order.
pub fn select_top_k(dataset: &Dataset, ranking: &FeatureRanking, k: usize) -> Result<Dataset> {
    let d = dataset.feature_count();
    if ranking.len() != d {
        return Err(Error::Dimension {
            op: "select_top_k",
            left: (1, ranking.len()),
            right: (dataset.len(), d),
        });
    }
    if k == 0 || k > d {
        return Err(Error::Index {
            what: "top-K size",
            index: k,
            len: d,
        });
    }
    Ok(dataset.select_features(ranking.top(k)))
}

/// Training budget of the benchmark classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![500],
            activation: Activation::Relu,
            steps: 3000,
            batch_size: 100,
            lambda: 0.0,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn learner_config(&self, input_dim: usize, classes: usize) -> LearnerConfig {
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend(&self.hidden);
        layer_sizes.push(classes);
        LearnerConfig {
            layer_sizes,
            task: Task::Classification,
            activation: self.activation,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ClassifierConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Trains a fresh dense classifier on `train` with Adam and cross-entropy.
pub fn train_classifier(train: &Dataset, classes: usize, config: &ClassifierConfig) -> Result<LearnerParams> {
    if train.labels().is_none() {
        return Err(Error::contract("benchmark classifier needs class labels"));
    }
    if config.batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    config.adam.validate()?;
    let lc = config.learner_config(train.feature_count(), classes);
    let mut params = LearnerParams::init(lc, derive_seed(config.seed, tag("init")))?;
    if config.steps == 0 {
        return Ok(params);
    }
    let mut batches = BatchStream::new(train.len(), config.batch_size, derive_seed(config.seed, tag("batches")))?;
    for step in 1..=config.steps {
        let idx = batches.next().expect("batch stream is endless");
        let x = train.features().select_rows(&idx);
        let y = train.targets().select(&idx);
        let cache = params.forward(&x)?;
        let (_, grad) = task_loss_with_grad(Task::Classification, cache.output(), &y)?;
        params.backward(&x, &cache, &grad, false)?;
        l2_penalty_backward(params.params_mut(), config.lambda);
        adam_step(params.params_mut(), &config.adam, step as u64)?;
    }
    Ok(params)
}

/// Arg-max class of every row of `features`, evaluated in chunks.
pub fn predict_classes(params: &LearnerParams, features: &Matrix) -> Result<Vec<usize>> {
    const CHUNK: usize = 1000;
    let mut out = Vec::with_capacity(features.rows());
    let all: Vec<usize> = (0..features.rows()).collect();
    for chunk in all.chunks(CHUNK) {
        let logits = params.forward(&features.select_rows(chunk))?;
        let logits = logits.output();
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of `test` rows the classifier labels correctly.
pub fn classifier_accuracy(params: &LearnerParams, test: &Dataset) -> Result<f64> {
    let labels = test
        .labels()
        .ok_or_else(|| Error::contract("accuracy needs class labels"))?;
    if test.is_empty() {
        return Err(Error::contract("empty test set"));
    }
    let predicted = predict_classes(params, test.features())?;
    let correct = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Trains the benchmark classifier on `train` and returns its accuracy on
/// `test`.
pub fn benchmark_nn_eval(train: &Dataset, test: &Dataset, config: &ClassifierConfig) -> Result<f64> {
    if train.feature_count() != test.feature_count() {
        return Err(Error::Dimension {
            op: "benchmark_nn_eval",
            left: (train.len(), train.feature_count()),
            right: (test.len(), test.feature_count()),
        });
    }
    let classes = train.class_count().max(test.class_count());
    let params = train_classifier(train, classes, config)?;
    classifier_accuracy(&params, test)
}

/// Arithmetic grid `min, min + step, ..., ≤ max` of subset sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGrid {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl Default for KGrid {
    fn default() -> Self {
        KGrid {
            min: 15,
            max: 295,
            step: 10,
        }
    }
}

impl KGrid {
    pub fn new(min: usize, max: usize, step: usize) -> Result<Self> {
        if min == 0 || step == 0 || max < min {
            return Err(Error::contract(format!("invalid K grid {min}..={max} step {step}")));
        }
        Ok(KGrid { min, max, step })
    }

    pub fn values(&self) -> Vec<usize> {
        (self.min..=self.max).step_by(self.step.max(1)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    /// `(K, accuracy)` with strictly increasing `K`.
    pub points: Vec<(usize, f64)>,
}

impl AccuracyCurve {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    /// `K,accuracy` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,accuracy\n");
        for (k, a) in &self.points {
            out.push_str(&format!("{k},{a}\n"));
        }
        out
    }
}

fn run_parallel<T: Send, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// One benchmark evaluation per `K` of the grid. The classifier for each `K`
/// is seeded from `(config.seed, K)`, so `jobs` only changes speed. `jobs = 0`
/// uses every available core.
pub fn accuracy_curve(
    train: &Dataset,
    test: &Dataset,
    ranking: &FeatureRanking,
    grid: &KGrid,
    config: &ClassifierConfig,
    jobs: usize,
) -> Result<AccuracyCurve> {
    let ks = grid.values();
    let d = train.feature_count();
    if let Some(&k) = ks.last().filter(|&&k| k > d) {
        return Err(Error::Index {
            what: "top-K size",
            index: k,
            len: d,
        });
    }
    let accuracies = run_parallel(jobs, ks.len(), |i| {
        let k = ks[i];
        let tr = select_top_k(train, ranking, k)?;
        let te = select_top_k(test, ranking, k)?;
        benchmark_nn_eval(&tr, &te, &config.with_seed(derive_seed(config.seed, k as u64)))
    })?;
    Ok(AccuracyCurve {
        dataset: train.name.clone(),
        method: String::new(),
        seed: config.seed,
        points: ks.into_iter().zip(accuracies).collect(),
    })
}

/// Mean accuracy over the points with `k_lo ≤ K ≤ k_hi`.
pub fn average_accuracy(curve: &AccuracyCurve, k_lo: usize, k_hi: usize) -> Result<f64> {
    let picked: Vec<f64> = curve
        .points
        .iter()
        .filter(|(k, _)| (k_lo..=k_hi).contains(k))
        .map(|p| p.1)
        .collect();
    if picked.is_empty() {
        return Err(Error::contract(format!("curve has no points with K in {k_lo}..={k_hi}")));
    }
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Per-cell curves and their pointwise mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub mean: AccuracyCurve,
    pub cells: Vec<AccuracyCurve>,
}

/// For every split of `plan`, `selector` scores features from the training
/// part alone (it also receives the cell index), the benchmark classifier is
/// trained on the training part and scored on the test part. Cell `c`
/// evaluates with classifier seed `derive(config.seed, c)`.
pub fn cross_validated_curve<S>(
    dataset: &Dataset,
    plan: &SplitPlan,
    selector: S,
    grid: &KGrid,
    config: &ClassifierConfig,
    jobs: usize,
) -> Result<CvCurve>
where
    S: Fn(&Dataset, usize) -> Result<Vec<f64>>,
{
    if plan.cells.is_empty() {
        return Err(Error::contract("split plan has no cells"));
    }
    let mut cells = Vec::with_capacity(plan.cells.len());
    for (c, fold) in plan.cells.iter().enumerate() {
        let train = dataset.subset(&fold.train)?;
        let test = dataset.subset(&fold.test)?;
        let weights = selector(&train, c)?;
        let ranking = rank_features(&weights)?;
        let cell_config = config.with_seed(derive_seed(config.seed, c as u64));
        cells.push(accuracy_curve(&train, &test, &ranking, grid, &cell_config, jobs)?);
    }
    let n = cells.len() as f64;
    let points = cells[0]
        .points
        .iter()
        .enumerate()
        .map(|(i, &(k, _))| (k, cells.iter().map(|c| c.points[i].1).sum::<f64>() / n))
        .collect();
    Ok(CvCurve {
        mean: AccuracyCurve {
            dataset: dataset.name.clone(),
            method: String::new(),
            seed: config.seed,
            points,
        },
        cells,
    })
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "spearman_correlation",
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    Ok(cov / (va * vb).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}
