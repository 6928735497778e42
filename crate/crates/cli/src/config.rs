//! Run configuration. A TOML file supplies any subset of the keys below;
//! command-line flags are written into the parsed table before it is
//! deserialised, so the precedence is flags > file > defaults.

use std::path::{Path, PathBuf};

use afs_core::attention::AttentionConfig;
use afs_core::baselines::ReliefConfig;
use afs_core::data::{load_csv, load_idx, Dataset, IdxImages};
use afs_core::eval::{ClassifierConfig, KGrid};
use afs_core::learner::{Activation, LearnerConfig, Task};
use afs_core::nn::AdamConfig;
use afs_core::trainer::{PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; component seeds are derived from it.
    pub seed: u64,
    /// Root under which each command writes `<root>/<command>/`.
    pub output_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainSection,
    pub attention: AttentionSection,
    pub learner: LearnerSection,
    pub pretrain: PretrainSection,
    pub relieff: ReliefSection,
    pub classifier: ClassifierConfig,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    /// IDX image/label files of the training and test parts.
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// CSV tables with a header row; `test_path` is optional.
    pub path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub label_column: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Idx,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            path: None,
            test_path: None,
            label_column: "label".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub log_every: usize,
    pub weights_batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 3000,
            batch_size: 100,
            lambda: 1e-4,
            log_every: 50,
            weights_batch_size: 500,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub n_e: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let d = AttentionConfig::default();
        AttentionSection {
            n_e: d.n_e,
            hidden_layers: d.hidden_layers,
            hidden_width: d.hidden_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for LearnerSection {
    fn default() -> Self {
        LearnerSection {
            hidden: vec![500],
            activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub mse_tolerance: f64,
    pub log_every: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSection {
            steps: d.steps,
            batch_size: d.batch_size,
            lambda: d.lambda,
            mse_tolerance: d.mse_tolerance,
            log_every: d.log_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReliefSection {
    pub k_neighbors: usize,
    /// Visited instances; 0 visits every instance.
    pub sample_count: usize,
}

impl Default for ReliefSection {
    fn default() -> Self {
        ReliefSection {
            k_neighbors: ReliefConfig::default().k_neighbors,
            sample_count: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k_min: usize,
    pub k_max: usize,
    pub k_step: usize,
    /// `RxF` repeated-fold cross-validation instead of the train/test split.
    pub cv: Option<String>,
    /// `LO:HI` range whose mean accuracy is reported.
    pub avg: Option<String>,
    /// Worker threads for curve points; 0 uses every logical core.
    pub jobs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let g = KGrid::default();
        EvalSection {
            k_min: g.min,
            k_max: g.max,
            k_step: g.step,
            cv: None,
            avg: None,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub noise: Option<String>,
    /// Defaults to 9.5 dB for `awgn` and 12 dB for `rcawgn`.
    pub snr_db: Option<f64>,
    pub length: usize,
    pub angle_deg: f64,
    pub contrast: f64,
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            noise: None,
            snr_db: None,
            length: 5,
            angle_deg: 15.0,
            contrast: 0.5,
            seed: None,
        }
    }
}

/// Dotted-key assignments collected from flags, applied over the file.
#[derive(Debug, Default)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.push((key.to_string(), value.into()));
    }

    pub fn set_opt<V: Into<Value>>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn set_path(&mut self, key: &str, value: Option<&Path>) {
        if let Some(p) = value {
            self.set(key, p.to_string_lossy().into_owned());
        }
    }

    /// Parses `key=value`; the value is read as a TOML literal when it is
    /// one and as a bare string otherwise.
    pub fn push_assignment(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("`--set {assignment}` is not of the form key=value")))?;
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key.trim(), value);
        Ok(())
    }
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Config, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        if let Some(p) = path {
            resolve_data_paths(&mut table, p.parent().unwrap_or(Path::new("")));
        }
        for (key, value) in &overrides.0 {
            assign(&mut table, key, value.clone())?;
        }
        Value::Table(table)
            .try_into::<Config>()
            .map_err(|e| CliError::config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::runtime(format!("serialising config: {e}")))
    }

    pub fn train_config(&self, dataset: &Dataset) -> TrainConfig {
        let mut c = TrainConfig::for_dataset(dataset);
        let t = &self.train;
        c.steps = t.steps;
        c.batch_size = t.batch_size;
        c.lambda = t.lambda;
        c.log_every = t.log_every;
        c.weights_batch_size = t.weights_batch_size;
        c.adam = t.adam;
        c.seed = self.seed;
        c.attention = AttentionConfig {
            input_dim: dataset.feature_count(),
            n_e: self.attention.n_e,
            hidden_layers: self.attention.hidden_layers,
            hidden_width: self.attention.hidden_width,
        };
        let mut sizes = vec![dataset.feature_count()];
        sizes.extend(&self.learner.hidden);
        sizes.push(c.learner.output_dim());
        c.learner = LearnerConfig {
            layer_sizes: sizes,
            task: Task::Classification,
            activation: self.learner.activation,
        };
        c
    }

    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            steps: p.steps,
            batch_size: p.batch_size,
            lambda: p.lambda,
            mse_tolerance: p.mse_tolerance,
            seed,
            adam: self.train.adam,
            log_every: p.log_every,
        }
    }

    pub fn relief_config(&self) -> ReliefConfig {
        ReliefConfig {
            k_neighbors: self.relieff.k_neighbors,
            sample_count: (self.relieff.sample_count > 0).then_some(self.relieff.sample_count),
            seed: self.seed,
        }
    }

    pub fn grid(&self) -> Result<KGrid, CliError> {
        KGrid::new(self.eval.k_min, self.eval.k_max, self.eval.k_step).map_err(CliError::config)
    }

    pub fn jobs(&self) -> usize {
        match self.eval.jobs {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            j => j,
        }
    }
}

/// A dataset part together with the files it was read from.
pub struct Loaded {
    pub dataset: Dataset,
    pub files: Vec<PathBuf>,
    pub shape: Option<IdxImages>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

impl DataConfig {
    /// `Ok(None)` when the configuration names no file for `part`.
    pub fn load(&self, part: Part) -> Result<Option<Loaded>, CliError> {
        match self.format {
            DataFormat::Idx => {
                let (images, labels) = match part {
                    Part::Train => (&self.train_images, &self.train_labels),
                    Part::Test => (&self.test_images, &self.test_labels),
                };
                let (images, labels) = match (images, labels) {
                    (Some(i), Some(l)) => (i, l),
                    (None, None) => return Ok(None),
                    _ => {
                        return Err(CliError::config(format!(
                            "{part:?} IDX data needs both an images and a labels file"
                        )))
                    }
                };
                let (dataset, shape) = load_idx(images, labels).map_err(CliError::data)?;
                Ok(Some(Loaded {
                    dataset,
                    files: vec![images.clone(), labels.clone()],
                    shape: Some(shape),
                }))
            }
            DataFormat::Csv => {
                let path = match part {
                    Part::Train => &self.path,
                    Part::Test => &self.test_path,
                };
                let Some(path) = path else { return Ok(None) };
                let dataset = load_csv(path, &self.label_column).map_err(CliError::data)?;
                Ok(Some(Loaded {
                    dataset,
                    files: vec![path.clone()],
                    shape: None,
                }))
            }
        }
    }

    pub fn require(&self, part: Part) -> Result<Loaded, CliError> {
        self.load(part)?
            .ok_or_else(|| CliError::config(format!("no {} data configured", format!("{part:?}").to_lowercase())))
    }
}

const DATA_PATH_KEYS: [&str; 6] = ["train_images", "train_labels", "test_images", "test_labels", "path", "test_path"];

/// Relative data paths in a config file are relative to that file.
fn resolve_data_paths(table: &mut Table, base: &Path) {
    let Some(Value::Table(data)) = table.get_mut("data") else { return };
    for key in DATA_PATH_KEYS {
        if let Some(Value::String(p)) = data.get_mut(key) {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
}

fn assign(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::config(format!("empty key `{key}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => return Err(CliError::config(format!("`{part}` in `{key}` is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Parses `RxF`, e.g. `3x3`.
pub fn parse_cv(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("--cv `{text}` is not of the form RxF"));
    let (r, f) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, f.trim().parse().map_err(|_| bad())?))
}

/// Parses `LO:HI`, e.g. `15:85`.
pub fn parse_range(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("--avg `{text}` is not of the form LO:HI"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let (lo, hi) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// Parses `ROWSxCOLS`, e.g. `28x28`.
pub fn parse_shape(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("--shape `{text}` is not of the form ROWSxCOLS"));
    let (r, c) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[train]\nsteps = 10\nlambda = 0.5\n[data]\nformat = \"csv\"\npath = \"d.csv\"\n").unwrap();
        let mut o = Overrides::default();
        o.set("train.steps", 20i64);
        o.push_assignment("eval.cv=\"3x3\"").unwrap();
        o.push_assignment("learner.hidden=[64, 32]").unwrap();
        let c = Config::load(Some(&path), &o).unwrap();
        assert_eq!(c.train.steps, 20);
        assert_eq!(c.train.lambda, 0.5);
        assert_eq!(c.train.batch_size, 100);
        assert_eq!(c.seed, 3);
        assert_eq!(c.eval.cv.as_deref(), Some("3x3"));
        assert_eq!(c.learner.hidden, vec![64, 32]);
        assert_eq!(c.data.path.unwrap(), dir.path().join("d.csv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut o = Overrides::default();
        o.set("train.stepz", 1i64);
        assert!(Config::load(None, &o).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = Config::default();
        c.eval.avg = Some("15:85".into());
        let text = c.to_toml().unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shipped_configs_parse() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mnist = Config::load(Some(&root.join("mnist.toml")), &Overrides::default()).unwrap();
        assert_eq!(mnist.attention.n_e, 16);
        assert_eq!(mnist.attention.hidden_layers, 0);
        assert!(mnist.data.train_images.unwrap().ends_with("data/mnist/train-images-idx3-ubyte"));
        let digits = Config::load(Some(&root.join("digits.toml")), &Overrides::default()).unwrap();
        assert_eq!(digits.data.format, DataFormat::Csv);
        assert_eq!(digits.eval.cv.as_deref(), Some("3x3"));
    }

    #[test]
    fn range_and_shape_strings() {
        assert_eq!(parse_cv("3x3").unwrap(), (3, 3));
        assert_eq!(parse_range("15:85").unwrap(), (15, 85));
        assert_eq!(parse_shape("28x28").unwrap(), (28, 28));
        assert!(parse_range("85:15").is_err());
        assert!(parse_cv("3").is_err());
    }
}
