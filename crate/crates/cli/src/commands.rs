use std::path::Path;

use afs_core::baselines::BaselineMethod;
use afs_core::data::{kfold_splits, save_idx, IdxImages, NoiseSpec};
use afs_core::eval::{
    accuracy_curve, average_accuracy, classifier_accuracy, cross_validated_curve, export_heatmap, export_weights,
    import_weights, rank_features, spearman_correlation, train_classifier, write_curve_csv, AccuracyCurve,
};
use afs_core::nn::init::{derive_seed, tag};
use afs_core::trainer::{
    finetune_reused, hybrid_init_train, pretrain_seed, read_checkpoint, save_checkpoint, train_afs, AfsResult,
    Checkpoint, ReuseMode, TrainConfig,
};
use serde_json::json;

use crate::config::{parse_cv, parse_range, parse_shape, Config, Loaded, Part};
use crate::error::CliError;
use crate::run::Run;

pub const CHECKPOINT_FILE: &str = "checkpoint.afs";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const REPORT_FILE: &str = "report.csv";

fn load_train(config: &Config, run: &mut Run) -> Result<Loaded, CliError> {
    let train = config.data.require(Part::Train)?;
    run.fingerprint("train", &train.files)?;
    Ok(train)
}

fn record_train_seeds(run: &mut Run, c: &TrainConfig) {
    run.seeds.insert("master".into(), c.seed);
    run.seeds.insert("attention".into(), derive_seed(c.seed, tag("attention")));
    run.seeds.insert("learner".into(), derive_seed(c.seed, tag("learner")));
    run.seeds.insert("batches".into(), derive_seed(c.seed, tag("batches")));
}

/// Checkpoint, weights CSV and objective log of a finished AFS run.
fn write_afs_artifacts(run: &mut Run, result: &AfsResult) -> Result<(), CliError> {
    let path = run.artifact(CHECKPOINT_FILE);
    save_checkpoint(&path, Some(&result.attention), Some(&result.learner)).map_err(CliError::runtime)?;
    let path = run.artifact(WEIGHTS_FILE);
    export_weights(result.weights().as_slice(), "afs", &path).map_err(CliError::runtime)?;
    run.write(REPORT_FILE, result.report.to_csv())?;
    run.detail("final_objective", result.report.history.last().map(|s| s.objective))?;
    run.detail("train_wall_time_secs", result.report.wall_time.as_secs_f64())
}

pub fn train(config: &Config, run: &mut Run) -> Result<(), CliError> {
    let train = load_train(config, run)?;
    let tc = config.train_config(&train.dataset);
    tc.validate_for(&train.dataset).map_err(CliError::config)?;
    record_train_seeds(run, &tc);
    let result = train_afs(&train.dataset, &tc).map_err(CliError::runtime)?;
    write_afs_artifacts(run, &result)
}

pub fn hybrid(config: &Config, run: &mut Run, base: &str) -> Result<(), CliError> {
    let method: BaselineMethod = base.parse().map_err(CliError::config)?;
    let train = load_train(config, run)?;
    let tc = config.train_config(&train.dataset);
    tc.validate_for(&train.dataset).map_err(CliError::config)?;
    record_train_seeds(run, &tc);
    run.seeds.insert("pretrain".into(), pretrain_seed(config.seed));
    let relief = config.relief_config();
    let pretrain = config.pretrain_config(pretrain_seed(config.seed));
    let result = hybrid_init_train(&train.dataset, method, &relief, &pretrain, &tc).map_err(CliError::runtime)?;

    write_afs_artifacts(run, &result.afs)?;
    let path = run.artifact(&format!("base_{}.csv", method.name()));
    export_weights(&result.base.w, method.name(), &path).map_err(CliError::runtime)?;
    let mut log = String::from("step,mse\n");
    for s in &result.pretrain.history {
        log.push_str(&format!("{},{}\n", s.step, s.objective));
    }
    run.write("pretrain.csv", log)?;
    let rho = spearman_correlation(result.pretrained.as_slice(), result.target.as_slice()).map_err(CliError::runtime)?;
    run.detail("base_method", method.name())?;
    run.detail("w_fs", result.target.as_slice())?;
    run.detail("pretrain_steps_run", result.pretrain.steps_run)?;
    run.detail("pretrain_final_mse", result.pretrain.final_mse)?;
    run.detail("pretrained_spearman", rho)
}

pub fn reuse(config: &Config, run: &mut Run, checkpoint: &Path, mode: &str, steps: usize) -> Result<(), CliError> {
    let mode: ReuseMode = mode.parse().map_err(CliError::config)?;
    let train = load_train(config, run)?;
    let tc = config.train_config(&train.dataset);
    tc.validate_for(&train.dataset).map_err(CliError::config)?;
    record_train_seeds(run, &tc);
    run.fingerprint("checkpoint", &[checkpoint.to_path_buf()])?;
    let learner = read_checkpoint(checkpoint)
        .and_then(|c| c.learner_for(&tc.learner, checkpoint))
        .map_err(CliError::data)?;
    let before = learner_bytes(&learner)?;

    let result = finetune_reused(&train.dataset, learner, mode, steps, &tc).map_err(CliError::runtime)?;
    write_afs_artifacts(run, &result)?;
    run.detail("mode", mode)?;
    run.detail("steps", steps)?;
    run.detail("learner_frozen", mode == ReuseMode::Local)?;
    run.detail("learner_unchanged", learner_bytes(&result.learner)? == before)
}

fn learner_bytes(learner: &afs_core::learner::LearnerParams) -> Result<Vec<u8>, CliError> {
    Checkpoint {
        attention: None,
        learner: Some(learner.clone()),
    }
    .to_bytes()
    .map_err(CliError::runtime)
}

/// Trains the plain benchmark classifier on every feature and saves it as a
/// learner checkpoint for `reuse`.
pub fn fit_learner(config: &Config, run: &mut Run) -> Result<(), CliError> {
    let train = load_train(config, run)?;
    let test = config.data.load(Part::Test)?;
    if let Some(t) = &test {
        run.fingerprint("test", &t.files)?;
    }
    let classes = train.dataset.class_count();
    let cc = config.classifier.clone();
    run.seeds.insert("classifier".into(), cc.seed);
    let learner = train_classifier(&train.dataset, classes, &cc).map_err(CliError::runtime)?;
    if learner.config() != &config.train_config(&train.dataset).learner {
        eprintln!("afs: note: [classifier] and [learner] describe different networks; reuse will reject this checkpoint");
    }
    let path = run.artifact(CHECKPOINT_FILE);
    save_checkpoint(&path, None, Some(&learner)).map_err(CliError::runtime)?;
    if let Some(t) = &test {
        let acc = classifier_accuracy(&learner, &t.dataset).map_err(CliError::runtime)?;
        println!("test accuracy {acc:.4}");
        run.detail("test_accuracy", acc)?;
    }
    Ok(())
}

pub fn eval(config: &Config, run: &mut Run, weights: &Path) -> Result<(), CliError> {
    let (method, w) = import_weights(weights).map_err(CliError::data)?;
    run.fingerprint("weights", &[weights.to_path_buf()])?;
    let train = load_train(config, run)?;
    let d = train.dataset.feature_count();
    if w.len() != d {
        return Err(CliError::data(format!(
            "{} has {} weights but the dataset has {d} features",
            weights.display(),
            w.len()
        )));
    }
    let grid = config.grid()?;
    let avg = config.eval.avg.as_deref().map(parse_range).transpose()?;
    let cc = &config.classifier;
    run.seeds.insert("classifier".into(), cc.seed);
    let ranking = rank_features(&w).map_err(CliError::data)?;

    let mut curve = match config.eval.cv.as_deref() {
        Some(cv) => {
            let (repeats, folds) = parse_cv(cv)?;
            let plan = kfold_splits(train.dataset.len(), folds, repeats, config.seed, train.dataset.labels())
                .map_err(CliError::config)?;
            run.seeds.insert("splits".into(), config.seed);
            if let Some(w) = &plan.warning {
                eprintln!("afs: warning: {w}");
            }
            let cv = cross_validated_curve(&train.dataset, &plan, |_, _| Ok(w.clone()), &grid, cc, config.jobs())
                .map_err(CliError::runtime)?;
            let mut cells = String::from("cell,K,accuracy\n");
            for (c, cell) in cv.cells.iter().enumerate() {
                for (k, a) in &cell.points {
                    cells.push_str(&format!("{c},{k},{a}\n"));
                }
            }
            run.write("cv_cells.csv", cells)?;
            run.detail("protocol", format!("{repeats}x{folds} cross-validation"))?;
            cv.mean
        }
        None => {
            let test = config.data.require(Part::Test)?;
            run.fingerprint("test", &test.files)?;
            if test.dataset.feature_count() != d {
                return Err(CliError::data("train and test parts have different feature counts"));
            }
            run.detail("protocol", "train/test split")?;
            accuracy_curve(&train.dataset, &test.dataset, &ranking, &grid, cc, config.jobs())
                .map_err(CliError::runtime)?
        }
    };
    curve.method = method.clone();
    let path = run.artifact("curve.csv");
    write_curve_csv(&curve, &path).map_err(CliError::runtime)?;
    print_curve(&curve);
    run.detail("method", method)?;
    run.detail("curve", &curve.points)?;
    if let Some((lo, hi)) = avg {
        let mean = average_accuracy(&curve, lo, hi).map_err(CliError::config)?;
        println!("average {lo}:{hi} {mean:.4}");
        run.write("average.csv", format!("k_min,k_max,average_accuracy\n{lo},{hi},{mean}\n"))?;
        run.detail("average_accuracy", json!({ "k_min": lo, "k_max": hi, "value": mean }))?;
    }
    Ok(())
}

fn print_curve(curve: &AccuracyCurve) {
    for (k, a) in &curve.points {
        println!("K={k:<4} accuracy {a:.4}");
    }
}

pub fn synth(config: &Config, run: &mut Run) -> Result<(), CliError> {
    let s = &config.synth;
    let seed = s
        .seed
        .ok_or_else(|| CliError::config("synth needs an explicit --seed (or synth.seed)"))?;
    let noise = s
        .noise
        .as_deref()
        .ok_or_else(|| CliError::config("synth needs --noise awgn|mb|rcawgn"))?;
    let noise_for = |part_seed: u64| -> Result<NoiseSpec, CliError> {
        Ok(match noise {
            "awgn" => NoiseSpec::Awgn {
                snr_db: s.snr_db.unwrap_or(9.5),
                seed: part_seed,
            },
            "mb" => NoiseSpec::MotionBlur {
                length: s.length,
                angle_deg: s.angle_deg,
            },
            "rcawgn" => NoiseSpec::RcAwgn {
                contrast: s.contrast,
                snr_db: s.snr_db.unwrap_or(12.0),
                seed: part_seed,
            },
            other => return Err(CliError::config(format!("unknown noise `{other}`; expected awgn, mb or rcawgn"))),
        })
    };
    noise_for(0)?;
    if config.data.format != crate::config::DataFormat::Idx {
        return Err(CliError::config("synth reads and writes IDX image data"));
    }
    run.seeds.insert("master".into(), seed);

    let mut sidecar = serde_json::Map::new();
    for (part, prefix) in [(Part::Train, "train"), (Part::Test, "t10k")] {
        let Some(loaded) = config.data.load(part)? else { continue };
        let role = if part == Part::Train { "train" } else { "test" };
        run.fingerprint(role, &loaded.files)?;
        let part_seed = derive_seed(seed, tag(role));
        run.seeds.insert(role.into(), part_seed);
        let noise_model = noise_for(part_seed)?;
        let shape: IdxImages = loaded.shape.expect("IDX parts carry an image shape");
        let noisy = noise_model
            .apply(&loaded.dataset, shape.rows, shape.cols)
            .map_err(CliError::config)?;
        let images = run.artifact(&format!("{prefix}-images-idx3-ubyte"));
        let labels = run.artifact(&format!("{prefix}-labels-idx1-ubyte"));
        save_idx(&noisy, shape, &images, &labels).map_err(CliError::runtime)?;
        sidecar.insert(role.into(), serde_json::to_value(&noise_model).map_err(CliError::runtime)?);
    }
    if sidecar.is_empty() {
        return Err(CliError::config("no IDX data configured"));
    }
    let text = serde_json::to_string_pretty(&sidecar).map_err(CliError::runtime)?;
    run.write("noise.json", text + "\n")?;
    run.detail("noise", sidecar)
}

pub fn heatmap(run: &mut Run, weights: &Path, tiers: &[usize], shape: &str) -> Result<(), CliError> {
    let (rows, cols) = parse_shape(shape)?;
    let (method, w) = import_weights(weights).map_err(CliError::data)?;
    run.fingerprint("weights", &[weights.to_path_buf()])?;
    if rows * cols != w.len() {
        return Err(CliError::config(format!(
            "shape {rows}x{cols} does not cover the {} weights in {}",
            w.len(),
            weights.display()
        )));
    }
    let ranking = rank_features(&w).map_err(CliError::data)?;
    let path = run.artifact("heatmap.pgm");
    export_heatmap(&ranking, tiers, rows, cols, &path).map_err(CliError::runtime)?;
    run.detail("method", method)?;
    run.detail("tiers", tiers)
}
