//! `afs`: train attention-based feature selectors, synthesize noisy data and
//! evaluate feature rankings from the command line.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, Overrides};
use crate::error::CliError;
use crate::run::{output_root, Run};

#[derive(Parser)]
#[command(name = "afs", version, about = "Attention-based supervised feature selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output root; artifacts go to `<root>/<command>/`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set attention.n_e=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// CSV training table; switches the data format to CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train attention and learner jointly.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Pretrain attention towards a filter method's scores, then train.
    Hybrid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// fisher or relieff.
        #[arg(long)]
        base: String,
        #[arg(long)]
        pretrain_steps: Option<usize>,
    },
    /// Fine-tune a fresh attention module around a saved learner.
    Reuse {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// global (learner trains too) or local (learner frozen).
        #[arg(long)]
        mode: String,
    },
    /// Train the plain benchmark classifier on every feature and save it
    /// as a learner checkpoint.
    FitLearner {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Accuracy of the benchmark classifier on top-K feature subsets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Feature weights CSV.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        k_step: Option<usize>,
        /// Repeated k-fold evaluation, e.g. `3x3`.
        #[arg(long)]
        cv: Option<String>,
        /// Report mean accuracy over a K range, e.g. `15:85`.
        #[arg(long)]
        avg: Option<String>,
        /// Worker threads; defaults to the logical core count.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed of the benchmark classifier and CV splits.
        #[arg(long)]
        seed: Option<u64>,
        /// Training steps of the benchmark classifier.
        #[arg(long)]
        classifier_steps: Option<usize>,
    },
    /// Write a noisy copy of an IDX dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// awgn, mb or rcawgn.
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        snr_db: Option<f64>,
        /// Motion-blur kernel length.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        angle: Option<f64>,
        #[arg(long)]
        contrast: Option<f64>,
        /// Required: noise is only ever generated from an explicit seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// PGM map of where the top-ranked features sit in the image.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "65,165,350")]
        tiers: Vec<usize>,
        #[arg(long, default_value = "28x28")]
        shape: String,
    },
}

impl DataArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set_path("data.train_images", self.train_images.as_deref());
        o.set_path("data.train_labels", self.train_labels.as_deref());
        o.set_path("data.test_images", self.test_images.as_deref());
        o.set_path("data.test_labels", self.test_labels.as_deref());
        if self.csv.is_some() {
            o.set("data.format", "csv");
        }
        o.set_path("data.path", self.csv.as_deref());
        o.set_path("data.test_path", self.test_csv.as_deref());
        o.set_opt("data.label_column", self.label_column.clone());
    }
}

impl TrainArgs {
    fn apply(&self, o: &mut Overrides) -> Result<(), CliError> {
        o.set_opt("seed", as_toml_int(self.seed)?);
        o.set_opt("train.steps", as_toml_int(self.steps)?);
        o.set_opt("train.batch_size", as_toml_int(self.batch_size)?);
        o.set_opt("train.lambda", self.lambda);
        Ok(())
    }
}

/// TOML integers are signed 64-bit.
fn as_toml_int<T: TryInto<i64> + Copy + std::fmt::Display>(v: Option<T>) -> Result<Option<i64>, CliError> {
    v.map(|x| x.try_into().map_err(|_| CliError::config(format!("{x} is too large"))))
        .transpose()
}

fn load(common: &Common, fill: impl FnOnce(&mut Overrides) -> Result<(), CliError>) -> Result<Config, CliError> {
    let mut o = Overrides::default();
    fill(&mut o)?;
    for s in &common.set {
        o.push_assignment(s)?;
    }
    Config::load(common.config.as_deref(), &o)
}

fn execute(cli: Cli) -> Result<PathBuf, CliError> {
    let (name, common, config) = match &cli.command {
        Command::Train { common, data, train } => (
            "train",
            common,
            load(common, |o| {
                data.apply(o);
                train.apply(o)
            })?,
        ),
        Command::Hybrid {
            common,
            data,
            train,
            pretrain_steps,
            ..
        } => (
            "hybrid",
            common,
            load(common, |o| {
                data.apply(o);
                o.set_opt("pretrain.steps", as_toml_int(*pretrain_steps)?);
                train.apply(o)
            })?,
        ),
        Command::Reuse { common, data, train, .. } => (
            "reuse",
            common,
            load(common, |o| {
                data.apply(o);
                train.apply(o)
            })?,
        ),
        Command::FitLearner {
            common,
            data,
            seed,
            steps,
            lambda,
        } => (
            "fit-learner",
            common,
            load(common, |o| {
                data.apply(o);
                o.set_opt("classifier.seed", as_toml_int(*seed)?);
                o.set_opt("classifier.steps", as_toml_int(*steps)?);
                o.set_opt("classifier.lambda", *lambda);
                Ok(())
            })?,
        ),
        Command::Eval {
            common,
            data,
            k_min,
            k_max,
            k_step,
            cv,
            avg,
            jobs,
            seed,
            classifier_steps,
            ..
        } => (
            "eval",
            common,
            load(common, |o| {
                data.apply(o);
                o.set_opt("eval.k_min", as_toml_int(*k_min)?);
                o.set_opt("eval.k_max", as_toml_int(*k_max)?);
                o.set_opt("eval.k_step", as_toml_int(*k_step)?);
                o.set_opt("eval.cv", cv.clone());
                o.set_opt("eval.avg", avg.clone());
                o.set_opt("eval.jobs", as_toml_int(*jobs)?);
                o.set_opt("seed", as_toml_int(*seed)?);
                o.set_opt("classifier.seed", as_toml_int(*seed)?);
                o.set_opt("classifier.steps", as_toml_int(*classifier_steps)?);
                Ok(())
            })?,
        ),
        Command::Synth {
            common,
            data,
            noise,
            snr_db,
            length,
            angle,
            contrast,
            seed,
        } => (
            "synth",
            common,
            load(common, |o| {
                data.apply(o);
                o.set_opt("synth.noise", noise.clone());
                o.set_opt("synth.snr_db", *snr_db);
                o.set_opt("synth.length", as_toml_int(*length)?);
                o.set_opt("synth.angle_deg", *angle);
                o.set_opt("synth.contrast", *contrast);
                o.set_opt("synth.seed", as_toml_int(*seed)?);
                Ok(())
            })?,
        ),
        Command::Heatmap { common, .. } => ("heatmap", common, load(common, |_| Ok(()))?),
    };

    let mut run = Run::start(name, &output_root(common.output_dir.as_deref(), &config))?;
    let dir = run.dir().to_path_buf();
    let outcome = dispatch(&cli.command, &config, &mut run);
    if let Err(e) = outcome {
        drop(run);
        // Only succeeds when the failed run left the directory empty.
        let _ = std::fs::remove_dir(&dir);
        return Err(e);
    }
    run.finish(&config)
}

fn dispatch(command: &Command, config: &Config, run: &mut Run) -> Result<(), CliError> {
    match command {
        Command::Train { .. } => commands::train(config, run)?,
        Command::Hybrid { base, .. } => commands::hybrid(config, run, base)?,
        Command::Reuse { checkpoint, mode, .. } => {
            commands::reuse(config, run, checkpoint, mode, config.train.steps)?
        }
        Command::FitLearner { .. } => commands::fit_learner(config, run)?,
        Command::Eval { weights, .. } => commands::eval(config, run, weights)?,
        Command::Synth { .. } => commands::synth(config, run)?,
        Command::Heatmap {
            weights, tiers, shape, ..
        } => commands::heatmap(run, weights, tiers, shape)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(manifest) => {
            println!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("afs: {e}");
            e.exit_code()
        }
    }
}
