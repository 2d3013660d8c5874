//! `dpn`: generate synthetic datasets, train, evaluate and estimate K.
//!
//! Configuration precedence: command-line flags, then `--config` file
//! values, then built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dpn_core::config::{AblationFlags, Config};
use dpn_core::data_io::SynthSpec;
use dpn_core::pipeline::{run_estimate_k, run_eval, run_generate, run_train, CHECKPOINT_FILE};
use dpn_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "dpn",
    version,
    about = "Category discovery over embedding vectors with decoupled prototypes"
)]
struct Cli {
    /// Root for output directories when `--out` is not given.
    #[arg(long, global = true, env = "DPN_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a Gaussian-mixture dataset with known and novel categories.
    Generate(GenerateArgs),
    /// Train the projection head and write a checkpoint and loss trace.
    Train(TrainArgs),
    /// Cluster the test split with a checkpoint and write accuracy reports.
    Eval(EvalArgs),
    /// Estimate the number of categories in the unlabeled split and print it.
    EstimateK(EstimateArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Total number of categories.
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Number of known categories (at most `--k`).
    #[arg(long, default_value_t = 4)]
    known: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Training instances per category, labeled plus unlabeled.
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Test instances per category.
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    /// Standard deviation of every category's Gaussian.
    #[arg(long, default_value_t = 0.5)]
    std: f64,
    /// Minimum distance between category centers.
    #[arg(long, default_value_t = 8.0)]
    sep: f64,
    /// Fraction of each known category's training instances that are labeled.
    #[arg(long, default_value_t = 0.5)]
    labeled_ratio: f64,
    /// Pick the known categories at random instead of the first `--known`.
    #[arg(long)]
    random_known: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: <output-root>/data].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Hyper-parameter overrides; unset flags fall back to the config file,
/// then to the defaults shown.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Softmax temperature [default: 0.07].
    #[arg(long)]
    tau: Option<f64>,
    /// Weight of the labeled-prototype regularizer [default: 10].
    #[arg(long)]
    gamma: Option<f64>,
    /// Moving-average momentum of labeled prototypes [default: 0.9].
    #[arg(long)]
    alpha: Option<f64>,
    /// Gradient-descent step size [default: 0.01].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Heavy-ball momentum [default: 0].
    #[arg(long)]
    momentum: Option<f64>,
    /// Training epochs [default: 10].
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed of every random stream [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Category count: a number, `auto` (from the dataset) or `estimate` [default: auto].
    #[arg(long)]
    k: Option<String>,
    /// Upper bound for K estimation, or `auto` for three times the known
    /// count; required by `estimate-k` [default: auto].
    #[arg(long)]
    k_max: Option<String>,
    /// K estimation drops groups below this fraction of the mean cluster size [default: 0.5].
    #[arg(long)]
    threshold_factor: Option<f64>,
    /// Head activation, `identity` or `tanh` [default: identity].
    #[arg(long)]
    activation: Option<String>,
    /// Std of the perturbation added to the identity head at init [default: 0.01].
    #[arg(long)]
    init_noise: Option<f64>,
    /// Lloyd iterations per k-means run [default: 300].
    #[arg(long)]
    kmeans_max_iter: Option<usize>,
    /// k-means convergence tolerance on center movement [default: 0.000001].
    #[arg(long)]
    kmeans_tol: Option<f64>,
    /// k-means seedings per clustering, best inertia kept [default: 10].
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// Stop gradients through the similarity weights [default: false].
    #[arg(long)]
    detach_weights: bool,
    /// Re-solve the prototype matching every n epochs, 0 for never [default: 0].
    #[arg(long)]
    rematch_period: Option<usize>,
    /// Re-cluster the unlabeled data every n epochs, 0 for never [default: 0].
    #[arg(long)]
    recluster_period: Option<usize>,
    /// Map known and novel test subsets separately [default: false].
    #[arg(long)]
    per_subset_mapping: bool,
    /// Drop the labeled cross-entropy term [default: false].
    #[arg(long)]
    no_ce: bool,
    /// Replace labeled prototypes each epoch instead of averaging [default: false].
    #[arg(long)]
    no_ema: bool,
    /// One soft-assignment term over all unlabeled data [default: false].
    #[arg(long)]
    no_decouple: bool,
    /// Hard-assignment prototypical loss [default: false].
    #[arg(long)]
    no_soft_assignment: bool,
    /// Uniform weights instead of the similarity softmax [default: false].
    #[arg(long)]
    no_semantic_weights: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> dpn_core::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        };
        let values: [(&str, Option<String>); 17] = [
            ("tau", self.tau.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("momentum", self.momentum.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("k", self.k.clone()),
            ("k_max", self.k_max.clone()),
            ("threshold_factor", self.threshold_factor.map(|v| v.to_string())),
            ("activation", self.activation.clone()),
            ("init_noise", self.init_noise.map(|v| v.to_string())),
            ("kmeans_max_iter", self.kmeans_max_iter.map(|v| v.to_string())),
            ("kmeans_tol", self.kmeans_tol.map(|v| v.to_string())),
            ("kmeans_restarts", self.kmeans_restarts.map(|v| v.to_string())),
            ("rematch_period", self.rematch_period.map(|v| v.to_string())),
            ("recluster_period", self.recluster_period.map(|v| v.to_string())),
        ];
        for (key, value) in values {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        config.detach_weights |= self.detach_weights;
        config.per_subset_mapping |= self.per_subset_mapping;
        let switches = [
            self.no_ce,
            self.no_ema,
            self.no_decouple,
            self.no_soft_assignment,
            self.no_semantic_weights,
        ];
        for (name, on) in AblationFlags::NAMES.iter().zip(switches) {
            if on {
                config.ablation.set(name, true)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest or the directory holding it.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory [default: <output-root>/train].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset manifest or the directory holding it.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train` [default: <output-root>/train/checkpoint.txt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also estimate K on the embedded unlabeled data with this upper bound.
    #[arg(long)]
    estimate_k_max: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory [default: <output-root>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Dataset manifest or the directory holding it.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory [default: <output-root>/estimate-k].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(out: &Option<PathBuf>, root: &Path, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| root.join(name))
}

fn run(cli: Cli) -> dpn_core::Result<()> {
    let root = &cli.output_root;
    match cli.command {
        Command::Generate(a) => {
            let spec = SynthSpec {
                k_true: a.k,
                m: a.known,
                dim: a.dim,
                per_class_count: a.per_class,
                test_per_class: a.test_per_class,
                cluster_std: a.std,
                center_separation: a.sep,
                labeled_ratio: a.labeled_ratio,
                random_known: a.random_known,
                seed: a.seed,
            };
            let manifest = run_generate(&spec, &out_dir(&a.out, root, "data"))?;
            println!("{}", manifest.display());
        }
        Command::Train(a) => {
            let config = a.config.resolve()?;
            let out = out_dir(&a.out, root, "train");
            let state = run_train(&a.data, &config, &out)?;
            if let (Some(first), Some(last)) = (state.loss_trace.first(), state.loss_trace.last()) {
                println!("loss {} -> {} over {} epochs", first.total, last.total, state.epoch);
            }
            println!("{}", out.join(CHECKPOINT_FILE).display());
        }
        Command::Eval(a) => {
            let config = a.config.resolve()?;
            let checkpoint = a.checkpoint.unwrap_or_else(|| root.join("train").join(CHECKPOINT_FILE));
            let report = run_eval(
                &a.data,
                &checkpoint,
                &config,
                a.estimate_k_max,
                &out_dir(&a.out, root, "eval"),
            )?;
            print!("{}", dpn_core::evaluation::report_text(&report));
        }
        Command::EstimateK(a) => {
            let config = a.config.resolve()?;
            let k_max = config
                .k_max
                .ok_or_else(|| Error::Config("estimate-k needs --k-max".into()))?;
            let estimate = run_estimate_k(&a.data, &config, k_max, &out_dir(&a.out, root, "estimate-k"))?;
            println!("{}", estimate.k);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli).context("dpn failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            // Bad arguments share clap's usage exit code.
            let usage = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Config(_) | Error::InfeasibleK { .. })
            );
            log::debug!("{e:?}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
