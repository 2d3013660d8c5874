//! File-level runs: generate, train, eval and estimate-k over an output
//! directory, each recorded by a run manifest written before any result.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::Config;
use crate::data_io::{generate_synthetic, load_manifest, save_dataset, LoadedDataset, SynthSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    confusion_tsv, estimate_k_detailed, evaluate, metrics_tsv, prototype_distances_tsv, report_text, EvalOptions,
    EvalReport, KEstimate,
};
use crate::learning::checkpoint::{load_checkpoint, loss_trace_tsv, save_checkpoint};
use crate::learning::{train, TrainState};

pub const RUN_MANIFEST_FILE: &str = "run.txt";
pub const LOCK_FILE: &str = ".lock";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const LOSS_TRACE_FILE: &str = "loss_trace.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CONFUSION_FILE: &str = "confusion.tsv";
pub const PROTOTYPE_DISTANCES_FILE: &str = "prototype_distances.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const ESTIMATE_FILE: &str = "estimate_k.tsv";

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Held for the duration of a run; the lock file goes away on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// What a run consumed and how it was configured.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<Config>,
    pub synth: Option<SynthSpec>,
    /// `(role, path)` pairs such as `("dataset", "data/manifest.txt")`.
    pub inputs: Vec<(String, PathBuf)>,
    pub output_dir: PathBuf,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub engine_version: String,
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config: None,
            synth: None,
            inputs: Vec::new(),
            output_dir: output_dir.to_path_buf(),
            started: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            engine_version: ENGINE_VERSION.to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "command={}\nengine_version={}\nstarted={}\noutput_dir={}\n",
            self.command,
            self.engine_version,
            self.started,
            self.output_dir.display()
        );
        for (role, path) in &self.inputs {
            out.push_str(&format!("input.{role}={}\n", path.display()));
        }
        if let Some(spec) = &self.synth {
            out.push_str("[synth]\n");
            out.push_str(&synth_to_text(spec));
        }
        if let Some(config) = &self.config {
            out.push_str("[config]\n");
            out.push_str(&config.to_text());
        }
        out
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.output_dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn synth_to_text(spec: &SynthSpec) -> String {
    format!(
        "k_true={}\nm={}\ndim={}\nper_class_count={}\ntest_per_class={}\ncluster_std={}\n\
         center_separation={}\nlabeled_ratio={}\nrandom_known={}\nseed={}\n",
        spec.k_true,
        spec.m,
        spec.dim,
        spec.per_class_count,
        spec.test_per_class,
        spec.cluster_std,
        spec.center_separation,
        spec.labeled_ratio,
        spec.random_known,
        spec.seed
    )
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load(dataset: &Path) -> Result<LoadedDataset> {
    let loaded = load_manifest(dataset)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded)
}

/// Samples a synthetic dataset into `out`; returns the dataset manifest path.
pub fn run_generate(spec: &SynthSpec, out: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let _lock = OutputLock::acquire(out)?;
    let mut manifest = RunManifest::new("generate", out);
    manifest.synth = Some(spec.clone());
    manifest.write()?;
    let dataset = generate_synthetic(spec)?;
    save_dataset(&dataset, out)
}

/// Trains on the dataset at `dataset` (manifest or its directory) and
/// writes the checkpoint and loss trace into `out`.
pub fn run_train(dataset: &Path, config: &Config, out: &Path) -> Result<TrainState> {
    config.validate()?;
    let _lock = OutputLock::acquire(out)?;
    let mut manifest = RunManifest::new("train", out);
    manifest.config = Some(config.clone());
    manifest.inputs.push(("dataset".into(), dataset.to_path_buf()));
    manifest.write()?;

    let loaded = load(dataset)?;
    let state = train(&loaded.dataset.training_view(), config)?;
    save_checkpoint(&state, &out.join(CHECKPOINT_FILE))?;
    write(&out.join(LOSS_TRACE_FILE), &loss_trace_tsv(&state.loss_trace))?;
    Ok(state)
}

/// Scores a checkpoint on the test split and writes the metric files.
pub fn run_eval(
    dataset: &Path,
    checkpoint: &Path,
    config: &Config,
    estimate_k_max: Option<usize>,
    out: &Path,
) -> Result<EvalReport> {
    config.validate()?;
    if !checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    let _lock = OutputLock::acquire(out)?;
    let mut manifest = RunManifest::new("eval", out);
    manifest.config = Some(config.clone());
    manifest.inputs.push(("dataset".into(), dataset.to_path_buf()));
    manifest.inputs.push(("checkpoint".into(), checkpoint.to_path_buf()));
    manifest.write()?;

    let loaded = load(dataset)?;
    let state = load_checkpoint(checkpoint)?;
    let report = evaluate(
        &state,
        &loaded.dataset,
        &EvalOptions::from_config(config, estimate_k_max),
    )?;
    write(&out.join(METRICS_FILE), &metrics_tsv(&report))?;
    write(&out.join(CONFUSION_FILE), &confusion_tsv(&report))?;
    write(&out.join(PROTOTYPE_DISTANCES_FILE), &prototype_distances_tsv(&report))?;
    write(&out.join(REPORT_FILE), &report_text(&report))?;
    Ok(report)
}

/// Estimates K on the raw unlabeled embeddings of a dataset.
pub fn run_estimate_k(dataset: &Path, config: &Config, k_max: usize, out: &Path) -> Result<KEstimate> {
    config.validate()?;
    if k_max < 2 {
        return Err(Error::Config(format!("k_max must be >= 2, got {k_max}")));
    }
    let _lock = OutputLock::acquire(out)?;
    let mut manifest = RunManifest::new("estimate-k", out);
    manifest.config = Some(config.clone());
    manifest.inputs.push(("dataset".into(), dataset.to_path_buf()));
    manifest.write()?;

    let loaded = load(dataset)?;
    let points: Vec<&[f64]> = loaded.dataset.unlabeled().iter().map(|r| r.vector.as_slice()).collect();
    let estimate = estimate_k_detailed(
        &points,
        k_max,
        config.threshold_factor,
        config.seed,
        config.kmeans_restarts,
    )?;
    let sizes: Vec<String> = estimate.group_sizes.iter().map(|s| s.to_string()).collect();
    write(
        &out.join(ESTIMATE_FILE),
        &format!(
            "metric\tvalue\nestimated_k\t{}\nk_max\t{}\nmin_size\t{}\ngroup_sizes\t{}\n",
            estimate.k,
            estimate.k_max,
            estimate.min_size,
            sizes.join(",")
        ),
    )?;
    Ok(estimate)
}
