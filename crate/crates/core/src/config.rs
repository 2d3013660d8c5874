//! Run configuration and its flat `key=value` text form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How the total category count is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KChoice {
    /// Use `LabelSpace::k()` of the dataset.
    Auto,
    Fixed(usize),
    /// Estimate from the unlabeled embeddings with `k_max`.
    Estimate,
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
            KChoice::Estimate => f.write_str("estimate"),
        }
    }
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(KChoice::Auto),
            "estimate" => Ok(KChoice::Estimate),
            other => match other.parse::<usize>() {
                Ok(k) if k > 0 => Ok(KChoice::Fixed(k)),
                _ => Err(Error::Config(format!(
                    "k must be a positive integer, `auto` or `estimate`, got `{other}`"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Model variants that switch off one component of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Drop the labeled cross-entropy term.
    pub no_ce: bool,
    /// Overwrite labeled prototypes each epoch instead of the moving average.
    pub no_ema: bool,
    /// One soft-assignment term over all unlabeled data and all clusters.
    pub no_decouple: bool,
    /// Hard-assignment prototypical loss in place of the soft one.
    pub no_soft_assignment: bool,
    /// Uniform weights in place of the similarity softmax.
    pub no_semantic_weights: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 5] = [
        "no_ce",
        "no_ema",
        "no_decouple",
        "no_soft_assignment",
        "no_semantic_weights",
    ];

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "no_ce" => self.no_ce,
            "no_ema" => self.no_ema,
            "no_decouple" => self.no_decouple,
            "no_soft_assignment" => self.no_soft_assignment,
            "no_semantic_weights" => self.no_semantic_weights,
            _ => return None,
        })
    }

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "no_ce" => &mut self.no_ce,
            "no_ema" => &mut self.no_ema,
            "no_decouple" => &mut self.no_decouple,
            "no_soft_assignment" => &mut self.no_soft_assignment,
            "no_semantic_weights" => &mut self.no_semantic_weights,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        *self
            .slot(name)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{name}`")))? = on;
        Ok(())
    }
}

/// Hyper-parameters for training, clustering and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Softmax temperature of the similarity weights.
    pub tau: f64,
    /// Weight of the labeled-prototype regularizer.
    pub gamma: f64,
    /// Moving-average momentum for labeled prototypes (weight on the old value).
    pub alpha: f64,
    pub learning_rate: f64,
    /// Heavy-ball momentum for gradient descent; 0 is plain descent.
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub k: KChoice,
    /// Upper bound for K estimation. `None` means three times the known count.
    pub k_max: Option<usize>,
    /// Clusters smaller than this fraction of the mean size are dropped by K estimation.
    pub threshold_factor: f64,
    pub activation: Activation,
    /// Std of the Gaussian perturbation added to the identity head at init.
    pub init_noise: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// k-means seedings per clustering; the lowest-inertia run is kept.
    pub kmeans_restarts: usize,
    /// Stop gradients through the similarity weights.
    pub detach_weights: bool,
    /// Re-solve the prototype matching every n epochs (0 = never).
    pub rematch_period: usize,
    /// Re-cluster unlabeled data and rebuild the decoupling every n epochs (0 = never).
    pub recluster_period: usize,
    /// Remap known/novel subsets separately at evaluation instead of one global mapping.
    pub per_subset_mapping: bool,
    pub ablation: AblationFlags,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            tau: 0.07,
            gamma: 10.0,
            alpha: 0.9,
            learning_rate: 1e-2,
            momentum: 0.0,
            epochs: 10,
            seed: 0,
            k: KChoice::Auto,
            k_max: None,
            threshold_factor: 0.5,
            activation: Activation::Identity,
            init_noise: 0.01,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            kmeans_restarts: 10,
            detach_weights: false,
            rematch_period: 0,
            recluster_period: 0,
            per_subset_mapping: false,
            ablation: AblationFlags::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be > 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.threshold_factor > 0.0 && self.threshold_factor < 1.0) {
            return bad("threshold_factor must lie in (0, 1)");
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return bad("init_noise must be >= 0");
        }
        if self.kmeans_max_iter == 0 {
            return bad("kmeans_max_iter must be positive");
        }
        if self.kmeans_restarts == 0 {
            return bad("kmeans_restarts must be positive");
        }
        if self.kmeans_tol.is_nan() || self.kmeans_tol < 0.0 {
            return bad("kmeans_tol must be >= 0");
        }
        if matches!(self.k_max, Some(k) if k < 2) {
            return bad("k_max must be >= 2");
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "tau" => self.tau = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "k" => self.k = value.parse()?,
            "k_max" => {
                self.k_max = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "threshold_factor" => self.threshold_factor = parse_value(key, value)?,
            "activation" => self.activation = value.parse()?,
            "init_noise" => self.init_noise = parse_value(key, value)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse_value(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse_value(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse_value(key, value)?,
            "detach_weights" => self.detach_weights = parse_value(key, value)?,
            "rematch_period" => self.rematch_period = parse_value(key, value)?,
            "recluster_period" => self.recluster_period = parse_value(key, value)?,
            "per_subset_mapping" => self.per_subset_mapping = parse_value(key, value)?,
            other => {
                let on = parse_value(other, value)?;
                self.ablation.set(other, on)?;
            }
        }
        Ok(())
    }

    /// Applies a flat `key=value` text on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{raw}`", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Config::default();
        config.merge_text(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Resolved configuration as `key=value` lines; `merge_text` reads it back.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("tau={}", self.tau),
            format!("gamma={}", self.gamma),
            format!("alpha={}", self.alpha),
            format!("learning_rate={}", self.learning_rate),
            format!("momentum={}", self.momentum),
            format!("epochs={}", self.epochs),
            format!("seed={}", self.seed),
            format!("k={}", self.k),
            format!(
                "k_max={}",
                self.k_max.map_or_else(|| "auto".to_string(), |k| k.to_string())
            ),
            format!("threshold_factor={}", self.threshold_factor),
            format!("activation={}", self.activation),
            format!("init_noise={}", self.init_noise),
            format!("kmeans_max_iter={}", self.kmeans_max_iter),
            format!("kmeans_tol={}", self.kmeans_tol),
            format!("kmeans_restarts={}", self.kmeans_restarts),
            format!("detach_weights={}", self.detach_weights),
            format!("rematch_period={}", self.rematch_period),
            format!("recluster_period={}", self.recluster_period),
            format!("per_subset_mapping={}", self.per_subset_mapping),
        ];
        for name in AblationFlags::NAMES {
            lines.push(format!("{name}={}", self.ablation.get(name).unwrap_or(false)));
        }
        lines.join("\n") + "\n"
    }
}
