use std::fmt;
use std::str::FromStr;

use crate::advantage::ModulationKind;
use crate::error::{AceError, Result};
use crate::metrics::DEFAULT_KS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    Grpo,
    #[default]
    AceGrpo,
    Dapo,
    AceDapo,
}

impl Algorithm {
    /// Whether negative advantages are confidence-modulated.
    pub fn uses_ace(self) -> bool {
        matches!(self, Algorithm::AceGrpo | Algorithm::AceDapo)
    }

    pub fn is_dapo(self) -> bool {
        matches!(self, Algorithm::Dapo | Algorithm::AceDapo)
    }

    /// The same family without confidence modulation.
    pub fn baseline(self) -> Self {
        if self.is_dapo() {
            Algorithm::Dapo
        } else {
            Algorithm::Grpo
        }
    }

    /// The same family with confidence modulation.
    pub fn with_ace(self) -> Self {
        if self.is_dapo() {
            Algorithm::AceDapo
        } else {
            Algorithm::AceGrpo
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::AceGrpo => "ace_grpo",
            Algorithm::Dapo => "dapo",
            Algorithm::AceDapo => "ace_dapo",
        })
    }
}

impl FromStr for Algorithm {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo" => Ok(Algorithm::Grpo),
            "ace_grpo" => Ok(Algorithm::AceGrpo),
            "dapo" => Ok(Algorithm::Dapo),
            "ace_dapo" => Ok(Algorithm::AceDapo),
            other => Err(AceError::input(format!(
                "unknown algorithm `{other}` (expected grpo, ace_grpo, dapo or ace_dapo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(AceError::input(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Every knob of a training run. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub alpha: f64,
    pub kl_coeff: f64,
    pub clip_low: f64,
    /// `None` means: 0.28 for the DAPO family, `clip_low` otherwise.
    pub clip_high: Option<f64>,
    pub learning_rate: f64,
    pub steps: usize,
    pub algorithm: Algorithm,
    /// `None` means: on for the DAPO family, off otherwise.
    pub dynamic_sampling: Option<bool>,
    /// Per-token ratios with the sequence advantage broadcast (default), or
    /// one ratio per sequence.
    pub token_level_loss: bool,
    pub modulation: ModulationKind,
    /// Feed c̄ = c / T into the modulation (default) instead of raw c.
    pub normalize_confidence: bool,
    /// Report mean overconfidence on c̄ (default) instead of raw c.
    pub oef_normalized: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Gradient steps per batch against the same frozen π_old.
    pub inner_epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Fresh samples per task drawn at every checkpoint.
    pub eval_samples: usize,
    pub eval_ks: Vec<usize>,
    pub entropy_samples: usize,
    /// Supervised steps toward a random seed distribution before π_ref is frozen.
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_scale: f64,
    pub parallel: bool,
}

pub const DAPO_CLIP_HIGH: f64 = 0.28;

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            alpha: 1.0,
            kl_coeff: 0.001,
            clip_low: 0.2,
            clip_high: None,
            learning_rate: 0.03,
            steps: 200,
            algorithm: Algorithm::AceGrpo,
            dynamic_sampling: None,
            token_level_loss: true,
            modulation: ModulationKind::Softplus,
            normalize_confidence: true,
            oef_normalized: true,
            seed: 0,
            checkpoint_every: 25,
            inner_epochs: 1,
            optimizer: OptimizerKind::AdamW,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            eval_samples: 64,
            eval_ks: DEFAULT_KS.to_vec(),
            entropy_samples: 32,
            pretrain_steps: 0,
            pretrain_lr: 1.0,
            pretrain_scale: 1.0,
            parallel: true,
        }
    }
}

/// Keys accepted by [`TrainerConfig::set`], in documentation order.
pub const TRAINER_KEYS: &[&str] = &[
    "group_size",
    "alpha",
    "kl_coeff",
    "clip_low",
    "clip_high",
    "learning_rate",
    "steps",
    "algorithm",
    "dynamic_sampling",
    "token_level_loss",
    "modulation",
    "normalize_confidence",
    "oef_normalized",
    "seed",
    "checkpoint_every",
    "inner_epochs",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "weight_decay",
    "eval_samples",
    "eval_ks",
    "entropy_samples",
    "pretrain_steps",
    "pretrain_lr",
    "pretrain_scale",
    "parallel",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| AceError::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(AceError::config(
            key,
            format!("expected a boolean, got `{other}`"),
        )),
    }
}

fn parse_auto<T>(key: &str, value: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Option<T>> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        f(key, value).map(Some)
    }
}

/// Parses a comma-separated list of positive integers.
pub fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let list = value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<usize>(key, s))
        .collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(AceError::config(key, "list is empty"));
    }
    Ok(list)
}

impl TrainerConfig {
    pub fn effective_clip_high(&self) -> f64 {
        self.clip_high.unwrap_or(if self.algorithm.is_dapo() {
            DAPO_CLIP_HIGH
        } else {
            self.clip_low
        })
    }

    pub fn effective_dynamic_sampling(&self) -> bool {
        self.dynamic_sampling.unwrap_or(self.algorithm.is_dapo())
    }

    /// Sets one field from its textual config value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let map_err = |e: AceError| match e {
            AceError::Input(m) => AceError::config(key, m),
            other => other,
        };
        match key {
            "group_size" => self.group_size = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "kl_coeff" => self.kl_coeff = parse(key, value)?,
            "clip_low" => self.clip_low = parse(key, value)?,
            "clip_high" => self.clip_high = parse_auto(key, value, parse)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "algorithm" => self.algorithm = value.trim().parse().map_err(map_err)?,
            "dynamic_sampling" => self.dynamic_sampling = parse_auto(key, value, parse_bool)?,
            "token_level_loss" => self.token_level_loss = parse_bool(key, value)?,
            "modulation" => self.modulation = value.trim().parse().map_err(map_err)?,
            "normalize_confidence" => self.normalize_confidence = parse_bool(key, value)?,
            "oef_normalized" => self.oef_normalized = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "inner_epochs" => self.inner_epochs = parse(key, value)?,
            "optimizer" => self.optimizer = value.trim().parse().map_err(map_err)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "eval_ks" => self.eval_ks = parse_usize_list(key, value)?,
            "entropy_samples" => self.entropy_samples = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "pretrain_scale" => self.pretrain_scale = parse(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            _ => return Err(AceError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// `(key, value)` pairs in [`TRAINER_KEYS`] order; feeding them back through
    /// [`TrainerConfig::set`] reproduces the config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".to_string());
        vec![
            ("group_size", self.group_size.to_string()),
            ("alpha", self.alpha.to_string()),
            ("kl_coeff", self.kl_coeff.to_string()),
            ("clip_low", self.clip_low.to_string()),
            ("clip_high", auto(self.clip_high.map(|v| v.to_string()))),
            ("learning_rate", self.learning_rate.to_string()),
            ("steps", self.steps.to_string()),
            ("algorithm", self.algorithm.to_string()),
            (
                "dynamic_sampling",
                auto(self.dynamic_sampling.map(|v| v.to_string())),
            ),
            ("token_level_loss", self.token_level_loss.to_string()),
            ("modulation", self.modulation.to_string()),
            (
                "normalize_confidence",
                self.normalize_confidence.to_string(),
            ),
            ("oef_normalized", self.oef_normalized.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("inner_epochs", self.inner_epochs.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            (
                "eval_ks",
                self.eval_ks
                    .iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("entropy_samples", self.entropy_samples.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("pretrain_scale", self.pretrain_scale.to_string()),
            ("parallel", self.parallel.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(AceError::config(key, msg));
        if self.group_size < 2 {
            return bad(
                "group_size",
                format!("must be >= 2, got {}", self.group_size),
            );
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(
                "alpha",
                format!("must be a finite value >= 0, got {}", self.alpha),
            );
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return bad("kl_coeff", format!("must be >= 0, got {}", self.kl_coeff));
        }
        if !(self.clip_low > 0.0) {
            return bad("clip_low", format!("must be > 0, got {}", self.clip_low));
        }
        if !(self.effective_clip_high() >= self.clip_low) {
            return bad(
                "clip_high",
                format!(
                    "must be >= clip_low ({}), got {}",
                    self.clip_low,
                    self.effective_clip_high()
                ),
            );
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            );
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be >= 1".into());
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs", "must be >= 1".into());
        }
        if self.eval_samples == 0 {
            return bad("eval_samples", "must be >= 1".into());
        }
        if self.entropy_samples == 0 {
            return bad("entropy_samples", "must be >= 1".into());
        }
        if let Some(&k) = self
            .eval_ks
            .iter()
            .find(|&&k| k == 0 || k > self.eval_samples)
        {
            return bad(
                "eval_ks",
                format!(
                    "k = {k} must lie in [1, eval_samples = {}]",
                    self.eval_samples
                ),
            );
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta1", "Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "must be > 0".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be >= 0".into());
        }
        Ok(())
    }

    /// Sorted, de-duplicated pass@k grid.
    pub fn sorted_ks(&self) -> Vec<usize> {
        let mut ks = self.eval_ks.clone();
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}
