//! Plain-text `key = value` run configuration.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys are the trainer keys plus the dataset keys below.

use std::path::{Path, PathBuf};

use crate::env::Dataset;
use crate::error::{AceError, Result};
use crate::trainer::{TrainerConfig, TRAINER_KEYS};

pub const DATASET_KEYS: &[&str] = &["tasks_file", "vocab_size", "modulus", "length", "num_tasks"];

/// Where training prompts come from: a task file, or a generated mod_sum family.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub tasks_file: Option<PathBuf>,
    pub vocab_size: usize,
    pub modulus: usize,
    pub length: usize,
    pub num_tasks: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tasks_file: None,
            vocab_size: 5,
            modulus: 5,
            length: 4,
            num_tasks: 8,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        match &self.tasks_file {
            Some(path) => Dataset::load(path),
            None => Dataset::mod_sum(self.vocab_size, self.modulus, self.length, self.num_tasks),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub dataset: DatasetConfig,
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    value.trim().parse().map_err(|_| {
        AceError::config(
            key,
            format!("expected a non-negative integer, got `{}`", value.trim()),
        )
    })
}

/// Splits config text into `(key, value)` pairs without interpreting them.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(AceError::config(
                format!("line {}", n + 1),
                format!("expected `key = value`, got `{line}`"),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn is_key(key: &str) -> bool {
        TRAINER_KEYS.contains(&key) || DATASET_KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tasks_file" => {
                self.dataset.tasks_file = match value.trim() {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "vocab_size" => self.dataset.vocab_size = parse_count(key, value)?,
            "modulus" => self.dataset.modulus = parse_count(key, value)?,
            "length" => self.dataset.length = parse_count(key, value)?,
            "num_tasks" => self.dataset.num_tasks = parse_count(key, value)?,
            _ => self.trainer.set(key, value)?,
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let d = &self.dataset;
        let mut pairs: Vec<(String, String)> = self
            .trainer
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        pairs.push((
            "tasks_file".into(),
            d.tasks_file
                .as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
        ));
        pairs.push(("vocab_size".into(), d.vocab_size.to_string()));
        pairs.push(("modulus".into(), d.modulus.to_string()));
        pairs.push(("length".into(), d.length.to_string()));
        pairs.push(("num_tasks".into(), d.num_tasks.to_string()));
        pairs
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
