//! Plain-text experiment plans: one `key = value` per line, `#` comments.
//!
//! ```text
//! estimators = vae, ls, lmmse
//! snr_grid = -10, 0, 10, 20
//! sizes = 100, 1000
//! finetune_sizes = 0, 1000
//! seed = 3
//! eval_snr = 20
//! source = B
//! target = A
//! scenarios = A, B
//! dataset.A.train = data/A/train.cedf
//! checkpoint.B = models/b.cevm
//! config.epochs = 50
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use super::DEFAULT_SNR_GRID;
use crate::vae::VaeConfig;

#[derive(Debug, Error, PartialEq)]
#[error("plan line {line}: {message}")]
pub struct PlanError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub estimators: Vec<String>,
    pub snr_grid: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub finetune_sizes: Vec<usize>,
    pub seed: u64,
    /// SNR of the single-point training-size study.
    pub eval_snr_db: f64,
    pub source: Option<String>,
    pub target: Option<String>,
    pub scenarios: Vec<String>,
    /// `<scenario>.<split>` to a dataset file.
    pub datasets: BTreeMap<String, PathBuf>,
    /// Scenario tag to a trained model file.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Model configuration overrides, applied with [`VaeConfig::set`].
    pub config: BTreeMap<String, String>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            estimators: vec!["vae".into(), "ls".into()],
            snr_grid: DEFAULT_SNR_GRID.to_vec(),
            train_sizes: Vec::new(),
            finetune_sizes: Vec::new(),
            seed: 0,
            eval_snr_db: 20.0,
            source: None,
            target: None,
            scenarios: Vec::new(),
            datasets: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            config: BTreeMap::new(),
        }
    }
}

fn list<T: std::str::FromStr>(value: &str, what: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("cannot parse '{s}' as {what}")))
        .collect()
}

fn scalar<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse '{value}' as {what}"))
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<Self, PlanError> {
        let mut plan = Self::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| PlanError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(err("missing key".into()));
            }
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(err(format!("'{key}' already set on line {first}")));
            }
            plan.set(key, value).map_err(err)?;
        }
        plan.validate().map_err(|message| PlanError { line: 0, message })?;
        Ok(plan)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "estimators" => self.estimators = list(value, "an estimator id")?,
            "snr_grid" => self.snr_grid = list(value, "an SNR in dB")?,
            "sizes" => self.train_sizes = list(value, "a sample count")?,
            "finetune_sizes" => self.finetune_sizes = list(value, "a sample count")?,
            "seed" => self.seed = scalar(value, "a seed")?,
            "eval_snr" => self.eval_snr_db = scalar(value, "an SNR in dB")?,
            "source" => self.source = Some(value.to_string()),
            "target" => self.target = Some(value.to_string()),
            "scenarios" => self.scenarios = list(value, "a scenario tag")?,
            _ => {
                if let Some(name) = key.strip_prefix("dataset.") {
                    if !name.contains('.') {
                        return Err(format!("dataset key '{key}' must look like dataset.<scenario>.<split>"));
                    }
                    self.datasets.insert(name.to_string(), PathBuf::from(value));
                } else if let Some(tag) = key.strip_prefix("checkpoint.") {
                    self.checkpoints.insert(tag.to_string(), PathBuf::from(value));
                } else if let Some(field) = key.strip_prefix("config.") {
                    VaeConfig::default().set(field, value).map_err(|e| e.to_string())?;
                    self.config.insert(field.to_string(), value.to_string());
                } else {
                    return Err(format!("unknown key '{key}'"));
                }
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        if self.snr_grid.is_empty() {
            return Err("SNR grid is empty".into());
        }
        if self.snr_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("SNR grid must be strictly increasing".into());
        }
        for (name, sizes) in [("sizes", &self.train_sizes), ("finetune_sizes", &self.finetune_sizes)] {
            if sizes.windows(2).any(|w| w[0] > w[1]) {
                return Err(format!("{name} must be sorted ascending"));
            }
        }
        Ok(())
    }

    /// Dataset path for `<scenario>.<split>`.
    pub fn dataset(&self, scenario: &str, split: &str) -> Option<&PathBuf> {
        self.datasets.get(&format!("{scenario}.{split}"))
    }

    /// Applies the plan's configuration overrides on top of `base`.
    pub fn vae_config(&self, base: &VaeConfig) -> crate::vae::Result<VaeConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "\
# transfer study
estimators = vae, ls
snr_grid = -10, 0, 10   # coarse
sizes = 100, 1000
finetune_sizes = 0, 1000
seed = 3
eval_snr = 15
source = B
target = A
scenarios = A, B
dataset.A.train = a/train.cedf
checkpoint.B = b.cevm
config.epochs = 5
";
        let p = ExperimentPlan::parse(text).unwrap();
        assert_eq!(p.estimators, ["vae", "ls"]);
        assert_eq!(p.snr_grid, [-10.0, 0.0, 10.0]);
        assert_eq!(p.train_sizes, [100, 1000]);
        assert_eq!(p.finetune_sizes, [0, 1000]);
        assert_eq!(p.seed, 3);
        assert_eq!(p.eval_snr_db, 15.0);
        assert_eq!(p.source.as_deref(), Some("B"));
        assert_eq!(p.dataset("A", "train"), Some(&PathBuf::from("a/train.cedf")));
        assert_eq!(p.checkpoints["B"], PathBuf::from("b.cevm"));
        assert_eq!(p.vae_config(&VaeConfig::default()).unwrap().max_epochs, 5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = ExperimentPlan::parse("seed = 1\n\nsizes 100\n").unwrap_err();
        assert_eq!(bad.line, 3);
        assert_eq!(ExperimentPlan::parse("seed = 1\nfoo = 2\n").unwrap_err().line, 2);
        assert_eq!(ExperimentPlan::parse("seed = x\n").unwrap_err().line, 1);
        assert_eq!(ExperimentPlan::parse("seed = 1\nseed = 2\n").unwrap_err().line, 2);
        assert_eq!(ExperimentPlan::parse("config.dropout = 1\n").unwrap_err().line, 1);
    }

    #[test]
    fn grid_must_be_sorted_and_nonempty() {
        assert!(ExperimentPlan::parse("snr_grid = 10, 0\n").is_err());
        assert!(ExperimentPlan::parse("snr_grid = \n").is_err());
        assert!(ExperimentPlan::parse("sizes = 1000, 100\n").is_err());
        assert_eq!(ExperimentPlan::parse("").unwrap().snr_grid, DEFAULT_SNR_GRID);
    }
}
