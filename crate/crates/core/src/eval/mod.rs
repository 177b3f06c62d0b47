//! NMSE evaluation, SNR sweeps with paired noise, the training-size,
//! pre-train/fine-tune and cross-scenario protocols, and CSV records.

mod plan;
mod protocols;
mod records;

pub use plan::{ExperimentPlan, PlanError};
pub use protocols::{cross_eval, pretrain_finetune, training_size_study, FinetunePlan, ScenarioData};
pub use records::{canonical_order, emit_csv, parse_csv, read_csv, write_csv, CSV_HEADER};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{noise_variance, observe_at_snr, streams};
use crate::estimators::{genie_omp_estimate, EstimatorError, FittedLmmse, LmmseFilter, OmpDictionary};
use crate::linalg::{ComplexVec, HermitianMatrix, C64};
use crate::vae::{Vae, VaeError};

/// SNR grid in dB used when a plan does not give one.
pub const DEFAULT_SNR_GRID: [f64; 8] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {estimates} estimates for {truths} channels")]
    CountMismatch { estimates: usize, truths: usize },
    #[error("sample {index}: estimate has length {got}, channel has length {expected}")]
    LengthMismatch { index: usize, expected: usize, got: usize },
    #[error("cannot compute NMSE of an empty set")]
    Empty,
    #[error("estimator '{estimator}' failed at {snr_db} dB: {message}")]
    Estimator { estimator: String, snr_db: f64, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// `(1/(T N)) sum_i ||h_i - h_hat_i||^2`
pub fn nmse(estimates: &[ComplexVec], truths: &[ComplexVec]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(EvalError::CountMismatch { estimates: estimates.len(), truths: truths.len() });
    }
    if truths.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = truths[0].len();
    let mut err = 0.0;
    for (index, (e, h)) in estimates.iter().zip(truths).enumerate() {
        if e.len() != h.len() || h.len() != n {
            return Err(EvalError::LengthMismatch { index, expected: n, got: e.len() });
        }
        err += e.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(err / (truths.len() * n) as f64)
}

/// One NMSE measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub estimator: String,
    pub scenario: String,
    pub snr_db: f64,
    pub nmse: f64,
    pub samples: usize,
    pub extras: BTreeMap<String, String>,
}

impl EvalRecord {
    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extras.insert(key.to_string(), value.to_string());
        self
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extras.get(key).map(String::as_str)
    }
}

/// An estimator ready to run on a batch of observations.
#[derive(Debug, Clone)]
pub enum Estimator {
    Ls,
    SampleLmmse(FittedLmmse),
    GenieOmp { dict: OmpDictionary, k_max: usize },
    Vae(Box<Vae>),
    /// Conditional mean under a known zero-mean Gaussian prior.
    Oracle(HermitianMatrix),
}

impl Estimator {
    /// Estimates for observations `ys` at common noise variance `noise_var`.
    /// The genie needs the true channels.
    pub fn run(&self, ys: &[ComplexVec], truths: &[ComplexVec], noise_var: f64) -> std::result::Result<Vec<ComplexVec>, EstimatorError> {
        let linalg = |sample: usize| move |source| EstimatorError::Linalg { sample, source };
        match self {
            Estimator::Ls => Ok(ys.to_vec()),
            Estimator::SampleLmmse(fit) => {
                let f = fit.filter(noise_var).map_err(linalg(0))?;
                ys.par_iter().enumerate().map(|(i, y)| f.apply(y).map_err(linalg(i))).collect()
            }
            Estimator::GenieOmp { dict, k_max } => {
                Ok(ys.par_iter().zip(truths).map(|(y, h)| genie_omp_estimate(dict, y, h, *k_max).estimate).collect())
            }
            Estimator::Vae(model) => Ok(model.estimate(ys, &vec![noise_var; ys.len()])?),
            Estimator::Oracle(c0) => {
                let f = LmmseFilter::new(&vec![C64::new(0.0, 0.0); c0.dim()], c0, noise_var).map_err(linalg(0))?;
                ys.par_iter().enumerate().map(|(i, y)| f.apply(y).map_err(linalg(i))).collect()
            }
        }
    }
}

/// A labelled estimator; the label becomes the `estimator` column.
#[derive(Debug, Clone)]
pub struct Arm {
    pub id: String,
    pub estimator: Estimator,
    pub extras: BTreeMap<String, String>,
}

impl Arm {
    pub fn new(id: &str, estimator: Estimator) -> Self {
        Self { id: id.to_string(), estimator, extras: BTreeMap::new() }
    }

    pub fn with_extra(mut self, key: &str, value: impl ToString) -> Self {
        self.extras.insert(key.to_string(), value.to_string());
        self
    }
}

/// An arm that failed at one SNR; the sweep carries on without its row.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmFailure {
    pub estimator: String,
    pub snr_db: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<ArmFailure>,
}

impl SweepOutcome {
    /// Turns the first failure into an error.
    pub fn into_records(self) -> Result<Vec<EvalRecord>> {
        match self.failures.into_iter().next() {
            Some(f) => Err(EvalError::Estimator { estimator: f.estimator, snr_db: f.snr_db, message: f.message }),
            None => Ok(self.records),
        }
    }
}

/// Corrupts `test` once per grid SNR (noise seeded by `seed` and the SNR)
/// and runs every arm on the same observations.
pub fn snr_sweep(arms: &[Arm], scenario: &str, test: &[ComplexVec], grid: &[f64], seed: u64) -> SweepOutcome {
    let mut out = SweepOutcome::default();
    for &snr_db in grid {
        let ys = observe_at_snr(test, snr_db, seed, streams::EVAL_NOISE);
        let var = noise_variance(snr_db);
        for arm in arms {
            let result = arm
                .estimator
                .run(&ys, test, var)
                .map_err(|e| e.to_string())
                .and_then(|est| nmse(&est, test).map_err(|e| e.to_string()))
                .and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("non-finite NMSE {v}")) });
            match result {
                Ok(nmse) => out.records.push(EvalRecord {
                    estimator: arm.id.clone(),
                    scenario: scenario.to_string(),
                    snr_db,
                    nmse,
                    samples: test.len(),
                    extras: arm.extras.clone(),
                }),
                Err(message) => {
                    log::warn!("{} at {snr_db} dB failed: {message}", arm.id);
                    out.failures.push(ArmFailure { estimator: arm.id.clone(), snr_db, message });
                }
            }
        }
    }
    out
}
