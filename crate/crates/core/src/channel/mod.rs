//! Synthetic channel data: sum-of-paths URA channels and a Gaussian
//! scenario with known covariance, dataset normalization, AWGN corruption
//! and the on-disk dataset format.

mod dataset;
mod rng;
mod scenario;

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset, MAGIC, VERSION};
pub use rng::{snr_stream, stream_rng, streams};
pub use scenario::{
    steering_vector, superpose_paths, GaussianConfig, GaussianSampler, Path, Scenario,
    ScenarioConfig, PRESET_NAMES,
};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{ComplexVec, HermitianMatrix, UraGeometry, C64};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("bad magic: expected \"CEDF\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown dataset kind byte {0}")]
    UnknownKind(u8),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("dataset has zero total energy and cannot be normalized")]
    AllZero,
    #[error("operation requires a {expected:?} dataset, got {got:?}")]
    WrongKind { expected: DatasetKind, got: DatasetKind },
    #[error("sample {index} has length {got}, expected {expected}")]
    SampleLength { index: usize, expected: usize, got: usize },
    #[error("invalid geometry in dataset header: {0}")]
    Geometry(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    Clean,
    Noisy,
}

/// Ordered collection of length-`N` channels or observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub geo: UraGeometry,
    pub kind: DatasetKind,
    pub samples: Vec<ComplexVec>,
    /// Per-sample noise variance; empty for clean datasets.
    pub noise_var: Vec<f64>,
    pub normalized: bool,
}

impl ChannelDataset {
    pub fn clean(geo: UraGeometry, samples: Vec<ComplexVec>) -> Result<Self> {
        let ds = Self { geo, kind: DatasetKind::Clean, samples, noise_var: Vec::new(), normalized: false };
        ds.check_lengths()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `count` samples (nested-subset semantics).
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            geo: self.geo,
            kind: self.kind,
            samples: self.samples[..count].to_vec(),
            noise_var: self.noise_var.iter().take(count).copied().collect(),
            normalized: self.normalized,
        }
    }

    /// `(1/(T N)) sum_i ||h_i||^2`
    pub fn mean_energy(&self) -> f64 {
        let n = self.geo.n() as f64;
        let total: f64 = self.samples.iter().map(|h| energy(h)).sum();
        total / (self.len() as f64 * n)
    }

    fn check_lengths(&self) -> Result<()> {
        let n = self.geo.n();
        for (index, s) in self.samples.iter().enumerate() {
            if s.len() != n {
                return Err(ChannelError::SampleLength { index, expected: n, got: s.len() });
            }
        }
        Ok(())
    }
}

fn energy(h: &[C64]) -> f64 {
    h.iter().map(|v| v.norm_sqr()).sum()
}

/// Applies the single global scale that makes `(1/(T N)) sum ||h_i||^2 = 1`.
pub fn normalize_dataset(ds: &ChannelDataset) -> Result<ChannelDataset> {
    if ds.kind != DatasetKind::Clean {
        return Err(ChannelError::WrongKind { expected: DatasetKind::Clean, got: ds.kind });
    }
    let total: f64 = ds.samples.iter().map(|h| energy(h)).sum();
    if !(total > 0.0) {
        return Err(ChannelError::AllZero);
    }
    let scale = ((ds.len() * ds.geo.n()) as f64 / total).sqrt();
    let samples = ds.samples.iter().map(|h| h.iter().map(|v| v * scale).collect()).collect();
    Ok(ChannelDataset { samples, normalized: true, ..ds.clone() })
}

/// `10^(-snr_db / 10)`
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Circularly-symmetric complex Gaussian noise with per-entry variance `var`.
pub fn complex_noise<R: Rng>(n: usize, var: f64, rng: &mut R) -> ComplexVec {
    let s = (var / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(s * re, s * im)
        })
        .collect()
}

/// `y = h + n` at the given SNR; returns `(y, noise variance)`.
pub fn add_awgn<R: Rng>(h: &[C64], snr_db: f64, rng: &mut R) -> (ComplexVec, f64) {
    let var = noise_variance(snr_db);
    let n = complex_noise(h.len(), var, rng);
    (h.iter().zip(n).map(|(a, b)| a + b).collect(), var)
}

/// How training observations are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SnrPolicy {
    Fixed(f64),
    /// Per-sample SNR drawn uniformly from `[lo, hi]` dB.
    Uniform(f64, f64),
}

impl SnrPolicy {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrPolicy::Fixed(db) => db,
            SnrPolicy::Uniform(lo, hi) => rng.random_range(lo..=hi),
        }
    }
}

impl Default for SnrPolicy {
    fn default() -> Self {
        SnrPolicy::Uniform(-10.0, 25.0)
    }
}

impl std::fmt::Display for SnrPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SnrPolicy::Fixed(db) => write!(f, "fixed:{db}"),
            SnrPolicy::Uniform(lo, hi) => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

impl std::str::FromStr for SnrPolicy {
    type Err = String;

    /// `fixed:<dB>` or `uniform:<lo>:<hi>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad SNR value '{v}' in '{s}'"));
        match parts.as_slice() {
            ["fixed", db] => Ok(SnrPolicy::Fixed(num(db)?)),
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("empty SNR range in '{s}'"));
                }
                Ok(SnrPolicy::Uniform(lo, hi))
            }
            _ => Err(format!("expected 'fixed:<dB>' or 'uniform:<lo>:<hi>', got '{s}'")),
        }
    }
}

/// Corrupts every clean sample once; sample `i` draws its SNR and noise
/// from its own stream position so the result is order independent.
pub fn noisy_dataset(clean: &ChannelDataset, policy: SnrPolicy, seed: u64, stream: u64) -> Result<ChannelDataset> {
    if clean.kind != DatasetKind::Clean {
        return Err(ChannelError::WrongKind { expected: DatasetKind::Clean, got: clean.kind });
    }
    let pairs: Vec<(ComplexVec, f64)> = clean
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let mut rng = stream_rng(seed, stream, i as u64);
            let snr = policy.draw(&mut rng);
            add_awgn(h, snr, &mut rng)
        })
        .collect();
    let (samples, noise_var) = pairs.into_iter().unzip();
    Ok(ChannelDataset { geo: clean.geo, kind: DatasetKind::Noisy, samples, noise_var, normalized: clean.normalized })
}

/// Noisy copies of `clean` at one fixed SNR; the noise of sample `i` depends
/// only on `(seed, stream, snr_db, i)`, so every estimator sees the same draw.
pub fn observe_at_snr(clean: &[ComplexVec], snr_db: f64, seed: u64, stream: u64) -> Vec<ComplexVec> {
    let stream = snr_stream(stream, snr_db);
    clean
        .par_iter()
        .enumerate()
        .map(|(i, h)| add_awgn(h, snr_db, &mut stream_rng(seed, stream, i as u64)).0)
        .collect()
}

/// Draws samples `start..start + count` of a scenario stream.
pub fn generate_samples(scenario: &Scenario, stream: u64, start: usize, count: usize) -> Result<Vec<ComplexVec>> {
    let seed = scenario.seed();
    match scenario {
        Scenario::Multipath(cfg) => {
            cfg.validate().map_err(ChannelError::Scenario)?;
            Ok((start..start + count)
                .into_par_iter()
                .map(|i| cfg.generate_channel(&mut stream_rng(seed, stream, i as u64)))
                .collect())
        }
        Scenario::Gaussian(cfg) => {
            let sampler = cfg.sampler();
            Ok((start..start + count)
                .into_par_iter()
                .map(|i| sampler.sample(&mut stream_rng(seed, stream, i as u64)))
                .collect())
        }
    }
}

/// Normalized clean train/validation/test datasets, each drawn from its own
/// stream and normalized on its own.
pub fn generate_split(scenario: &Scenario, train: usize, val: usize, test: usize) -> Result<[ChannelDataset; 3]> {
    let geo = scenario.geometry();
    let make = |stream, count| -> Result<ChannelDataset> {
        let ds = ChannelDataset::clean(geo, generate_samples(scenario, stream, 0, count)?)?;
        if count == 0 {
            return Ok(ds);
        }
        normalize_dataset(&ds)
    };
    Ok([make(streams::TRAIN, train)?, make(streams::VAL, val)?, make(streams::TEST, test)?])
}

/// Sample mean and (unbiased) sample covariance.
pub fn sample_moments(samples: &[ComplexVec]) -> (ComplexVec, HermitianMatrix) {
    let t = samples.len();
    let n = samples.first().map_or(0, |s| s.len());
    let mut mean = vec![C64::new(0.0, 0.0); n];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let mut cov = HermitianMatrix::zeros(n);
    let denom = (t.max(2) - 1) as f64;
    for s in samples {
        let d: ComplexVec = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
        cov.add_outer(&d, 1.0 / denom);
    }
    (mean, cov)
}

/// `(1/T) sum h h^H`, no mean removal.
pub fn second_moment(samples: &[ComplexVec]) -> HermitianMatrix {
    let n = samples.first().map_or(0, |s| s.len());
    let mut out = HermitianMatrix::zeros(n);
    for s in samples {
        out.add_outer(s, 1.0 / samples.len() as f64);
    }
    out
}
