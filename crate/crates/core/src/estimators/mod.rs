//! Channel estimators: the VAE conditional LMMSE, least squares, a global
//! sample-covariance LMMSE, genie-aided OMP, and the conditional mean for a
//! Gaussian prior with known covariance.

mod omp;

pub use omp::{genie_omp_estimate, OmpDictionary, OmpOutcome};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::sample_moments;
use crate::linalg::{Cholesky, ComplexVec, HermitianMatrix, LinalgError, C64};
use crate::vae::{Vae, VaeError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("linear algebra failure on sample {sample}: {source}")]
    Linalg { sample: usize, source: LinalgError },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error("cannot fit a sample covariance from {0} sample(s); need at least 2")]
    TooFewSamples(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// `h_hat = y`
pub fn ls_estimate(y: &[C64]) -> ComplexVec {
    y.to_vec()
}

/// `mu + C (C + s2 I)^{-1} (y - mu)` for a fixed prior `(mu, C)`, factored
/// once per noise variance.
#[derive(Debug, Clone)]
pub struct LmmseFilter {
    mean: ComplexVec,
    noise_var: f64,
    chol: Option<Cholesky>,
}

impl LmmseFilter {
    pub fn new(mean: &[C64], cov: &HermitianMatrix, noise_var: f64) -> std::result::Result<Self, LinalgError> {
        let chol = if noise_var == 0.0 {
            None
        } else {
            let mut ct = cov.clone();
            ct.add_to_diagonal(noise_var);
            Some(Cholesky::new(&ct)?)
        };
        Ok(Self { mean: mean.to_vec(), noise_var, chol })
    }

    /// Computed as `y - s2 (C + s2 I)^{-1} (y - mu)`; the identity when `s2 = 0`.
    pub fn apply(&self, y: &[C64]) -> std::result::Result<ComplexVec, LinalgError> {
        let Some(chol) = &self.chol else { return Ok(y.to_vec()) };
        let r: ComplexVec = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let u = chol.solve(&r)?;
        Ok(y.iter().zip(u).map(|(a, b)| a - b * self.noise_var).collect())
    }
}

/// Global sample mean and covariance used as a Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedLmmse {
    pub mean: ComplexVec,
    pub cov: HermitianMatrix,
    pub count: usize,
}

/// How the sample covariance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmmseFit {
    /// From clean channels.
    Clean,
    /// From noisy observations, `sample-cov(y) - mean(s2) I` with negative
    /// eigenvalues clipped to zero.
    Noisy,
}

impl FittedLmmse {
    pub fn fit_clean(samples: &[ComplexVec]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(EstimatorError::TooFewSamples(samples.len()));
        }
        let (mean, cov) = sample_moments(samples);
        Ok(Self { mean, cov, count: samples.len() })
    }

    pub fn fit_noisy(observations: &[ComplexVec], noise_var: &[f64]) -> Result<Self> {
        if observations.len() < 2 {
            return Err(EstimatorError::TooFewSamples(observations.len()));
        }
        if noise_var.len() != observations.len() {
            return Err(EstimatorError::Dimension { expected: observations.len(), got: noise_var.len() });
        }
        let (mean, mut cov) = sample_moments(observations);
        let avg = noise_var.iter().sum::<f64>() / noise_var.len() as f64;
        cov.add_to_diagonal(-avg);
        Ok(Self { mean, cov: clip_negative_eigenvalues(&cov), count: observations.len() })
    }

    pub fn filter(&self, noise_var: f64) -> std::result::Result<LmmseFilter, LinalgError> {
        LmmseFilter::new(&self.mean, &self.cov, noise_var)
    }
}

/// Projects a Hermitian matrix onto the PSD cone.
pub fn clip_negative_eigenvalues(m: &HermitianMatrix) -> HermitianMatrix {
    let n = m.dim();
    let dm = DMatrix::from_row_slice(n, n, m.as_slice());
    let eig = dm.symmetric_eigen();
    let d: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let v = &eig.eigenvectors;
    let mut out = HermitianMatrix::zeros(n);
    for (k, &dk) in d.iter().enumerate() {
        if dk > 0.0 {
            let col: ComplexVec = v.column(k).iter().copied().collect();
            out.add_outer(&col, dk);
        }
    }
    out
}

/// Conditional mean for a zero-mean Gaussian prior with covariance `c0`:
/// `C0 (C0 + s2 I)^{-1} y`.
pub fn oracle_cme(c0: &HermitianMatrix, y: &[C64], noise_var: f64) -> std::result::Result<ComplexVec, LinalgError> {
    LmmseFilter::new(&vec![C64::new(0.0, 0.0); c0.dim()], c0, noise_var)?.apply(y)
}

/// `tr(C0 - C0 (C0 + s2 I)^{-1} C0) / N`, the normalized MSE of [`oracle_cme`].
pub fn oracle_nmse(c0: &HermitianMatrix, noise_var: f64) -> std::result::Result<f64, LinalgError> {
    // C0 - C0 (C0 + s2 I)^{-1} C0 = s2 C0 (C0 + s2 I)^{-1}, whose trace is
    // s2 (N - s2 tr((C0 + s2 I)^{-1}))
    let n = c0.dim();
    let mut ct = c0.clone();
    ct.add_to_diagonal(noise_var);
    let inv = Cholesky::new(&ct)?.inverse();
    Ok(noise_var * (n as f64 - noise_var * inv.trace().re) / n as f64)
}

/// Runs the VAE estimator on a batch observed with common or per-sample noise variance.
pub fn vae_estimate(model: &Vae, ys: &[ComplexVec], noise_var: &[f64]) -> Result<Vec<ComplexVec>> {
    Ok(model.estimate(ys, noise_var)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ls_is_identity() {
        let y = vec![C64::new(1.0, -2.0), C64::new(0.5, 0.0)];
        assert_eq!(ls_estimate(&y), y);
    }

    #[test]
    fn identical_training_vectors_give_a_point_prior() {
        let v = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25), C64::new(0.0, 1.0)];
        let fit = FittedLmmse::fit_clean(&vec![v.clone(); 5]).unwrap();
        assert!(fit.cov.frobenius_norm() == 0.0);
        let y = vec![C64::new(9.0, 9.0), C64::new(-3.0, 1.0), C64::new(2.0, 2.0)];
        let est = fit.filter(0.3).unwrap().apply(&y).unwrap();
        for (a, b) in est.iter().zip(&v) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn single_sample_fit_is_rejected() {
        let v = vec![C64::new(1.0, 0.0)];
        assert!(matches!(FittedLmmse::fit_clean(&[v]), Err(EstimatorError::TooFewSamples(1))));
    }

    #[test]
    fn oracle_with_identity_prior_is_scalar_wiener() {
        let c0 = HermitianMatrix::identity(3);
        let y = vec![C64::new(1.0, 1.0), C64::new(-2.0, 0.0), C64::new(0.0, 3.0)];
        let est = oracle_cme(&c0, &y, 0.5).unwrap();
        for (a, b) in est.iter().zip(&y) {
            assert!((a - b / 1.5).norm() < 1e-12);
        }
        assert!((oracle_nmse(&c0, 0.5).unwrap() - 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn eigen_clipping_removes_negative_part() {
        let m = HermitianMatrix::from_diagonal(&[2.0, -1.0, 0.5]);
        let c = clip_negative_eigenvalues(&m);
        assert!((c.get(0, 0).re - 2.0).abs() < 1e-12);
        assert!(c.get(1, 1).norm() < 1e-12);
        assert!((c.get(2, 2).re - 0.5).abs() < 1e-12);
    }
}
