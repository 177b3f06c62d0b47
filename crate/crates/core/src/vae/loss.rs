use std::f64::consts::PI;

use crate::linalg::{Cholesky, ComplexVec, LinalgError, QOperator, C64};

/// Diagonal Gaussian posterior `N(mu, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Raw encoder output; `sigma = exp(log_sigma)`.
    pub log_sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn from_raw(mu: Vec<f64>, log_sigma: Vec<f64>) -> Self {
        let sigma = log_sigma.iter().map(|s| s.exp()).collect();
        Self { mu, sigma, log_sigma }
    }

    /// `z = mu + sigma * eps`
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).zip(eps).map(|((m, s), e)| m + s * e).collect()
    }

    /// `KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(-log sigma^2 + mu^2 + sigma^2 - 1)`
    pub fn kl(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.log_sigma)
            .map(|(m, s)| -2.0 * s + m * m + (2.0 * s).exp() - 1.0)
            .sum::<f64>()
    }

    /// Gradients of [`LatentGaussian::kl`] with respect to `mu` and `log_sigma`.
    pub fn kl_grad(&self) -> (Vec<f64>, Vec<f64>) {
        let d_mu = self.mu.clone();
        let d_s = self.log_sigma.iter().map(|s| (2.0 * s).exp() - 1.0).collect();
        (d_mu, d_s)
    }
}

/// Decoder output: conditional mean and positive grid weights `c` of
/// `C = Q^H diag(c) Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mu: ComplexVec,
    pub c: Vec<f64>,
}

impl ConditionalMoments {
    /// Splits `6N` raw decoder outputs: real mean, imaginary mean, log weights.
    pub fn from_raw(out: &[f64], n: usize) -> Self {
        let mu = (0..n).map(|i| C64::new(out[i], out[n + i])).collect();
        let c = out[2 * n..6 * n].iter().map(|v| v.exp()).collect();
        Self { mu, c }
    }
}

/// Value and gradient of the Gaussian negative log-likelihood.
#[derive(Debug, Clone)]
pub struct NllGrad {
    pub value: f64,
    /// `dL/dRe(mu) + j dL/dIm(mu)`
    pub d_mu: ComplexVec,
    /// `dL/dc`
    pub d_c: Vec<f64>,
}

/// `N log(pi) + log det(C~) + r^H C~^{-1} r` with `C~ = Q^H diag(c) Q + s2 I`
/// and `r = target - mu`.
pub fn reconstruction_nll(
    q: &QOperator,
    target: &[C64],
    mom: &ConditionalMoments,
    noise_var: f64,
) -> Result<f64, LinalgError> {
    let (chol, r) = factor(q, target, mom, noise_var)?;
    let u = chol.solve(&r)?;
    let quad: f64 = r.iter().zip(&u).map(|(a, b)| (a.conj() * b).re).sum();
    Ok(r.len() as f64 * PI.ln() + chol.log_det() + quad)
}

fn factor(
    q: &QOperator,
    target: &[C64],
    mom: &ConditionalMoments,
    noise_var: f64,
) -> Result<(Cholesky, ComplexVec), LinalgError> {
    if target.len() != mom.mu.len() {
        return Err(LinalgError::Dimension { expected: mom.mu.len(), got: target.len() });
    }
    let mut ct = q.covariance(&mom.c)?;
    ct.add_to_diagonal(noise_var);
    let r = target.iter().zip(&mom.mu).map(|(a, b)| a - b).collect();
    Ok((Cholesky::new(&ct)?, r))
}

/// [`reconstruction_nll`] together with its gradient. With `u = C~^{-1} r`,
/// `dL/dmu = -2u` and `dL/dc_k = q_k^H (C~^{-1} - u u^H) q_k`.
pub fn reconstruction_nll_grad(
    q: &QOperator,
    target: &[C64],
    mom: &ConditionalMoments,
    noise_var: f64,
) -> Result<NllGrad, LinalgError> {
    let (chol, r) = factor(q, target, mom, noise_var)?;
    let u = chol.solve(&r)?;
    let quad: f64 = r.iter().zip(&u).map(|(a, b)| (a.conj() * b).re).sum();
    let value = r.len() as f64 * PI.ln() + chol.log_det() + quad;
    let mut g = chol.inverse();
    g.add_outer(&u, -1.0);
    let d_c = q.project(&g)?;
    let d_mu = u.iter().map(|v| -2.0 * v).collect();
    Ok(NllGrad { value, d_mu, d_c })
}
