//! Channel estimation with a variational autoencoder that parameterizes
//! observation-dependent conditional Gaussian moments, plus the classical
//! baselines and experiment harness used to evaluate it.

pub mod autodiff;
pub mod linalg;
pub mod channel;
pub mod vae;
pub mod estimators;
pub mod eval;
