//! Variational autoencoder whose decoder emits the conditional mean and the
//! block-Toeplitz covariance weights of the channel given a latent sample.
//!
//! The encoder sees the stacked real/imaginary parts of an observation and
//! returns the latent mean and raw log standard deviation. The decoder maps
//! a latent vector to `2N` reals (conditional mean, real then imaginary) and
//! `4N` raw log covariance weights.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{reconstruction_nll, reconstruction_nll_grad, ConditionalMoments, LatentGaussian, NllGrad};
pub use train::{train, EpochRecord, TrainReport};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Layer, LayerSpec, Mode, Sequential, Tensor, TensorError};
use crate::channel::{stream_rng, streams, SnrPolicy};
use crate::linalg::{Cholesky, ComplexVec, LinalgError, QOperator, UraGeometry, C64};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("linear algebra failure on sample {sample}: {source}")]
    Linalg { sample: usize, source: LinalgError },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training aborted at epoch {epoch}, batch {batch}: {source}")]
    TrainingAborted { epoch: usize, batch: usize, source: Box<VaeError> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("antenna count mismatch: data has N = {data}, model expects N = {model}")]
    DimensionMismatch { data: usize, model: usize },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VaeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub geo: UraGeometry,
    pub latent_dim: usize,
    pub base_channels: usize,
    pub width_multiplier: f64,
    pub blocks: usize,
    pub kernel: usize,
    pub stride: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub snr_policy: SnrPolicy,
    /// SNR at which validation NMSE is measured for model selection.
    pub val_snr_db: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    /// Desk-scale defaults: `CH = 8`, `N_L = 32`, 300 epoch cap, patience 30.
    fn default() -> Self {
        Self {
            geo: UraGeometry::default_array(),
            latent_dim: 32,
            base_channels: 8,
            width_multiplier: 1.75,
            blocks: 3,
            kernel: 11,
            stride: 2,
            learning_rate: 5e-4,
            batch_size: 256,
            patience: 30,
            max_epochs: 300,
            snr_policy: SnrPolicy::default(),
            val_snr_db: 20.0,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn n(&self) -> usize {
        self.geo.n()
    }

    /// Channel widths after the 1x1 input convolution and after each block:
    /// multiply by the width multiplier and round, `blocks` times.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.base_channels];
        for _ in 0..self.blocks {
            let last = *w.last().unwrap() as f64;
            w.push((last * self.width_multiplier).round() as usize);
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VaeError::Config(m));
        if self.latent_dim == 0 {
            return bad("latent dimension must be >= 1".into());
        }
        if self.base_channels == 0 {
            return bad("base channel count must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2 for batch normalization, got {}", self.batch_size));
        }
        if self.stride < 1 || self.kernel < 1 || self.kernel.is_multiple_of(2) {
            return bad(format!("kernel must be odd and stride >= 1, got kernel {} stride {}", self.kernel, self.stride));
        }
        let n = self.n();
        let factor = self.stride.pow(self.blocks as u32);
        if !n.is_multiple_of(factor) {
            return bad(format!(
                "input length {n} is not divisible by {factor}; {} stride-{} blocks cannot halve it cleanly",
                self.blocks, self.stride
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }

    /// Keys accepted by [`VaeConfig::set`].
    pub const KEYS: [&'static str; 10] = [
        "latent_dim",
        "base_channels",
        "width_multiplier",
        "learning_rate",
        "batch_size",
        "patience",
        "epochs",
        "train_snr",
        "val_snr",
        "seed",
    ];

    /// Overrides one field from its textual form, e.g. `("epochs", "10")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.trim().parse().map_err(|_| VaeError::Config(format!("cannot parse '{value}' for '{key}'")))
        }
        match key {
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "base_channels" => self.base_channels = parse(key, value)?,
            "width_multiplier" => self.width_multiplier = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "epochs" => self.max_epochs = parse(key, value)?,
            "train_snr" => self.snr_policy = value.parse().map_err(VaeError::Config)?,
            "val_snr" => self.val_snr_db = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => {
                return Err(VaeError::Config(format!(
                    "unknown key '{key}'; expected one of {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Length of the feature maps after the last downsampling block.
    pub fn bottleneck_len(&self) -> usize {
        self.n() / self.stride.pow(self.blocks as u32)
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let w = self.widths();
        let pad = self.kernel / 2;
        let mut specs =
            vec![LayerSpec::Conv1d { in_channels: 2, out_channels: w[0], kernel: 1, stride: 1, padding: 0 }];
        for b in 0..self.blocks {
            specs.push(LayerSpec::Conv1d {
                in_channels: w[b],
                out_channels: w[b + 1],
                kernel: self.kernel,
                stride: self.stride,
                padding: pad,
            });
            specs.push(LayerSpec::BatchNorm1d { features: w[b + 1] });
            specs.push(LayerSpec::ReLU);
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense {
            in_features: w[self.blocks] * self.bottleneck_len(),
            out_features: 2 * self.latent_dim,
        });
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let w = self.widths();
        let pad = self.kernel / 2;
        let n = self.n();
        let top = w[self.blocks];
        let mut specs = vec![
            LayerSpec::Dense { in_features: self.latent_dim, out_features: top * self.bottleneck_len() },
            LayerSpec::Unflatten { channels: top },
        ];
        for b in (0..self.blocks).rev() {
            specs.push(LayerSpec::ConvTranspose1d {
                in_channels: w[b + 1],
                out_channels: w[b],
                kernel: self.kernel,
                stride: self.stride,
                padding: pad,
                output_padding: self.stride - 1,
            });
            specs.push(LayerSpec::BatchNorm1d { features: w[b] });
            specs.push(LayerSpec::ReLU);
        }
        specs.push(LayerSpec::ConvTranspose1d {
            in_channels: w[0],
            out_channels: 3,
            kernel: 1,
            stride: 1,
            padding: 0,
            output_padding: 0,
        });
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Dense { in_features: 3 * n, out_features: 6 * n });
        specs
    }
}

/// Encoder, decoder, configuration and training bookkeeping.
#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub epochs_completed: usize,
    pub history: Vec<EpochRecord>,
    q: QOperator,
}

impl PartialEq for Vae {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.epochs_completed == other.epochs_completed
            && self.history == other.history
            && self.encoder.layers() == other.encoder.layers()
            && self.decoder.layers() == other.decoder.layers()
    }
}

fn zero_last_dense(net: &mut Sequential) {
    if let Some(Layer::Dense(d)) = net.layers_mut().iter_mut().rev().find(|l| matches!(l, Layer::Dense(_))) {
        d.weight.data_mut().fill(0.0);
        d.bias.data_mut().fill(0.0);
    }
}

/// Stacks observations into a `[B, 2, N]` tensor (real parts, then imaginary).
pub fn stack_observations(ys: &[&[C64]]) -> Tensor {
    let n = ys.first().map_or(0, |y| y.len());
    let mut data = Vec::with_capacity(ys.len() * 2 * n);
    for y in ys {
        data.extend(y.iter().map(|v| v.re));
        data.extend(y.iter().map(|v| v.im));
    }
    Tensor::new(vec![ys.len(), 2, n], data).expect("shape matches data")
}

impl Vae {
    /// Builds the network with seeded fan-in uniform initialization.
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, streams::INIT, 0);
        let encoder = Sequential::new(config.encoder_specs(), &mut rng)?;
        let decoder = Sequential::new(config.decoder_specs(), &mut rng)?;
        let q = QOperator::new(config.geo);
        Ok(Self { config, encoder, decoder, epochs_completed: 0, history: Vec::new(), q })
    }

    /// Same as [`Vae::new`], with the final dense layers of encoder and
    /// decoder zeroed: the encoder then returns `mu = 0, sigma = 1` and the
    /// decoder `mu = 0, c = 1`, i.e. an identity covariance.
    pub fn new_zero_heads(config: VaeConfig) -> Result<Self> {
        let mut vae = Self::new(config)?;
        zero_last_dense(&mut vae.encoder);
        zero_last_dense(&mut vae.decoder);
        Ok(vae)
    }

    pub fn q(&self) -> &QOperator {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.config.n()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    /// Parameters and normalization buffers, in checkpoint order.
    pub(crate) fn state_tensors(&self) -> Vec<&Tensor> {
        let mut t = self.encoder.state();
        t.extend(self.decoder.state());
        t
    }

    pub(crate) fn state_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.encoder.state_mut();
        t.extend(self.decoder.state_mut());
        t
    }

    pub(crate) fn snapshot(&self) -> Vec<Vec<f64>> {
        self.state_tensors().iter().map(|t| t.data().to_vec()).collect()
    }

    pub(crate) fn restore(&mut self, snap: &[Vec<f64>]) {
        for (t, s) in self.state_tensors_mut().into_iter().zip(snap) {
            t.data_mut().copy_from_slice(s);
        }
    }

    fn check_len(&self, y: &[C64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(VaeError::DimensionMismatch { data: y.len(), model: self.n() });
        }
        Ok(())
    }

    fn split_latent(&self, out: &[f64]) -> LatentGaussian {
        let nl = self.config.latent_dim;
        LatentGaussian::from_raw(out[..nl].to_vec(), out[nl..2 * nl].to_vec())
    }

    fn split_moments(&self, out: &[f64]) -> ConditionalMoments {
        let n = self.n();
        ConditionalMoments::from_raw(out, n)
    }

    /// Encoder posterior for each observation (evaluation mode).
    pub fn encode(&self, ys: &[ComplexVec]) -> Result<Vec<LatentGaussian>> {
        for y in ys {
            self.check_len(y)?;
        }
        let mut enc = self.encoder.clone();
        let refs: Vec<&[C64]> = ys.iter().map(Vec::as_slice).collect();
        let out = enc.forward(&stack_observations(&refs), Mode::Eval)?;
        let width = 2 * self.config.latent_dim;
        Ok(out.data().chunks(width).map(|o| self.split_latent(o)).collect())
    }

    /// Decoder moments for each latent vector (evaluation mode).
    pub fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<ConditionalMoments>> {
        let nl = self.config.latent_dim;
        if let Some(z) = zs.iter().find(|z| z.len() != nl) {
            return Err(VaeError::Config(format!("latent vector has length {}, expected {nl}", z.len())));
        }
        let mut dec = self.decoder.clone();
        let data: Vec<f64> = zs.iter().flatten().copied().collect();
        let out = dec.forward(&Tensor::new(vec![zs.len(), nl], data)?, Mode::Eval)?;
        Ok(out.data().chunks(6 * self.n()).map(|o| self.split_moments(o)).collect())
    }

    /// Moments used by the estimator: decode the encoder mean, no sampling.
    pub fn moments(&self, ys: &[ComplexVec]) -> Result<Vec<ConditionalMoments>> {
        let chunk = 256;
        let parts: Vec<Result<Vec<ConditionalMoments>>> = ys
            .par_chunks(chunk)
            .map(|c| {
                let lat = self.encode(c)?;
                let zs: Vec<Vec<f64>> = lat.into_iter().map(|l| l.mu).collect();
                self.decode(&zs)
            })
            .collect();
        let mut out = Vec::with_capacity(ys.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// `mu + C (C + s2 I)^{-1} (y - mu)` with `(mu, C)` decoded from the
    /// encoder mean of each observation. Noise variances may differ per sample.
    pub fn estimate(&self, ys: &[ComplexVec], noise_var: &[f64]) -> Result<Vec<ComplexVec>> {
        if ys.len() != noise_var.len() {
            return Err(VaeError::Config(format!(
                "{} observations but {} noise variances",
                ys.len(),
                noise_var.len()
            )));
        }
        let moments = self.moments(ys)?;
        ys.par_iter()
            .zip(moments.par_iter())
            .zip(noise_var.par_iter())
            .enumerate()
            .map(|(i, ((y, m), &var))| {
                conditional_lmmse(&self.q, y, m, var).map_err(|source| VaeError::Linalg { sample: i, source })
            })
            .collect()
    }
}

/// `mu + C (C + s2 I)^{-1} (y - mu) = y - s2 (C + s2 I)^{-1} (y - mu)`.
/// With `s2 = 0` the filter is the identity and `y` is returned.
pub fn conditional_lmmse(
    q: &QOperator,
    y: &[C64],
    mom: &ConditionalMoments,
    noise_var: f64,
) -> std::result::Result<ComplexVec, LinalgError> {
    if noise_var == 0.0 {
        return Ok(y.to_vec());
    }
    let mut ct = q.covariance(&mom.c)?;
    ct.add_to_diagonal(noise_var);
    let r: ComplexVec = y.iter().zip(&mom.mu).map(|(a, b)| a - b).collect();
    let u = Cholesky::new(&ct)?.solve(&r)?;
    Ok(y.iter().zip(u).map(|(a, b)| a - b * noise_var).collect())
}

/// Standard normal draws of length `n`.
pub fn standard_normal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VaeConfig {
        VaeConfig {
            geo: UraGeometry::new(2, 4, 1.0, 0.5).unwrap(),
            latent_dim: 4,
            base_channels: 2,
            ..VaeConfig::default()
        }
    }

    #[test]
    fn textual_overrides() {
        let mut c = VaeConfig::default();
        c.set("epochs", "7").unwrap();
        c.set("train_snr", "fixed:12.5").unwrap();
        c.set("learning_rate", "1e-3").unwrap();
        assert_eq!(c.max_epochs, 7);
        assert_eq!(c.snr_policy, SnrPolicy::Fixed(12.5));
        assert_eq!(c.learning_rate, 1e-3);
        assert!(matches!(c.set("epochs", "many"), Err(VaeError::Config(_))));
        assert!(matches!(c.set("dropout", "0.1"), Err(VaeError::Config(m)) if m.contains("latent_dim")));
        assert_eq!("uniform:-10:25".parse::<SnrPolicy>().unwrap(), SnrPolicy::default());
        assert_eq!(SnrPolicy::default().to_string().parse::<SnrPolicy>().unwrap(), SnrPolicy::default());
        assert!("uniform:5:1".parse::<SnrPolicy>().is_err());
    }

    #[test]
    fn width_rule() {
        let cfg = VaeConfig { base_channels: 16, ..VaeConfig::default() };
        assert_eq!(cfg.widths(), vec![16, 28, 49, 86]);
        let cfg = VaeConfig { base_channels: 8, ..VaeConfig::default() };
        assert_eq!(cfg.widths(), vec![8, 14, 25, 44]);
    }

    #[test]
    fn indivisible_length_is_rejected() {
        let cfg = VaeConfig { geo: UraGeometry::new(3, 4, 1.0, 0.5).unwrap(), ..tiny() };
        let err = Vae::new(cfg).unwrap_err().to_string();
        assert!(err.contains("12"), "{err}");
    }

    #[test]
    fn latent_shapes_match_configuration() {
        let vae = Vae::new(VaeConfig::default()).unwrap();
        let ys = vec![vec![C64::new(0.5, -0.5); 64]; 3];
        let lat = vae.encode(&ys).unwrap();
        assert_eq!(lat.len(), 3);
        assert!(lat.iter().all(|l| l.mu.len() == 32 && l.sigma.len() == 32));
        assert!(lat.iter().flat_map(|l| &l.sigma).all(|&s| s > 0.0));
    }

    #[test]
    fn zero_heads_give_standard_posterior_and_identity_covariance() {
        let vae = Vae::new_zero_heads(tiny()).unwrap();
        let ys = vec![vec![C64::new(1.0, 2.0); 8], vec![C64::new(-3.0, 0.1); 8]];
        for l in vae.encode(&ys).unwrap() {
            assert!(l.mu.iter().all(|&m| m == 0.0));
            assert!(l.sigma.iter().all(|&s| s == 1.0));
        }
        for m in vae.decode(&[vec![0.3, -1.0, 2.0, 0.0]]).unwrap() {
            assert!(m.mu.iter().all(|v| *v == C64::new(0.0, 0.0)));
            assert!(m.c.iter().all(|&c| c == 1.0));
        }
        let est = vae.estimate(&ys, &[0.25, 0.25]).unwrap();
        for (e, y) in est.iter().zip(&ys) {
            for (a, b) in e.iter().zip(y) {
                assert!((a - b / 1.25).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn estimate_with_zero_noise_is_identity() {
        let vae = Vae::new(tiny()).unwrap();
        let ys = vec![(0..8).map(|k| C64::new(k as f64, 1.0)).collect::<Vec<_>>(); 2];
        assert_eq!(vae.estimate(&ys, &[0.0, 0.0]).unwrap(), ys);
    }

    #[test]
    fn encoding_is_deterministic() {
        let vae = Vae::new(tiny()).unwrap();
        let ys = vec![(0..8).map(|k| C64::new(k as f64, -0.5)).collect::<Vec<_>>(); 2];
        let a = vae.encode(&ys).unwrap();
        let b = vae.encode(&ys).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], a[1]);
    }
}
