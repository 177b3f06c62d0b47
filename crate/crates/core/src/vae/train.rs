use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{reconstruction_nll, reconstruction_nll_grad, stack_observations, standard_normal, ConditionalMoments};
use super::{LatentGaussian, Result, Vae, VaeError};
use crate::autodiff::gradcheck::{l2, numeric_gradient, relative_error_with_floor};
use crate::autodiff::{AdamState, Mode, Tensor};
use crate::channel::{observe_at_snr, stream_rng, streams, ChannelDataset, DatasetKind};
use crate::linalg::{ComplexVec, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Validation NMSE of the parameters training started from.
    pub initial_val_nmse: f64,
    pub best_val_nmse: f64,
    /// `None` when no epoch improved on the starting parameters.
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Mean negative ELBO over a batch and its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

impl Vae {
    /// Single-sample negative ELBO averaged over the batch, with the latent
    /// noise `eps` supplied by the caller. Batch normalization runs in
    /// training mode. With `backward`, parameter gradients are accumulated
    /// (call [`Vae::zero_grad`] first).
    pub fn batch_loss(
        &mut self,
        ys: &[&[C64]],
        noise_var: &[f64],
        eps: &[Vec<f64>],
        backward: bool,
    ) -> Result<BatchLoss> {
        let b = ys.len();
        let n = self.n();
        let nl = self.config.latent_dim;
        if noise_var.len() != b || eps.len() != b {
            return Err(VaeError::Config("batch, noise variance and latent noise lengths differ".into()));
        }
        for y in ys {
            if y.len() != n {
                return Err(VaeError::DimensionMismatch { data: y.len(), model: n });
            }
        }
        let enc_out = self.encoder.forward(&stack_observations(ys), Mode::Train)?;
        let lats: Vec<LatentGaussian> = enc_out
            .data()
            .chunks(2 * nl)
            .map(|o| LatentGaussian::from_raw(o[..nl].to_vec(), o[nl..].to_vec()))
            .collect();
        let z: Vec<f64> = lats.iter().zip(eps).flat_map(|(l, e)| l.reparameterize(e)).collect();
        let dec_out = self.decoder.forward(&Tensor::new(vec![b, nl], z)?, Mode::Train)?;
        let moms: Vec<ConditionalMoments> =
            dec_out.data().chunks(6 * n).map(|o| ConditionalMoments::from_raw(o, n)).collect();

        let kl: f64 = lats.iter().map(LatentGaussian::kl).sum::<f64>() / b as f64;
        debug_assert!(kl >= -1e-12);
        let q = self.q.clone();
        let scale = 1.0 / b as f64;

        if !backward {
            let nlls: Vec<f64> = ys
                .par_iter()
                .zip(moms.par_iter())
                .zip(noise_var.par_iter())
                .enumerate()
                .map(|(i, ((y, m), &v))| {
                    reconstruction_nll(&q, y, m, v).map_err(|source| VaeError::Linalg { sample: i, source })
                })
                .collect::<Result<_>>()?;
            let nll = nlls.iter().sum::<f64>() * scale;
            return Ok(BatchLoss { loss: nll + kl, nll, kl });
        }

        let grads: Vec<_> = ys
            .par_iter()
            .zip(moms.par_iter())
            .zip(noise_var.par_iter())
            .enumerate()
            .map(|(i, ((y, m), &v))| {
                reconstruction_nll_grad(&q, y, m, v).map_err(|source| VaeError::Linalg { sample: i, source })
            })
            .collect::<Result<_>>()?;
        let nll = grads.iter().map(|g| g.value).sum::<f64>() * scale;

        let mut g_dec = Vec::with_capacity(b * 6 * n);
        for (g, m) in grads.iter().zip(&moms) {
            g_dec.extend(g.d_mu.iter().map(|v| v.re * scale));
            g_dec.extend(g.d_mu.iter().map(|v| v.im * scale));
            g_dec.extend(g.d_c.iter().zip(&m.c).map(|(d, c)| d * c * scale));
        }
        let g_z = self.decoder.backward(&Tensor::new(vec![b, 6 * n], g_dec)?)?;

        let mut g_enc = Vec::with_capacity(b * 2 * nl);
        for ((lat, e), gz) in lats.iter().zip(eps).zip(g_z.data().chunks(nl)) {
            let (kl_mu, kl_s) = lat.kl_grad();
            g_enc.extend(gz.iter().zip(&kl_mu).map(|(g, k)| g + k * scale));
            g_enc.extend(
                gz.iter().zip(&lat.sigma).zip(e).zip(&kl_s).map(|(((g, s), e), k)| g * s * e + k * scale),
            );
        }
        self.encoder.backward(&Tensor::new(vec![b, 2 * nl], g_enc)?)?;
        Ok(BatchLoss { loss: nll + kl, nll, kl })
    }

    /// Norm-wise relative error between the analytic and central-difference
    /// gradients of [`Vae::batch_loss`], one entry per parameter tensor.
    /// Tensors whose gradient is below a thousandth of the full gradient norm
    /// are measured against that floor instead of their own norm.
    pub fn gradient_check(&mut self, ys: &[&[C64]], noise_var: &[f64], eps: &[Vec<f64>], step: f64) -> Result<Vec<f64>> {
        self.zero_grad();
        self.batch_loss(ys, noise_var, eps, true)?;
        let analytic: Vec<Vec<f64>> =
            self.params_mut().iter().map(|p| p.grad().unwrap_or(&[]).to_vec()).collect();
        let floor = 1e-3 * l2(&analytic.concat());
        let mut out = Vec::with_capacity(analytic.len());
        for (pi, a) in analytic.iter().enumerate() {
            let mut failure = None;
            let numeric = numeric_gradient(a.len(), step, |i, d| {
                let orig = self.params_mut()[pi].data()[i];
                self.params_mut()[pi].data_mut()[i] = orig + d;
                let v = match self.batch_loss(ys, noise_var, eps, false) {
                    Ok(l) => l.loss,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                };
                self.params_mut()[pi].data_mut()[i] = orig;
                v
            });
            if let Some(e) = failure {
                return Err(e);
            }
            out.push(relative_error_with_floor(a, &numeric, floor));
        }
        Ok(out)
    }

    /// NMSE of the estimator on `clean` observed at `snr_db` with the given noise seed.
    pub fn validation_nmse(&self, clean: &[ComplexVec], snr_db: f64, seed: u64) -> Result<f64> {
        let ys = observe_at_snr(clean, snr_db, seed, streams::VAL_NOISE);
        let var = crate::channel::noise_variance(snr_db);
        let est = self.estimate(&ys, &vec![var; ys.len()])?;
        let n = self.n() as f64;
        let err: f64 = est
            .iter()
            .zip(clean)
            .map(|(e, h)| e.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>())
            .sum();
        Ok(err / (clean.len() as f64 * n))
    }
}

/// Trains on noisy observations only; clean validation channels serve
/// model selection. Runs at most `config.max_epochs` epochs in this call,
/// stops after `config.patience` epochs without a validation improvement,
/// and leaves the best parameters seen (including the starting ones) in
/// `model`. Epoch numbers continue from `model.epochs_completed`.
pub fn train(model: &mut Vae, train: &ChannelDataset, val: &ChannelDataset) -> Result<TrainReport> {
    let cfg = model.config.clone();
    cfg.validate()?;
    if train.kind != DatasetKind::Noisy {
        return Err(VaeError::Config("training data must be noisy observations".into()));
    }
    if val.kind != DatasetKind::Clean {
        return Err(VaeError::Config("validation data must be clean channels".into()));
    }
    for ds in [train, val] {
        if ds.geo.n() != model.n() {
            return Err(VaeError::DimensionMismatch { data: ds.geo.n(), model: model.n() });
        }
    }
    if train.len() < 2 {
        return Err(VaeError::Config(format!("need at least 2 training samples, got {}", train.len())));
    }
    if val.is_empty() {
        return Err(VaeError::Config("validation set is empty".into()));
    }

    let initial = model.validation_nmse(&val.samples, cfg.val_snr_db, cfg.seed)?;
    let mut best = (initial, None, model.snapshot());
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;
    let mut epochs_run = 0;
    let nl = cfg.latent_dim;

    for _ in 0..cfg.max_epochs {
        let epoch = model.epochs_completed;
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, streams::SHUFFLE, epoch as u64));
        let mut total = 0.0;
        let mut seen = 0usize;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let ys: Vec<&[C64]> = idx.iter().map(|&i| train.samples[i].as_slice()).collect();
            let vars: Vec<f64> = idx.iter().map(|&i| train.noise_var[i]).collect();
            let batch_id = ((epoch as u64) << 24) | bi as u64;
            let mut rng = stream_rng(cfg.seed, streams::LATENT, batch_id);
            let eps: Vec<Vec<f64>> = (0..idx.len()).map(|_| standard_normal(nl, &mut rng)).collect();

            model.zero_grad();
            let abort = |e: VaeError| VaeError::TrainingAborted { epoch, batch: bi, source: Box::new(e) };
            let loss = model.batch_loss(&ys, &vars, &eps, true).map_err(abort)?;
            if !loss.loss.is_finite() {
                return Err(VaeError::NonFiniteLoss { epoch, batch: bi });
            }
            adam.step(&mut model.params_mut()).map_err(|e| abort(e.into()))?;
            total += loss.loss * idx.len() as f64;
            seen += idx.len();
        }
        model.encoder.clear_cache();
        model.decoder.clear_cache();

        let val_nmse = model.validation_nmse(&val.samples, cfg.val_snr_db, cfg.seed)?;
        let record = EpochRecord { epoch, train_loss: total / seen.max(1) as f64, val_nmse };
        log::info!("epoch {epoch}: train loss {:.4}, val NMSE {:.5}", record.train_loss, val_nmse);
        model.history.push(record);
        model.epochs_completed += 1;
        epochs_run += 1;

        if val_nmse < best.0 {
            best = (val_nmse, Some(epoch), model.snapshot());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    model.restore(&best.2);
    Ok(TrainReport {
        initial_val_nmse: initial,
        best_val_nmse: best.0,
        best_epoch: best.1,
        epochs_run,
        stopped_early: since_best >= cfg.patience,
    })
}
