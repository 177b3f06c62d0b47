use std::path::{Path, PathBuf};

use ce_vae_core::vae::{save_checkpoint, train, EpochRecord, Vae, VaeConfig};
use clap::Args;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::settings::{check_writable, load_clean, load_model, load_training, sibling, Settings};
use crate::Common;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset; clean channels are corrupted once at the training SNRs.
    #[arg(long)]
    pub train: PathBuf,
    /// Clean validation channels for early stopping.
    #[arg(long)]
    pub val: PathBuf,
    /// Continue training this checkpoint; the epoch counter carries on.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Epoch cap for this run.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Training SNR policy: fixed:<dB> or uniform:<lo>:<hi>.
    #[arg(long, allow_hyphen_values = true)]
    pub train_snr: Option<String>,
    /// Validation SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub val_snr: Option<f64>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("learning_rate", self.learning_rate.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("latent_dim", self.latent_dim.map(|v| v.to_string()));
        push("base_channels", self.base_channels.map(|v| v.to_string()));
        push("train_snr", self.train_snr.clone());
        push("val_snr", self.val_snr.map(|v| v.to_string()));
        out
    }
}

/// Keys that fix the architecture and cannot change when resuming.
const ARCHITECTURE: [&str; 3] = ["latent_dim", "base_channels", "width_multiplier"];

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,train_loss,val_nmse\n");
    for r in history {
        text.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_nmse));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn run(args: &TrainArgs, common: &Common) -> Result<()> {
    let settings = Settings::load(common.config.as_deref(), &VaeConfig::KEYS)?;
    let out = common.out.as_deref().ok_or_else(|| CliError::Usage("missing --out checkpoint path".into()))?;
    let history_path = sibling(out, "history.csv");
    let manifest_path = sibling(out, "manifest.json");
    for p in [out, history_path.as_path(), manifest_path.as_path()] {
        check_writable(p, common.force)?;
    }

    let resumed = args.resume.as_deref().map(load_model).transpose()?;
    let mut cfg = resumed.as_ref().map_or_else(VaeConfig::default, |m| m.config.clone());
    let mut changes: Vec<(String, String)> = settings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    changes.extend(args.overrides().into_iter().map(|(k, v)| (k.to_string(), v)));
    if let Some(seed) = common.seed {
        changes.push(("seed".into(), seed.to_string()));
    }
    for (k, v) in &changes {
        if resumed.is_some() && ARCHITECTURE.contains(&k.as_str()) {
            return Err(CliError::Usage(format!("cannot change '{k}' when resuming a checkpoint")));
        }
        cfg.set(k, v)?;
    }

    let train_ds = load_training(&args.train, cfg.snr_policy, cfg.seed)?;
    let val = load_clean(&args.val, "validation")?;
    if train_ds.geo.n() != val.geo.n() {
        return Err(CliError::Usage(format!(
            "training data has N = {} but validation data has N = {}",
            train_ds.geo.n(),
            val.geo.n()
        )));
    }
    let mut model = match resumed {
        Some(mut m) => {
            m.config = cfg.clone();
            m
        }
        None => {
            cfg.geo = train_ds.geo;
            Vae::new(cfg.clone())?
        }
    };

    let mut manifest = RunManifest::start("train");
    manifest.seed("model", cfg.seed);
    manifest.inputs.extend([args.train.clone(), args.val.clone()]);
    manifest.inputs.extend(args.resume.clone());
    log::info!(
        "training {} parameters on {} observations (from epoch {})",
        model.param_count(),
        train_ds.len(),
        model.epochs_completed
    );
    let report = train(&mut model, &train_ds, &val)?;
    log::info!(
        "best validation NMSE {:.5} ({} epochs run, early stop: {})",
        report.best_val_nmse,
        report.epochs_run,
        report.stopped_early
    );
    save_checkpoint(&model, out).map_err(|e| CliError::model(out, e))?;
    write_history(&model.history, &history_path)?;
    manifest.config(&json!({
        "model": model.config,
        "epochs_completed": model.epochs_completed,
        "best_val_nmse": report.best_val_nmse,
        "best_epoch": report.best_epoch,
        "epochs_run": report.epochs_run,
    }));
    manifest.outputs.extend([out.to_path_buf(), history_path]);
    manifest.write(&manifest_path)
}
