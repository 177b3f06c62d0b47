use super::{snr_sweep, Arm, EvalError, EvalRecord, Estimator, Result};
use crate::channel::{ChannelDataset, DatasetKind};
use crate::linalg::ComplexVec;
use crate::vae::{train, Vae, VaeConfig};

/// Noisy training observations with clean validation and test channels.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub tag: String,
    pub train: ChannelDataset,
    pub val: ChannelDataset,
    pub test: ChannelDataset,
}

impl ScenarioData {
    pub fn new(tag: &str, train: ChannelDataset, val: ChannelDataset, test: ChannelDataset) -> Result<Self> {
        let kinds = [(&train, DatasetKind::Noisy, "train"), (&val, DatasetKind::Clean, "val"), (&test, DatasetKind::Clean, "test")];
        for (ds, kind, name) in kinds {
            if ds.kind != kind {
                return Err(EvalError::Invalid(format!("{tag} {name} split must be {kind:?}, got {:?}", ds.kind)));
            }
        }
        Ok(Self { tag: tag.to_string(), train, val, test })
    }
}

fn check_sizes(sizes: &[usize], available: usize, what: &str) -> Result<()> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Invalid(format!("{what} must be sorted ascending")));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > available) {
        return Err(EvalError::Invalid(format!("{what} entry {s} exceeds the {available} available samples")));
    }
    Ok(())
}

/// Trains one model per size on the first `size` training observations (so
/// smaller sets are nested in larger ones) and evaluates each at `snr_db`.
pub fn training_size_study(
    data: &ScenarioData,
    sizes: &[usize],
    config: &VaeConfig,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    check_sizes(sizes, data.train.len(), "training sizes")?;
    let mut arms = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut model = Vae::new(config.clone())?;
        log::info!("size study: training on {size} {} samples", data.tag);
        let report = train(&mut model, &data.train.head(size), &data.val)?;
        arms.push(
            Arm::new("vae", Estimator::Vae(Box::new(model)))
                .with_extra("train_size", size)
                .with_extra("epochs", report.epochs_run),
        );
    }
    snr_sweep(&arms, &data.tag, &data.test.samples, &[snr_db], seed).into_records()
}

#[derive(Debug, Clone)]
pub struct FinetunePlan {
    pub sizes: Vec<usize>,
    pub grid: Vec<f64>,
    pub seed: u64,
    /// Also train a fresh model on each fine-tuning subset.
    pub scratch: bool,
    /// Configuration of scratch models; its epoch cap and patience also
    /// bound fine-tuning, which otherwise keeps the pre-trained settings.
    pub config: VaeConfig,
}

/// Evaluates a pre-trained model on the target scenario as is
/// (`vae-pretrained`), after fine-tuning on each target subset
/// (`vae-finetune`), optionally against scratch models on the same subsets
/// (`vae-scratch`) and a model trained on the full target set (`vae-full`).
/// Fine-tuning starts a fresh optimizer; size 0 means no fine-tuning.
pub fn pretrain_finetune(
    pretrained: &Vae,
    source: &str,
    target: &ScenarioData,
    plan: &FinetunePlan,
    full: Option<&Vae>,
) -> Result<Vec<EvalRecord>> {
    check_sizes(&plan.sizes, target.train.len(), "fine-tuning sizes")?;
    let mut arms = vec![Arm::new("vae-pretrained", Estimator::Vae(Box::new(pretrained.clone())))
        .with_extra("pretrain", true)
        .with_extra("source", source)
        .with_extra("finetune_size", 0)];
    for &size in &plan.sizes {
        let mut tuned = pretrained.clone();
        if size > 0 {
            tuned.config.max_epochs = plan.config.max_epochs;
            tuned.config.patience = plan.config.patience;
            log::info!("fine-tuning the {source} model on {size} {} samples", target.tag);
            train(&mut tuned, &target.train.head(size), &target.val)?;
        }
        arms.push(
            Arm::new("vae-finetune", Estimator::Vae(Box::new(tuned)))
                .with_extra("pretrain", true)
                .with_extra("source", source)
                .with_extra("finetune_size", size),
        );
        if plan.scratch && size > 0 {
            let mut fresh = Vae::new(plan.config.clone())?;
            log::info!("training from scratch on {size} {} samples", target.tag);
            train(&mut fresh, &target.train.head(size), &target.val)?;
            arms.push(
                Arm::new("vae-scratch", Estimator::Vae(Box::new(fresh)))
                    .with_extra("pretrain", false)
                    .with_extra("train_size", size),
            );
        }
    }
    if let Some(full) = full {
        arms.push(
            Arm::new("vae-full", Estimator::Vae(Box::new(full.clone())))
                .with_extra("pretrain", false)
                .with_extra("source", &target.tag),
        );
    }
    snr_sweep(&arms, &target.tag, &target.test.samples, &plan.grid, plan.seed).into_records()
}

/// Evaluates every model on every test set; `trained_on` records the
/// model's scenario.
pub fn cross_eval(
    models: &[(&str, &Vae)],
    tests: &[(&str, &[ComplexVec])],
    grid: &[f64],
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    let arms: Vec<Arm> = models
        .iter()
        .map(|(tag, m)| Arm::new("vae", Estimator::Vae(Box::new((*m).clone()))).with_extra("trained_on", tag))
        .collect();
    let mut out = Vec::new();
    for (tag, test) in tests {
        out.extend(snr_sweep(&arms, tag, test, grid, seed).into_records()?);
    }
    Ok(out)
}
