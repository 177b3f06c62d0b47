use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ce_vae_core::eval::{
    cross_eval, emit_csv, pretrain_finetune, snr_sweep, training_size_study, Arm, EvalRecord, Estimator, ExperimentPlan,
    FinetunePlan, ScenarioData,
};
use ce_vae_core::vae::{save_checkpoint, train, Vae, VaeConfig};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::settings::{check_writable, create_dir, load_clean, load_model, load_training, sibling, Settings};
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    /// NMSE at one SNR versus the number of training samples.
    Size,
    /// Pre-train on the source scenario, fine-tune on the target.
    Pretrain,
    /// Every scenario's model on every scenario's test set.
    Cross,
}

impl StudyKind {
    fn name(self) -> &'static str {
        match self {
            StudyKind::Size => "size",
            StudyKind::Pretrain => "pretrain",
            StudyKind::Cross => "cross",
        }
    }
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, value_enum)]
    pub kind: StudyKind,
    /// Experiment plan (key = value lines).
    #[arg(long)]
    pub plan: PathBuf,
}

struct Ctx<'a> {
    plan: ExperimentPlan,
    config: VaeConfig,
    out: &'a Path,
    manifest: RunManifest,
}

impl Ctx<'_> {
    fn dataset(&mut self, tag: &str, split: &str) -> Result<PathBuf> {
        let p = self
            .plan
            .dataset(tag, split)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("plan has no 'dataset.{tag}.{split}' entry")))?;
        self.manifest.inputs.push(p.clone());
        Ok(p)
    }

    fn data(&mut self, tag: &str) -> Result<ScenarioData> {
        let train = load_training(&self.dataset(tag, "train")?, self.config.snr_policy, self.config.seed)?;
        let val = load_clean(&self.dataset(tag, "val")?, "validation")?;
        let test = load_clean(&self.dataset(tag, "test")?, "test")?;
        for (what, n) in [("validation", val.geo.n()), ("test", test.geo.n())] {
            if n != train.geo.n() {
                return Err(CliError::Usage(format!("{tag}: training data has N = {} but {what} data has N = {n}", train.geo.n())));
            }
        }
        Ok(ScenarioData::new(tag, train, val, test)?)
    }

    fn config_for(&self, data: &ScenarioData) -> VaeConfig {
        VaeConfig { geo: data.train.geo, ..self.config.clone() }
    }

    /// The plan's checkpoint for `tag`, or a model trained on its full training set.
    fn model(&mut self, data: &ScenarioData) -> Result<Vae> {
        if let Some(path) = self.plan.checkpoints.get(&data.tag).cloned() {
            self.manifest.inputs.push(path.clone());
            let m = load_model(&path)?;
            if m.n() != data.test.geo.n() {
                return Err(CliError::Usage(format!(
                    "model {} has N = {} but scenario {} has N = {}",
                    path.display(),
                    m.n(),
                    data.tag,
                    data.test.geo.n()
                )));
            }
            return Ok(m);
        }
        let mut m = Vae::new(self.config_for(data))?;
        log::info!("training the {} model on {} observations", data.tag, data.train.len());
        train(&mut m, &data.train, &data.val)?;
        let dir = self.out.join("models");
        create_dir(&dir)?;
        let path = dir.join(format!("{}.cevm", data.tag));
        save_checkpoint(&m, &path).map_err(|e| CliError::model(&path, e))?;
        self.manifest.outputs.push(path);
        Ok(m)
    }
}

fn required(v: &Option<String>, key: &str) -> Result<String> {
    v.clone().ok_or_else(|| CliError::Usage(format!("plan needs '{key}'")))
}

pub fn run(args: &StudyArgs, common: &Common) -> Result<()> {
    let out = common.out.as_deref().ok_or_else(|| CliError::Usage("missing --out directory".into()))?;
    let text = std::fs::read_to_string(&args.plan).map_err(|e| CliError::io(&args.plan, e))?;
    let mut plan = ExperimentPlan::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", args.plan.display())))?;
    if let Some(seed) = common.seed {
        plan.seed = seed;
    }
    let settings = Settings::load(common.config.as_deref(), &VaeConfig::KEYS)?;
    let mut config = VaeConfig { seed: plan.seed, ..VaeConfig::default() };
    for (k, v) in settings.iter() {
        config.set(k, v)?;
    }
    let mut config = plan.vae_config(&config)?;
    if common.seed.is_some() {
        config.seed = plan.seed;
    }

    let csv = out.join(format!("{}.csv", args.kind.name()));
    let manifest_path = sibling(&csv, "manifest.json");
    check_writable(&csv, common.force)?;
    check_writable(&manifest_path, common.force)?;
    create_dir(out)?;

    let mut manifest = RunManifest::start("study");
    manifest.inputs.push(args.plan.clone());
    manifest.seed("plan", plan.seed);
    manifest.seed("model", config.seed);
    manifest.config(&json!({
        "kind": args.kind.name(),
        "model": config,
        "snr_grid": plan.snr_grid,
        "sizes": plan.train_sizes,
        "finetune_sizes": plan.finetune_sizes,
        "eval_snr": plan.eval_snr_db,
    }));
    let mut ctx = Ctx { plan, config, out, manifest };

    let records = match args.kind {
        StudyKind::Size => size(&mut ctx),
        StudyKind::Pretrain => pretrain(&mut ctx),
        StudyKind::Cross => cross(&mut ctx),
    };
    let records = match records {
        Ok(r) => r,
        Err(e) => {
            ctx.manifest.failures.push(e.to_string());
            ctx.manifest.write(&manifest_path)?;
            return Err(e);
        }
    };
    emit_csv(&records, &csv)?;
    ctx.manifest.outputs.push(csv);
    let failed = ctx.manifest.failures.len();
    ctx.manifest.write(&manifest_path)?;
    if failed > 0 {
        return Err(CliError::ArmFailed(format!("{failed} study arm(s) failed; see {}", manifest_path.display())));
    }
    Ok(())
}

fn size(ctx: &mut Ctx) -> Result<Vec<EvalRecord>> {
    let tag = match (&ctx.plan.target, ctx.plan.scenarios.first()) {
        (Some(t), _) => t.clone(),
        (None, Some(s)) => s.clone(),
        _ => return Err(CliError::Usage("plan needs 'target' (or 'scenarios') for a size study".into())),
    };
    if ctx.plan.train_sizes.is_empty() {
        return Err(CliError::Usage("plan needs 'sizes' for a size study".into()));
    }
    let data = ctx.data(&tag)?;
    let cfg = ctx.config_for(&data);
    let mut out = Vec::new();
    // one size at a time so that a failed arm does not discard the others
    for &s in &ctx.plan.train_sizes.clone() {
        match training_size_study(&data, &[s], &cfg, ctx.plan.eval_snr_db, ctx.plan.seed) {
            Ok(rows) => out.extend(rows),
            Err(e) => {
                log::error!("size {s} failed: {e}");
                ctx.manifest.failures.push(format!("size {s}: {e}"));
            }
        }
    }
    Ok(out)
}

fn pretrain(ctx: &mut Ctx) -> Result<Vec<EvalRecord>> {
    let source = required(&ctx.plan.source, "source")?;
    let target = required(&ctx.plan.target, "target")?;
    let src = ctx.data(&source)?;
    let tgt = ctx.data(&target)?;
    let pre = ctx.model(&src)?;
    let full = ctx.model(&tgt)?;
    let plan = FinetunePlan {
        sizes: ctx.plan.finetune_sizes.clone(),
        grid: ctx.plan.snr_grid.clone(),
        seed: ctx.plan.seed,
        scratch: true,
        config: ctx.config_for(&tgt),
    };
    Ok(pretrain_finetune(&pre, &source, &tgt, &plan, Some(&full))?)
}

fn cross(ctx: &mut Ctx) -> Result<Vec<EvalRecord>> {
    let mut tags = ctx.plan.scenarios.clone();
    if tags.is_empty() {
        tags.extend(ctx.plan.source.clone());
        tags.extend(ctx.plan.target.clone());
    }
    if tags.len() < 2 {
        return Err(CliError::Usage("plan needs at least two 'scenarios' for a cross study".into()));
    }
    let mut data = BTreeMap::new();
    let mut models = BTreeMap::new();
    for t in &tags {
        let d = ctx.data(t)?;
        models.insert(t.clone(), ctx.model(&d)?);
        data.insert(t.clone(), d);
    }
    let model_refs: Vec<(&str, &Vae)> = tags.iter().map(|t| (t.as_str(), &models[t])).collect();
    let test_refs: Vec<(&str, &[_])> = tags.iter().map(|t| (t.as_str(), data[t].test.samples.as_slice())).collect();
    let mut records = cross_eval(&model_refs, &test_refs, &ctx.plan.snr_grid, ctx.plan.seed)?;
    if ctx.plan.estimators.iter().any(|e| e == "ls") {
        for (t, test) in &test_refs {
            records.extend(snr_sweep(&[Arm::new("ls", Estimator::Ls)], t, test, &ctx.plan.snr_grid, ctx.plan.seed).into_records()?);
        }
    }
    Ok(records)
}
