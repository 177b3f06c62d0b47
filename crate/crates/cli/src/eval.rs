use std::path::{Path, PathBuf};

use ce_vae_core::channel::{ChannelDataset, DatasetKind, Scenario};
use ce_vae_core::estimators::{FittedLmmse, OmpDictionary};
use ce_vae_core::eval::{emit_csv, snr_sweep, Arm, Estimator, DEFAULT_SNR_GRID};
use ce_vae_core::vae::{Vae, VaeConfig};
use clap::Args;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::settings::{check_writable, load_clean, load_data, load_model, sibling, Settings};
use crate::Common;

pub const ESTIMATOR_IDS: [&str; 6] = ["vae", "ls", "lmmse", "genie-omp", "untrained", "oracle"];

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Clean test channels.
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated estimator ids: vae, ls, lmmse, genie-omp, untrained, oracle.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<String>,
    /// Trained model for `vae`; repeat to compare several models.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Training data for the sample-covariance `lmmse` fit.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Comma-separated SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr_grid: Vec<f64>,
    /// Dictionary oversampling per array axis for `genie-omp` (2 or 4).
    #[arg(long)]
    pub omp_oversampling: Option<usize>,
    /// Iteration limit for `genie-omp`; defaults to 2N.
    #[arg(long)]
    pub omp_kmax: Option<usize>,
    /// Seed of the Gaussian scenario G whose covariance `oracle` uses.
    #[arg(long)]
    pub prior_seed: Option<u64>,
    /// Scenario label for the CSV; defaults to the test file's directory name.
    #[arg(long)]
    pub tag: Option<String>,
}

const KEYS: [&str; 7] = ["estimators", "snr_grid", "omp_oversampling", "omp_kmax", "prior_seed", "seed", "tag"];

fn list_setting<T: std::str::FromStr>(settings: &Settings, key: &str) -> Result<Option<Vec<T>>> {
    settings
        .get(key)
        .map(|v| {
            v.split(',')
                .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("cannot parse '{s}' in config key '{key}'"))))
                .collect()
        })
        .transpose()
}

fn default_tag(test: &Path) -> String {
    test.parent()
        .and_then(|p| p.file_name())
        .or_else(|| test.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "test".into())
}

fn check_n(what: &str, got: usize, test: &ChannelDataset) -> Result<()> {
    if got != test.geo.n() {
        return Err(CliError::Usage(format!("{what} has N = {got} but the test data has N = {}", test.geo.n())));
    }
    Ok(())
}

pub fn run(args: &EvalArgs, common: &Common) -> Result<()> {
    let settings = Settings::load(common.config.as_deref(), &KEYS)?;
    let out = common.out.as_deref().ok_or_else(|| CliError::Usage("missing --out CSV path".into()))?;
    let manifest_path = sibling(out, "manifest.json");
    check_writable(out, common.force)?;
    check_writable(&manifest_path, common.force)?;

    let ids: Vec<String> = if !args.estimators.is_empty() {
        args.estimators.iter().map(|s| s.trim().to_string()).collect()
    } else {
        list_setting(&settings, "estimators")?.unwrap_or_else(|| vec!["ls".into()])
    };
    if let Some(bad) = ids.iter().find(|id| !ESTIMATOR_IDS.contains(&id.as_str())) {
        return Err(CliError::Usage(format!("unknown estimator '{bad}'; known ids: {}", ESTIMATOR_IDS.join(", "))));
    }
    let grid: Vec<f64> = if !args.snr_grid.is_empty() {
        args.snr_grid.clone()
    } else {
        list_setting(&settings, "snr_grid")?.unwrap_or_else(|| DEFAULT_SNR_GRID.to_vec())
    };
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::Usage("SNR grid must be strictly increasing".into()));
    }
    let seed = common.seed.or(settings.parsed("seed")?).unwrap_or(0);
    let oversampling = args.omp_oversampling.or(settings.parsed("omp_oversampling")?).unwrap_or(2);
    if !(oversampling == 2 || oversampling == 4) {
        return Err(CliError::Usage(format!("--omp-oversampling must be 2 or 4, got {oversampling}")));
    }
    let tag = args.tag.clone().or_else(|| settings.get("tag").map(str::to_string)).unwrap_or_else(|| default_tag(&args.test));

    let test = load_clean(&args.test, "test")?;
    let mut manifest = RunManifest::start("eval");
    manifest.seed("noise", seed);
    manifest.inputs.push(args.test.clone());

    let mut arms = Vec::new();
    for id in &ids {
        match id.as_str() {
            "ls" => arms.push(Arm::new("ls", Estimator::Ls)),
            "vae" => {
                if args.checkpoint.is_empty() {
                    return Err(CliError::Usage("estimator 'vae' needs a trained model: pass --checkpoint".into()));
                }
                for path in &args.checkpoint {
                    let model = load_model(path)?;
                    check_n(&format!("model {}", path.display()), model.n(), &test)?;
                    let label = if args.checkpoint.len() == 1 {
                        "vae".to_string()
                    } else {
                        format!("vae-{}", path.file_stem().map_or("model".into(), |s| s.to_string_lossy()))
                    };
                    manifest.inputs.push(path.clone());
                    arms.push(Arm::new(&label, Estimator::Vae(Box::new(model))));
                }
            }
            "lmmse" => {
                let path = args
                    .train
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("estimator 'lmmse' needs training data: pass --train".into()))?;
                let ds = load_data(path)?;
                check_n(&format!("training data {}", path.display()), ds.geo.n(), &test)?;
                let fit = match ds.kind {
                    DatasetKind::Clean => FittedLmmse::fit_clean(&ds.samples),
                    DatasetKind::Noisy => FittedLmmse::fit_noisy(&ds.samples, &ds.noise_var),
                }
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                manifest.inputs.push(path.clone());
                arms.push(Arm::new("lmmse", Estimator::SampleLmmse(fit)).with_extra("fit", format!("{:?}", ds.kind).to_lowercase()));
            }
            "genie-omp" => {
                let k_max = args.omp_kmax.or(settings.parsed("omp_kmax")?).unwrap_or(2 * test.geo.n());
                let dict = OmpDictionary::new(test.geo, oversampling);
                arms.push(
                    Arm::new("genie-omp", Estimator::GenieOmp { dict, k_max }).with_extra("oversampling", oversampling),
                );
            }
            "untrained" => {
                let model = Vae::new_zero_heads(VaeConfig { geo: test.geo, ..VaeConfig::default() })?;
                arms.push(Arm::new("untrained", Estimator::Vae(Box::new(model))));
            }
            "oracle" => {
                let prior_seed = args.prior_seed.or(settings.parsed("prior_seed")?).unwrap_or(seed);
                let Some(Scenario::Gaussian(g)) = Scenario::preset("G", prior_seed) else { unreachable!() };
                check_n("the Gaussian prior", g.geo.n(), &test)?;
                manifest.seed("prior", prior_seed);
                arms.push(Arm::new("oracle", Estimator::Oracle(g.covariance())));
            }
            _ => unreachable!("ids validated above"),
        }
    }

    manifest.config(&json!({
        "estimators": ids,
        "snr_grid": grid,
        "tag": tag,
        "omp_oversampling": oversampling,
    }));
    log::info!("evaluating {} estimator(s) on {} test channels over {} SNRs", arms.len(), test.len(), grid.len());
    let outcome = snr_sweep(&arms, &tag, &test.samples, &grid, seed);
    emit_csv(&outcome.records, out)?;
    manifest.outputs.push(out.to_path_buf());
    manifest.failures = outcome.failures.iter().map(|f| format!("{} at {} dB: {}", f.estimator, f.snr_db, f.message)).collect();
    let failed = manifest.failures.len();
    manifest.write(&manifest_path)?;
    if failed > 0 {
        return Err(CliError::ArmFailed(format!("{failed} estimator/SNR cell(s) failed; see {}", manifest_path.display())));
    }
    Ok(())
}
