use ce_vae_core::channel::{generate_split, save_dataset, Scenario, PRESET_NAMES};
use clap::Args;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::settings::{check_writable, create_dir, Settings};
use crate::Common;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario preset (A, B or G).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Total sample count; split 80/10/10 unless --split is given.
    #[arg(long)]
    pub count: Option<usize>,
    /// Train/val/test counts, e.g. 100/10/10.
    #[arg(long)]
    pub split: Option<String>,
}

const KEYS: [&str; 4] = ["scenario", "count", "split", "seed"];

fn parse_split(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split('/').collect();
    let bad = || CliError::Usage(format!("--split expects three counts like 100/10/10, got '{s}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

pub fn resolve_split(count: Option<usize>, split: Option<&str>) -> Result<[usize; 3]> {
    match (count, split) {
        (_, Some(s)) => {
            let sp = parse_split(s)?;
            let total: usize = sp.iter().sum();
            if let Some(c) = count.filter(|&c| c != total) {
                return Err(CliError::Usage(format!("--count {c} does not match split total {total}")));
            }
            Ok(sp)
        }
        (Some(c), None) => {
            let (train, val) = (c * 8 / 10, c / 10);
            Ok([train, val, c - train - val])
        }
        (None, None) => Err(CliError::Usage("give --count or --split".into())),
    }
}

pub fn run(args: &GenerateArgs, common: &Common) -> Result<()> {
    let settings = Settings::load(common.config.as_deref(), &KEYS)?;
    let name = args
        .scenario
        .clone()
        .or_else(|| settings.get("scenario").map(str::to_string))
        .ok_or_else(|| CliError::Usage(format!("missing --scenario; presets: {}", PRESET_NAMES.join(", "))))?;
    let seed = common.seed.or(settings.parsed("seed")?).unwrap_or(0);
    let scenario = Scenario::preset(&name, seed)
        .ok_or_else(|| CliError::Usage(format!("unknown scenario '{name}'; presets: {}", PRESET_NAMES.join(", "))))?;
    let count = args.count.or(settings.parsed("count")?);
    let split = args.split.clone().or_else(|| settings.get("split").map(str::to_string));
    let [train, val, test] = resolve_split(count, split.as_deref())?;
    let out = common.out.as_deref().ok_or_else(|| CliError::Usage("missing --out directory".into()))?;

    let names = ["train.cedf", "val.cedf", "test.cedf", "manifest.json"];
    for n in names {
        check_writable(&out.join(n), common.force)?;
    }
    create_dir(out)?;
    let mut manifest = RunManifest::start("generate");
    manifest.seed("scenario", seed);
    manifest.config(&json!({ "scenario": scenario, "split": [train, val, test] }));

    log::info!("generating scenario {name}: {train}/{val}/{test} samples");
    let splits = generate_split(&scenario, train, val, test).map_err(|e| CliError::Data(e.to_string()))?;
    for (ds, n) in splits.iter().zip(names) {
        let path = out.join(n);
        save_dataset(ds, &path).map_err(|e| CliError::channel(&path, e))?;
        manifest.outputs.push(path);
    }
    manifest.write(&out.join("manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_resolution() {
        assert_eq!(resolve_split(Some(120), Some("100/10/10")).unwrap(), [100, 10, 10]);
        assert_eq!(resolve_split(None, Some("5/1/1")).unwrap(), [5, 1, 1]);
        assert_eq!(resolve_split(Some(100), None).unwrap(), [80, 10, 10]);
        assert!(resolve_split(Some(50), Some("100/10/10")).is_err());
        assert!(resolve_split(None, Some("1/2")).is_err());
        assert!(resolve_split(None, None).is_err());
    }
}
