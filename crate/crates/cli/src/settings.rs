//! `--config` files: `key = value` lines with `#` comments. Each command
//! declares the keys it accepts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ce_vae_core::channel::{load_dataset, noisy_dataset, streams, ChannelDataset, DatasetKind, SnrPolicy};
use ce_vae_core::vae::{load_checkpoint, Vae};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, usize)>,
}

impl Settings {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, allowed).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str, allowed: &[&str]) -> std::result::Result<Self, String> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or(format!("line {line}: expected 'key = value'"))?;
            let k = k.trim();
            if !allowed.contains(&k) {
                return Err(format!("line {line}: unknown key '{k}'; accepted keys: {}", allowed.join(", ")));
            }
            if values.insert(k.to_string(), (v.trim().to_string(), line)).is_some() {
                return Err(format!("line {line}: '{k}' set twice"));
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config line {line}: cannot parse '{v}' for '{key}'"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }
}

pub fn load_data(path: &Path) -> Result<ChannelDataset> {
    load_dataset(path).map_err(|e| CliError::channel(path, e))
}

pub fn load_clean(path: &Path, role: &str) -> Result<ChannelDataset> {
    let ds = load_data(path)?;
    if ds.kind != DatasetKind::Clean {
        return Err(CliError::Usage(format!("{}: {role} data must hold clean channels", path.display())));
    }
    Ok(ds)
}

/// Training observations: clean files are corrupted once with `policy`.
pub fn load_training(path: &Path, policy: SnrPolicy, seed: u64) -> Result<ChannelDataset> {
    let ds = load_data(path)?;
    match ds.kind {
        DatasetKind::Noisy => Ok(ds),
        DatasetKind::Clean => noisy_dataset(&ds, policy, seed, streams::TRAIN_NOISE).map_err(|e| CliError::channel(path, e)),
    }
}

pub fn load_model(path: &Path) -> Result<Vae> {
    load_checkpoint(path).map_err(|e| CliError::model(path, e))
}

/// Refuses to replace an existing file unless `force` is set.
pub fn check_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Io(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// `dir/stem.suffix` next to `path`, e.g. `model.cevm` -> `model.manifest.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_reject() {
        let s = Settings::parse("epochs = 3\n# c\nseed=2 # trailing\n", &["epochs", "seed"]).unwrap();
        assert_eq!(s.get("epochs"), Some("3"));
        assert_eq!(s.parsed::<u64>("seed").unwrap(), Some(2));
        assert!(Settings::parse("lr = 1\n", &["epochs"]).unwrap_err().contains("line 1"));
        assert!(Settings::parse("epochs\n", &["epochs"]).is_err());
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/model.cevm"), "manifest.json"), PathBuf::from("out/model.manifest.json"));
    }
}
