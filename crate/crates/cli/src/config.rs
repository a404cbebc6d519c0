//! Flat `key = value` run configuration with flags-over-file-over-defaults
//! precedence. Every command resolves and validates the settings it needs
//! before touching the output directory, so a bad config never leaves partial
//! outputs behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

/// Every key the configuration file may contain. Anything else is rejected
/// by name, which catches typos before a run silently falls back to a
/// default.
pub const KNOWN_KEYS: &[&str] = &[
    "corpus",
    "features",
    "fractions",
    "input",
    "interventions",
    "l2_penalty",
    "learning_rate",
    "max_epochs",
    "min_speakers",
    "min_turns",
    "model",
    "out_dir",
    "predictor_endpoint",
    "seed",
    "seeds",
    "smoothing",
    "tagger_backend",
    "tagger_endpoint",
    "tags",
    "threshold",
    "tolerance",
    "train_frac",
    "val_frac",
    "vocab",
    "workers",
];

/// Execution knobs that do not influence output bytes; they are excluded
/// from the manifest's config hash so re-running with a different worker
/// count or output directory still counts as the same experiment.
const NON_EXPERIMENT_KEYS: &[&str] = &["out_dir", "workers"];

fn defaults() -> BTreeMap<String, String> {
    [
        ("out_dir", "out"),
        ("seed", "42"),
        ("workers", "0"),
        ("tagger_backend", "lexicon"),
        ("features", "social_counts"),
        ("learning_rate", "0.1"),
        ("max_epochs", "2000"),
        ("l2_penalty", "0.0001"),
        ("tolerance", "1e-7"),
        ("threshold", "0.5"),
        ("fractions", "0.01,0.1,0.2,0.5,1.0"),
        ("seeds", "42,43,44,45,46"),
        ("smoothing", "1"),
        ("train_frac", "0.7"),
        ("val_frac", "0.1"),
        ("min_speakers", "2"),
        ("min_turns", "2"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Defaults, overlaid with the config file when one is given.
    pub fn load(config_path: Option<&Path>) -> Result<Settings> {
        let mut values = defaults();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file `{}`", path.display()))?;
            let mut seen = BTreeMap::new();
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    anyhow!(
                        "{}:{}: expected `key = value`, got `{line}`",
                        path.display(),
                        i + 1
                    )
                })?;
                let key = key.trim();
                let value = value.trim();
                if !KNOWN_KEYS.contains(&key) {
                    bail!("{}:{}: unknown config key `{key}`", path.display(), i + 1);
                }
                if let Some(first) = seen.insert(key.to_string(), i + 1) {
                    bail!(
                        "{}:{}: duplicate config key `{key}` (first set on line {first})",
                        path.display(),
                        i + 1
                    );
                }
                values.insert(key.to_string(), value.to_string());
            }
        }
        Ok(Settings { values })
    }

    /// Applies one command-line override; flags always win over the file.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unknown settings key `{key}`");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl ToString>) {
        if let Some(value) = value {
            self.set(key, value.to_string());
        }
    }

    /// The raw value, with empty strings treated as unset.
    pub fn get(&self, key: &str) -> Option<&str> {
        match self.values.get(key).map(String::as_str) {
            Some("") | None => None,
            Some(v) => Some(v),
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            anyhow!("`{key}` is not set; pass it as a flag or add `{key} = ...` to the config")
        })
    }

    /// A path that must already exist (all inputs are validated up front).
    pub fn require_existing_path(&self, key: &str) -> Result<PathBuf> {
        let path = PathBuf::from(self.require(key)?);
        if !path.exists() {
            bail!("`{key}` points to `{}`, which does not exist", path.display());
        }
        Ok(path)
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.values.get("out_dir").expect("out_dir has a default"))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse().with_context(|| format!("`{key}` must be a number, got `{raw}`"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let raw = self.require(key)?;
        raw.parse().with_context(|| format!("`{key}` must be an integer, got `{raw}`"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        raw.parse().with_context(|| format!("`{key}` must be an integer, got `{raw}`"))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?
            .split(',')
            .map(|part| {
                let part = part.trim();
                part.parse()
                    .with_context(|| format!("`{key}` has a non-numeric entry `{part}`"))
            })
            .collect()
    }

    pub fn u64_list(&self, key: &str) -> Result<Vec<u64>> {
        self.require(key)?
            .split(',')
            .map(|part| {
                let part = part.trim();
                part.parse()
                    .with_context(|| format!("`{key}` has a non-integer entry `{part}`"))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("seed")
    }

    pub fn workers(&self) -> Result<usize> {
        self.usize("workers")
    }

    /// Canonical `key = value` lines of everything that defines the
    /// experiment, for the manifest's config hash.
    pub fn experiment_lines(&self) -> Vec<String> {
        self.values
            .iter()
            .filter(|(key, _)| !NON_EXPERIMENT_KEYS.contains(&key.as_str()))
            .map(|(key, value)| format!("{key} = {value}"))
            .collect()
    }
}
