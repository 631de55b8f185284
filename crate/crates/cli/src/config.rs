//! Layered run settings: command-line flags, then a `key = value` config
//! file, then (for `eval --model`) the settings recorded in a model file,
//! then built-in defaults. `MULTITAG_SEED` overrides the default seed only.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use multitag::{Error, Result};

pub const SEED_ENV: &str = "MULTITAG_SEED";

/// Every key a config file may set; names match the long flags.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "beta",
    "clip-jitter",
    "clips-per-track",
    "data",
    "epochs",
    "estimator",
    "false-tag-rate",
    "features",
    "features-header",
    "fold-seed",
    "group-tracks",
    "hidden",
    "inference",
    "inference-k",
    "items",
    "k",
    "kind",
    "l1",
    "labels",
    "lr",
    "min-positive",
    "model",
    "name",
    "out",
    "recall",
    "seed",
    "tag-bias",
    "tags",
    "targets",
    "tied-pairs",
    "triples",
    "users",
    "users-per-item",
    "vocab-size",
    "cd-runs",
    "dim",
];

#[derive(Debug, Clone, Default)]
pub struct Layers {
    file: BTreeMap<String, String>,
    recorded: BTreeMap<String, String>,
    env_seed: Option<String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parse `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found `{line}`")))?;
        let key = normalize_key(key);
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if out.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err(err(format!("key `{key}` set twice")));
        }
    }
    Ok(out)
}

impl Layers {
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                parse_config(path, &text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Layers {
            file,
            recorded: BTreeMap::new(),
            env_seed: std::env::var(SEED_ENV).ok(),
        })
    }

    /// Settings recorded in a model file; they rank below the config file.
    pub fn with_recorded(mut self, recorded: &BTreeMap<String, String>) -> Self {
        self.recorded = recorded
            .iter()
            .filter(|(k, _)| KNOWN_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        self
    }

    fn lookup(&self, key: &str) -> Option<&String> {
        self.file.get(key).or_else(|| self.recorded.get(key))
    }

    pub fn value<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.lookup(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.value(flag, key)?.unwrap_or(default))
    }

    pub fn required<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.value(flag, key)?
            .ok_or_else(|| Error::InvalidConfig(format!("--{key} is required (flag or config file)")))
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        self.value(flag, key)
    }

    /// Switches are on when given on the command line or set to `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.value::<bool>(None, key)?.unwrap_or(false))
    }

    /// A comma-separated list; an empty flag list falls through to lower layers.
    pub fn list<T>(&self, flag: Vec<T>, key: &str, default: T) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.maybe_list(flag, key)?.unwrap_or_else(|| vec![default]))
    }

    pub fn maybe_list<T>(&self, flag: Vec<T>, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if !flag.is_empty() {
            return Ok(Some(flag));
        }
        self.lookup(key)
            .map(|v| v.split(',').map(|part| parse_value(key, part.trim())).collect())
            .transpose()
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(seed) = self.value(flag, "seed")? {
            return Ok(seed);
        }
        match &self.env_seed {
            Some(v) => parse_value(SEED_ENV, v),
            None => Ok(0),
        }
    }
}

fn parse_value<T>(key: &str, raw: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value `{raw}` for {key}: {e}")))
}
