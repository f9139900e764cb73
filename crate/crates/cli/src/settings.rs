//! Flag and config-file merging. A config file holds `key = value` lines;
//! keys are the long flag names with `-` replaced by `_`. Explicit flags
//! override file values.

use crate::error::CliError;
use kfbf_core::model::parse_kv;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self, CliError> {
        let map = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            map,
            used: BTreeSet::new(),
        })
    }

    /// Records an explicit flag value; it wins over the file.
    pub fn flag<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.map.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        self.used.insert(key.to_string());
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("invalid value '{v}' for {key}"))),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Usage(format!("missing --{} (or '{key}' in the config file)", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str) -> Result<Option<PathBuf>, CliError> {
        self.get::<String>(key).map(|v| v.map(PathBuf::from))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, CliError> {
        let raw: String = self.get_or(key, default.to_string())?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| CliError::Usage(format!("invalid entry '{s}' in {key}"))))
            .collect()
    }

    /// Entries not consumed by [`Settings::get`], for handing to the model
    /// configuration.
    pub fn remaining(&self) -> BTreeMap<String, String> {
        self.map
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn reject_unknown(&self, unknown: &[String]) -> Result<(), CliError> {
        match unknown.first() {
            Some(k) => Err(CliError::Usage(format!("unknown setting '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<String> = self.remaining().into_keys().collect();
        self.reject_unknown(&unknown)
    }
}
