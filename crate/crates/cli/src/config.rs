//! Flat `key = value` run configuration.
//!
//! A config file fills in whatever the command line left unset; explicit
//! flags always win. Keys are the snake_case flag names. `#` starts a
//! comment, blank lines are ignored, duplicate or unknown keys are rejected
//! so a stale experiment file cannot silently misconfigure a run.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

pub struct FileConfig {
    map: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self {
            map: BTreeMap::new(),
            used: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::empty());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config {} line {}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!(
                    "config {}: duplicate key {key}",
                    path.display()
                )));
            }
        }
        Ok(Self {
            map,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    /// Flag value if given, else the config value, else `None`.
    pub fn opt<T>(&self, key: &str, cli: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let file = self.raw(key);
        if cli.is_some() {
            return Ok(cli);
        }
        match file {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|e| {
                CliError::Usage(format!("config key {key}: bad value {s:?}: {e}"))
            }),
        }
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn get<T>(&self, key: &str, cli: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.opt(key, cli)?.unwrap_or(default))
    }

    /// Like `get` but the value must come from the flag or the file.
    pub fn require<T>(&self, key: &str, cli: Option<T>) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.opt(key, cli)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Boolean switch: the flag can only turn it on, the file takes
    /// true/false.
    pub fn flag(&self, key: &str, cli: bool) -> CliResult<bool> {
        Ok(cli || self.opt::<bool>(key, None)?.unwrap_or(false))
    }

    /// Rejects any config key no resolver consumed.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .map
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )))
        }
    }
}
