//! Flat `key=value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const ECHO_FILE: &str = "run.config";

/// Resolved parameters of one command. Values from a config file are
/// overridden by explicit flags; every resolved value is recorded so the
/// run can be echoed and repeated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, n + 1, format!("expected key=value, got {line:?}")))?;
            let key = normalize_key(k.trim());
            if key.is_empty() {
                return Err(Error::parse(path, n + 1, "empty key"));
            }
            if file.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::parse(path, n + 1, format!("duplicate key {key}")));
            }
        }
        Ok(RunConfig {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Flag value if given, else the file's value, else `default`.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let key = normalize_key(key);
        let value = match flag {
            Some(v) => v,
            None => match self.file.get(&key) {
                Some(text) => text
                    .parse::<T>()
                    .map_err(|e| Error::InvalidArgument(format!("config key {key}={text}: {e}")))?,
                None => default.ok_or_else(|| Error::InvalidArgument(format!("missing required parameter {key}")))?,
            },
        };
        self.resolved.insert(key, value.to_string());
        Ok(value)
    }

    /// Like [`resolve`](Self::resolve) without a default, but absence is fine.
    pub fn resolve_optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let k = normalize_key(key);
        if flag.is_none() && !self.file.contains_key(&k) {
            return Ok(None);
        }
        self.resolve(key, flag, None).map(Some)
    }

    /// Records a value that was not looked up, e.g. a drawn seed.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(normalize_key(key), value.to_string());
    }

    /// Keys present in the file that no command parameter consumed.
    pub fn unused_keys(&self) -> Vec<String> {
        self.file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .cloned()
            .collect()
    }

    pub fn render(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes the resolved values to `dir/run.config`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

/// Flags use dashes, files may use either.
fn normalize_key(k: &str) -> String {
    k.replace('_', "-")
}
