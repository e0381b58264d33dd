//! Flat JSON configuration file. A value given on the command line wins over
//! the file, which wins over the built-in default.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

/// Name of the environment variable holding the default seed.
pub const SEED_ENV: &str = "CLMN_SEED";

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: Map<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let Value::Object(values) = serde_json::from_str(text)? else {
            bail!("expected a JSON object of key/value pairs");
        };
        if let Some((k, _)) = values.iter().find(|(_, v)| v.is_object() || v.is_array()) {
            bail!("key `{k}`: nested values are not supported");
        }
        Ok(Self { values })
    }

    /// `flag`, else the file's `key`, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.lookup(flag, key)?.unwrap_or(default))
    }

    pub fn lookup<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key `{key}` has the wrong type")),
        }
    }

    /// Seed order: flag, config `seed`, the environment variable, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.lookup(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }
}
