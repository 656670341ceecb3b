//! Human-readable TOML configuration files and content digests.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

/// Parses `text` as a set of overrides on `T::default()`.
///
/// Nested tables are merged key by key, so a partial `[synth]` table inside
/// an experiment config keeps the experiment's own defaults for the keys it
/// leaves out. Unknown keys are still rejected by the target type.
pub fn from_toml<T: Serialize + DeserializeOwned + Default>(text: &str) -> Result<T> {
    let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut merged = toml::Table::try_from(T::default()).map_err(|e| Error::Config(e.to_string()))?;
    overlay(&mut merged, overrides);
    merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn overlay(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => overlay(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

pub fn load<T: Serialize + DeserializeOwned + Default>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Digest of the canonical TOML rendering of a config.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    Ok(digest(to_toml(value)?.as_bytes()))
}
