//! Layered settings: built-in defaults, then a `key = value` file, then flags.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub type Overrides = BTreeMap<String, Value>;

/// Reads `key = value` lines. `#` starts a comment; dashes in keys become
/// underscores. Values parse as JSON when they can and as strings otherwise.
pub fn parse_config_text(text: &str) -> Result<Overrides> {
    let mut out = Overrides::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(Error::InvalidInput(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        let v = v.trim();
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.insert(key, value);
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

/// Flag structs serialize only the flags that were given.
pub fn flag_overrides<T: Serialize>(flags: &T) -> Overrides {
    match serde_json::to_value(flags) {
        Ok(Value::Object(m)) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Overrides::new(),
    }
}

fn fields_of<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// Replaces every field of `base` named in `overrides`.
pub fn apply<T: Serialize + DeserializeOwned>(base: &T, overrides: &Overrides) -> Result<T> {
    let mut fields = fields_of(base);
    for (k, v) in overrides {
        if fields.contains_key(k) {
            fields.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(fields))
        .map_err(|e| Error::InvalidInput(format!("bad setting: {e}")))
}

/// Rejects keys that none of the known setting groups has.
pub fn check_known(
    overrides: &Overrides,
    known: &[Map<String, Value>],
    extra: &[&str],
) -> Result<()> {
    for k in overrides.keys() {
        if !extra.contains(&k.as_str()) && !known.iter().any(|m| m.contains_key(k)) {
            return Err(Error::InvalidInput(format!("unknown setting {k:?}")));
        }
    }
    Ok(())
}

pub fn known_fields<T: Serialize>(value: &T) -> Map<String, Value> {
    fields_of(value)
}
