//! Layered settings: command-line flag, then config file, then built-in
//! default. The file may hold shared top-level keys plus one object per
//! command (`"pretrain": {...}`); section keys win over top-level ones.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::CliError;

pub const DEFAULT_SEED: u64 = 42;

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::usage(format!("config {} must hold a JSON object", path.display())));
    }
    Ok(v)
}

/// Flag value for `key`, `None` when the flag was not given.
pub fn flag<T: Serialize>(key: &'static str, v: &Option<T>) -> (&'static str, Option<Value>) {
    (key, v.as_ref().map(|v| serde_json::to_value(v).expect("flag values serialize")))
}

/// Resolves `T` for one command and logs where each field came from.
/// Returns the value and its JSON snapshot.
pub fn resolve<T>(section: &str, file: Option<&Value>, flags: &[(&'static str, Option<Value>)]) -> Result<(T, Value), CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let Value::Object(mut merged) = serde_json::to_value(T::default())? else {
        unreachable!("config types serialize to objects")
    };
    let mut source: Map<String, Value> = merged.keys().map(|k| (k.clone(), "default".into())).collect();
    if let Some(Value::Object(file)) = file {
        let mut layers = vec![file];
        if let Some(Value::Object(sec)) = file.get(section) {
            for k in sec.keys().filter(|k| !merged.contains_key(*k)) {
                log::warn!("{section}: ignoring unknown config key `{k}`");
            }
            layers.push(sec);
        }
        for obj in layers {
            for (k, v) in obj {
                if merged.contains_key(k) {
                    merged.insert(k.clone(), v.clone());
                    source.insert(k.clone(), "file".into());
                }
            }
        }
    }
    for (k, v) in flags {
        if let Some(v) = v {
            debug_assert!(merged.contains_key(*k), "flag {k} has no config field");
            merged.insert(k.to_string(), v.clone());
            source.insert(k.to_string(), "flag".into());
        }
    }
    for (k, v) in &merged {
        log::info!("{section}.{k} = {v} ({})", source[k].as_str().unwrap_or("?"));
    }
    let value: T = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("{section} config: {e}")))?;
    let snapshot = serde_json::to_value(&value)?;
    Ok((value, snapshot))
}
