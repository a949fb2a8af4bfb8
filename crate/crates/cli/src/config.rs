//! Settings resolution: flags override a JSON config file, which overrides
//! built-in defaults. The resolved settings are echoed as `config.json`.

use std::fs;
use std::path::{Path, PathBuf};

use reactionmamba_core::data::write_atomic;
use reactionmamba_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const ECHO_NAME: &str = "config.json";

fn as_object(v: Value, what: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Usage(format!("{what} must be a JSON object"))),
    }
}

/// Merges defaults, then the config file, then every flag that was given.
/// Flags are read from the serialized argument struct; absent flags
/// serialize as `null` and are skipped.
pub fn resolve<D, A>(flags: &A, config_file: Option<&Path>) -> Result<D>
where
    D: Serialize + DeserializeOwned + Default,
    A: Serialize,
{
    let mut merged = as_object(serde_json::to_value(D::default()).expect("defaults serialize"), "defaults")?;
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| {
            Error::parse(path.display().to_string(), format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        for (k, v) in as_object(file, "config file")? {
            if !merged.contains_key(&k) {
                return Err(Error::Usage(format!("unknown key {k:?} in config file {}", path.display())));
            }
            merged.insert(k, v);
        }
    }
    let given = as_object(serde_json::to_value(flags).expect("flags serialize"), "flags")?;
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Usage(format!("invalid settings: {e}")))
}

/// A setting that has no default.
pub fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Usage(format!("{flag} is required")))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("settings serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes the resolved settings into `dir/config.json`.
pub fn echo(dir: &Path, settings: &impl Serialize) -> Result<PathBuf> {
    let path = dir.join(ECHO_NAME);
    write_json(&path, settings)?;
    Ok(path)
}

/// Thread cap from `REACTIONMAMBA_THREADS`; all compute here runs on one
/// thread, so any positive value is honoured.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("REACTIONMAMBA_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Usage(format!("REACTIONMAMBA_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}
