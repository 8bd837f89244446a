//! Layered settings: built-in defaults, then the `--config` file, then flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub type Layer = Map<String, Value>;

/// Reads a config file. A manifest written by a previous run is accepted too,
/// in which case its resolved settings are used.
pub fn load_config(path: &Path, subcommand: &str) -> CliResult<Layer> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let Value::Object(obj) = value else {
        return Err(CliError::Usage(format!(
            "config {} must hold a JSON object",
            path.display()
        )));
    };
    if let (Some(Value::String(cmd)), Some(Value::Object(cfg))) =
        (obj.get("subcommand"), obj.get("config"))
    {
        if cmd != subcommand {
            return Err(CliError::Usage(format!(
                "manifest {} was written by '{cmd}', not '{subcommand}'",
                path.display()
            )));
        }
        return Ok(cfg.clone());
    }
    Ok(obj)
}

fn to_layer(v: &impl Serialize) -> Layer {
    match serde_json::to_value(v) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// Merges `config` and `flags` over `S::default()`. Unknown config keys are
/// rejected. Returns the settings and the merged layer for the manifest.
pub fn resolve<S>(config: Option<&Layer>, flags: &impl Serialize) -> CliResult<(S, Layer)>
where
    S: Serialize + DeserializeOwned + Default,
{
    let mut merged = to_layer(&S::default());
    if let Some(cfg) = config {
        for (k, v) in cfg {
            if !merged.contains_key(k) {
                return Err(CliError::Usage(format!("unknown config key '{k}'")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    merged.extend(to_layer(flags));
    let settings = serde_json::from_value(Value::Object(merged.clone()))
        .map_err(|e| CliError::Usage(format!("invalid settings: {e}")))?;
    Ok((settings, merged))
}
