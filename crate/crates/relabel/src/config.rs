//! Experiment config loading with command-line overrides.

use std::path::Path;

use relabel_core::harness::ExperimentConfig;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io::read_json;

/// The demo config shipped with the repository.
pub const DEMO_CONFIG: &str = include_str!("../../../configs/demo.json");

pub fn demo() -> ExperimentConfig {
    serde_json::from_str(DEMO_CONFIG).expect("shipped demo config parses")
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = config;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: {:?} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert((*key).into(), value);
            return Ok(());
        }
        node = obj.entry(*key).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one key")
}

/// Reads `path`, applies `--seed` (rederiving every seed) and then each override.
pub fn load(path: &Path, seed: Option<u64>, overrides: &[String]) -> Result<ExperimentConfig> {
    // An unreadable or malformed config is a usage problem, not a stage failure.
    let mut config: ExperimentConfig = read_json(path).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        config = config.reseeded(s);
    }
    if overrides.is_empty() {
        return Ok(config);
    }
    let mut value = serde_json::to_value(&config).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("config after overrides: {e}")))
}
