use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Provenance embedded in every report: enough to replay the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, Value>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, deterministic: bool) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: (!deterministic).then(|| chrono::Utc::now().to_rfc3339()),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn param(mut self, name: &str, value: impl Serialize) -> Self {
        let value = serde_json::to_value(value).expect("parameters serialize to JSON");
        self.params.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub run: &'a RunManifest,
    #[serde(flatten)]
    pub body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, run: &RunManifest, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&Report { run, body })?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
