//! Run reports: a stable JSON document describing what a command did.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gntk::kernel::GntkConfig;
use serde::Serialize;

/// Versioned record of a command invocation.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub config: GntkConfig,
    /// Stage name to milliseconds.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: impl Into<String>, config: GntkConfig) -> Self {
        Self {
            schema: 1,
            command: command.into(),
            config,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn timing(&mut self, stage: &str, ms: f64) -> &mut Self {
        self.timings.insert(stage.to_string(), ms);
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn warning(&mut self, message: impl Into<String>) -> &mut Self {
        self.warnings.push(message.into());
        self
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_schema_is_versioned() {
        let mut report = RunReport::new("kernel", GntkConfig::default());
        report.timing("init", 1.5).warning("w");
        let json = serde_json::to_string(&report).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["schema"], 1);
        assert_eq!(value["timings"]["init"], 1.5);
        assert_eq!(value["warnings"][0], "w");
    }
}
