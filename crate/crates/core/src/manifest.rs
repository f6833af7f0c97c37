//! Run manifests: a JSON record of what a CLI invocation did, written next
//! to its outputs so every result can be reproduced.

use crate::optimizer::OptimizerConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name plus its resolved arguments.
    pub command: String,
    pub tool_version: String,
    /// Effective optimizer configuration, when one was in play.
    pub config: Option<OptimizerConfig>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            wall_time_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|source| Error::Io {
            context: format!("writing manifest {}", path.display()),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading manifest {}", path.display()),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.manifest.json");
        let mut m = RunManifest::new("analyze --type p");
        m.seed = Some(17);
        m.outputs.push("report.json".into());
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.command, m.command);
        assert_eq!(back.seed, Some(17));
        assert_eq!(back.outputs, m.outputs);
    }
}
