//! Run manifests: the effective config plus digests of everything emitted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;
use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Effective config, seed overrides applied; enough to replay the run.
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub digests: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_s: f64,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
        m.config.validate()?;
        Ok(m)
    }

    /// Names of outputs in `dir` whose contents no longer match the manifest.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| {
                std::fs::read(dir.join(&o.path)).map_or(true, |b| sha256_hex(&b) != o.sha256)
            })
            .map(|o| o.path.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
