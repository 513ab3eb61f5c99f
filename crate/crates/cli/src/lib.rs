//! Batch front-end for spinmqc: TOML run configs, sweeps, manifests and the
//! acceptance checks behind `mqc verify`.

pub mod checks;
pub mod config;
pub mod manifest;
pub mod run;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use run::run_to_dir;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "MQC_OUT_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

/// Output directory: the flag, then the config, then `$MQC_OUT_ROOT/<stem>`,
/// then `mqc-out/<stem>`.
pub fn resolve_out(flag: Option<&Path>, cfg: Option<&Path>, stem: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg {
        return p.to_path_buf();
    }
    let root =
        std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("mqc-out"), PathBuf::from);
    root.join(stem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_precedence() {
        let a = Path::new("a");
        let b = Path::new("b");
        assert_eq!(resolve_out(Some(a), Some(b), "x"), a);
        assert_eq!(resolve_out(None, Some(b), "x"), b);
        assert!(resolve_out(None, None, "x").ends_with("x"));
    }
}
