//! Run manifest and machine-readable error record, both JSON.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub label: String,
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the canonical config text (defaults applied).
    pub config_sha256: String,
    pub started_at: String,
    pub finished_at: String,
    pub solves: Vec<SolveRecord>,
    /// Paths relative to the output directory, in write order.
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, f64>,
    /// Effective config, defaults included.
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub command: String,
    pub stage: String,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

/// Hash of the canonical config text. The output directory is left out, so
/// the same run written to two places carries the same hash.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory.clear();
    Sha256::digest(c.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{bundled, parse_config};

    #[test]
    fn hash_ignores_formatting_and_tracks_values() {
        let text = bundled("paper_fig4a").unwrap();
        let a = parse_config(text).unwrap();
        let b = parse_config(&format!("# extra comment\n{text}")).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        let mut c = a.clone();
        c.device.resolution_um = 4.0;
        assert_ne!(config_hash(&a), config_hash(&c));
        let mut d = a.clone();
        d.output.directory = "elsewhere".into();
        assert_eq!(config_hash(&a), config_hash(&d));
    }
}
