//! Run provenance embedded in every output file.
//!
//! Each artifact records the seed it was produced under, a hash of the
//! effective configuration, and the tool version, so byte-identical
//! outputs are expected exactly when the config hash matches.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Current schema version for persisted reports.
pub const REPORT_VERSION: u32 = 1;

/// Tool version stamped into outputs.
pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Hash of a serializable configuration (first 16 hex chars of SHA-256
/// over its canonical JSON form).
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let json = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&json);
    let mut hex = String::with_capacity(16);
    for byte in &digest[..8] {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// The provenance block carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

impl RunMeta {
    pub fn new<T: Serialize>(seed: u64, config: &T) -> Result<Self> {
        Ok(RunMeta {
            version: REPORT_VERSION,
            seed,
            config_hash: config_hash(config)?,
            tool_version: tool_version().to_string(),
        })
    }

    /// Reject reports written under a different schema version.
    pub fn check_version(&self) -> Result<()> {
        if self.version != REPORT_VERSION {
            return Err(Error::Version(format!(
                "report version {} not supported (expected {REPORT_VERSION})",
                self.version
            )));
        }
        Ok(())
    }
}
