//! Run manifests: what was run, on which inputs, by which version.

use std::path::{Path, PathBuf};

use mixkin_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub threads: usize,
    pub tool_version: String,
    pub timestamp: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params_context: Option<String>,
}

pub fn digest_file(path: &Path) -> Result<InputDigest, Error> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, inputs: &[PathBuf], seed: u64) -> Result<Self, Error> {
        Ok(RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::Invariant(format!("config serialization: {e}")))?,
            inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?,
            seed,
            threads: rayon::current_num_threads(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            params_context: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
