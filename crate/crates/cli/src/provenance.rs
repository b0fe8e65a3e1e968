use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Embedded in every artifact the CLI writes. Deliberately free of
/// timestamps and host details so reruns reproduce it byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub core_version: &'static str,
    pub command: String,
    pub config_digest: String,
    pub config: RunConfig,
    /// Input name to digest (pack digest or file SHA-256).
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        let bytes = serde_json::to_vec(config).context("serialising run config")?;
        Ok(Provenance {
            tool: "ockr",
            cli_version: env!("CARGO_PKG_VERSION"),
            core_version: ockr_core::VERSION,
            command: command.to_string(),
            config_digest: hex::encode(Sha256::digest(&bytes)),
            config: config.clone(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn input(mut self, name: &str, digest: String) -> Self {
        self.inputs.insert(name.to_string(), digest);
        self
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).context("serialising provenance")
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
