//! Run manifests and the final write of staged outputs.

use std::fs;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::commands::Staged;
use crate::config::RunConfig;
use crate::CliError;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    config: &'a RunConfig,
    noise_seed: Option<u64>,
    outputs: Vec<OutputEntry>,
    details: Value,
}

/// Creates the output directory and writes the staged files plus
/// `manifest.json`. Nothing is written when staging failed earlier.
pub fn commit(command: &str, config_text: &str, cfg: &RunConfig, staged: Staged) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.output_dir)?;
    let mut outputs = Vec::with_capacity(staged.files.len());
    for (name, bytes) in &staged.files {
        fs::write(cfg.output_dir.join(name), bytes)?;
        outputs.push(OutputEntry { file: name.clone(), sha256: sha256_hex(bytes) });
    }
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: cfg,
        noise_seed: cfg.noise.map(|n| n.seed),
        outputs,
        details: staged.details,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.into()))?;
    fs::write(cfg.output_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
