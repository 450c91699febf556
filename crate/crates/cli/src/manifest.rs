//! Run manifests: config hash, versions, seed and the hash of every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config_sha256: String,
    /// The effective configuration after flag overrides.
    pub config: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form, so key order in the file does not matter.
pub fn config_hash(c: &Config) -> String {
    sha256_hex(serde_json::to_string(c).expect("config serializes").as_bytes())
}

/// Collects output files as they are written and produces the manifest.
pub struct Outputs {
    pub dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl Outputs {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
        let p = self.dir.join(name);
        std::fs::write(&p, bytes)?;
        self.entries.push(OutputEntry { file: name.into(), sha256: sha256_hex(bytes) });
        Ok(p)
    }

    pub fn finish(self, subcommand: &str, c: &Config) -> std::io::Result<Manifest> {
        let m = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: "widthlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            seed: c.seed,
            config_sha256: config_hash(c),
            config: serde_json::to_value(c).expect("config serializes"),
            outputs: self.entries,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(self.dir.join(format!("{subcommand}.manifest.json")), text + "\n")?;
        Ok(m)
    }
}
