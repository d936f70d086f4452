//! Run manifests: every artifact references the manifest that produced it.
//!
//! The manifest id is a digest over (command, config snapshot, seed, input
//! digests), so identical runs produce identical manifests and artifacts —
//! no timestamps anywhere.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_id: String,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    /// Input file name → sha256 of contents.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name → format version.
    pub artifacts: BTreeMap<String, u32>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("digesting {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        config: BTreeMap<String, String>,
        inputs: BTreeMap<String, String>,
    ) -> Self {
        let body = serde_json::json!({
            "command": command,
            "seed": seed,
            "config": config,
            "inputs": inputs,
        });
        let manifest_id = sha256_hex(serde_json::to_string(&body).expect("serializable").as_bytes());
        RunManifest {
            manifest_id: manifest_id[..16].to_string(),
            command: command.to_string(),
            seed,
            config,
            inputs,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record_artifact(&mut self, name: &str, version: u32) {
        self.artifacts.insert(name.to_string(), version);
    }

    /// Write `manifest-<command>.json` into the output directory.
    pub fn save(&self, out_dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
