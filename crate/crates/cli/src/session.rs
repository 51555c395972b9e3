use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tractable::io::{self, OutputDir, OutputRecord, RunConfig, RunManifest};
use tractable::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Path and content digest of an input file, for the hashed run configuration.
pub fn input_ref(path: &Path) -> Result<serde_json::Value> {
    let bytes = std::fs::read(path).map_err(|e| tractable::Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::json!({ "path": path.display().to_string(), "sha256": sha256_hex(&bytes) }))
}

/// One run: claims the output directory, tracks emitted files, writes the manifest.
pub struct Session {
    out: OutputDir,
    config: RunConfig,
    outputs: Vec<OutputRecord>,
}

impl Session {
    pub fn start(config: RunConfig) -> Result<Self> {
        let out = OutputDir::claim(&config.out_dir)?;
        Ok(Session { out, config, outputs: Vec::new() })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn emit_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        io::write_atomic(&self.out.join(name), bytes)?;
        let record = OutputRecord { file: name.to_string(), sha256: sha256_hex(bytes) };
        match self.outputs.iter_mut().find(|r| r.file == name) {
            Some(r) => *r = record,
            None => self.outputs.push(record),
        }
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.emit_bytes(name, &bytes)
    }

    pub fn emit_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.emit_bytes(name, &io::csv_bytes(rows)?)
    }

    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_hash: sha256_hex(&self.config.canonical_bytes()),
            config: self.config,
            outputs: self.outputs,
        };
        io::write_json(&self.out.join("run_manifest.json"), &manifest)
    }
}
