//! Run manifests: every CLI invocation records its resolved configuration,
//! seed, and output paths. Rerunning with an identical manifest reproduces
//! identical non-timing outputs; the timestamps are the only fields
//! excluded from that guarantee.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub fn build_id() -> String {
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!("{}-{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), profile)
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub build_id: String,
    pub rng_seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn start(subcommand: &str, rng_seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            build_id: build_id(),
            rng_seed,
            config,
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Finalize timestamps and write `<out_dir>/manifest.json`.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = now_ms();
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }
}
