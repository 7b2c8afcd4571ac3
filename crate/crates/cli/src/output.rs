use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use cyberdyn::process::mix_seed;

use crate::config::{RunConfig, Setup};

/// All file writes go through here, from the main thread.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        crate::config::ensure_dir(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn files(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    }
}

/// Fractions in increasing order with the shuffle seed of each trajectory.
pub fn initial_seeds(fractions: &[f64], seed: u64) -> Vec<(f64, u64)> {
    let mut sorted = fractions.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .enumerate()
        .map(|(k, f)| (f, mix_seed(seed, k as u64)))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Replay record: version, resolved configuration, graph identity, every
/// seed, and the preset descriptor with its hash.
pub fn metadata(command: &str, cfg: &RunConfig, setup: &Setup, extra: Value) -> Value {
    let (preset, descriptor, hash, reconstruction) = match &setup.preset {
        Some(p) => {
            let d = p.descriptor();
            let hash = sha256_hex(serde_json::to_string(&d).expect("descriptor serializes").as_bytes());
            (Some(p.name.clone()), Some(d), Some(hash), p.reconstruction.clone())
        }
        None => (None, None, None, None),
    };
    let initial: Vec<Value> = initial_seeds(&setup.fractions, cfg.seed)
        .into_iter()
        .map(|(f, s)| json!({ "fraction": f, "seed": s }))
        .collect();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "preset": preset,
        "preset_hash": hash,
        "preset_descriptor": descriptor,
        "reconstruction": reconstruction,
        "model": setup.model.name(),
        "t_end": setup.t_end,
        "dt": cfg.dt,
        "seeds": {
            "seed": cfg.seed,
            "initial": initial,
        },
        "graph": setup.graph_info,
        "config": cfg,
        "extra": extra,
    })
}
