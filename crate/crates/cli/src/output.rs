//! Output files. Every CSV starts with `#` metadata lines carrying the
//! subcommand, the hash of the effective settings and the seed; every JSON
//! document carries the same fields under `meta`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use spectralab_core::grid::TorusGrid;

use crate::CliError;

pub struct Output {
    dir: PathBuf,
    command: String,
    hash: String,
    seed: u64,
}

/// SHA-256 of the compact JSON form. `serde_json` maps keep keys sorted, so
/// equal settings always hash equally.
pub fn settings_hash(settings: &Value) -> String {
    hex::encode(Sha256::digest(settings.to_string().as_bytes()))
}

pub fn grid_json(g: &TorusGrid) -> Value {
    json!({"n": g.n, "N": g.big_n, "L": g.l})
}

impl Output {
    /// Creates `dir` if missing. The output directory itself is not part of
    /// the hash, so runs that differ only in where they write agree byte for byte.
    pub fn new(dir: &Path, command: &str, settings: &Value, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.to_string(), hash: settings_hash(settings), seed })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Ok(path)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut s = format!(
            "# spectralab {}\n# config_sha256={}\n# seed={}\n{}\n",
            self.command,
            self.hash,
            self.seed,
            header.join(",")
        );
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }

    pub fn write_json(&self, name: &str, mut body: Value) -> Result<PathBuf, CliError> {
        body["meta"] = json!({"command": self.command, "config_sha256": self.hash, "seed": self.seed});
        let text = serde_json::to_string_pretty(&body).expect("JSON values always serialize");
        self.write(name, &(text + "\n"))
    }
}

/// Shortest round-trip decimal form, so CSV values are exact and stable.
pub fn num(x: f64) -> String {
    format!("{x}")
}
