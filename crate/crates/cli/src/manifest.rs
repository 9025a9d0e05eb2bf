//! One `manifest.json` per run.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use crate::io;

/// What a command produced, before timing is attached.
pub struct Outcome {
    pub out_dir: PathBuf,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub converged: Option<bool>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub config: &'a serde_json::Value,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub converged: Option<bool>,
    pub outputs: Vec<&'a Path>,
}

pub fn write(command: &str, outcome: &Outcome, wall_time_secs: f64) -> Result<PathBuf> {
    let m = RunManifest {
        command,
        args: std::env::args().collect(),
        config: &outcome.config,
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        wall_time_secs,
        converged: outcome.converged,
        outputs: outcome.outputs.iter().map(PathBuf::as_path).collect(),
    };
    let path = outcome.out_dir.join("manifest.json");
    io::write_json(&path, &m)?;
    Ok(path)
}
