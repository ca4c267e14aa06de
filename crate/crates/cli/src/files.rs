use std::fs;
use std::path::{Path, PathBuf};

use muvitanet::data::SyntheticSpec;
use muvitanet::trainer::TrainerConfig;
use muvitanet::{EncoderConfig, Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PROVENANCE_FILE: &str = "provenance.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "state.json";

/// Everything a command resolved from files, flags and defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            bundle: None,
            out: None,
            synthetic: None,
            encoder: None,
            trainer: None,
            jobs: None,
        }
    }
}

/// Parses a JSON config file; schema problems are configuration errors
/// naming the file.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold_{fold}"))
}

/// Checkpoint files named by `path`: the file itself, `path/checkpoint.json`,
/// or every `path/fold_*/checkpoint.json` ordered by fold.
pub fn resolve_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::Lookup(format!("no checkpoint at {}", path.display())));
    }
    let direct = path.join(CHECKPOINT_FILE);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut folds: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let name = entry.file_name();
        let Some(k) = name.to_str().and_then(|n| n.strip_prefix("fold_")).and_then(|n| n.parse().ok()) else {
            continue;
        };
        let file = entry.path().join(CHECKPOINT_FILE);
        if file.is_file() {
            folds.push((k, file));
        }
    }
    if folds.is_empty() {
        return Err(Error::Lookup(format!("no fold checkpoints under {}", path.display())));
    }
    folds.sort();
    Ok(folds.into_iter().map(|(_, p)| p).collect())
}
