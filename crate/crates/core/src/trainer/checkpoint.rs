use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::TrainerConfig;
use super::cv::FoldState;
use crate::data::CodeVocabulary;
use crate::error::{Error, Result};
use crate::model::MuViTaNet;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// The selected model of one fold with everything needed to reuse it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainerConfig,
    pub vocabulary_hash: String,
    pub fold: usize,
    /// Best epoch per network.
    pub epochs: Vec<usize>,
    pub validation_auroc: Vec<f64>,
    pub model: MuViTaNet,
}

impl Checkpoint {
    pub fn from_state(state: &FoldState, config: &TrainerConfig, vocabulary: &CodeVocabulary) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            config: config.clone(),
            vocabulary_hash: vocabulary.fingerprint(),
            fold: state.fold,
            epochs: state.best.iter().map(|b| b.epoch).collect(),
            validation_auroc: state.best.iter().map(|b| b.validation_auroc).collect(),
            model: state.best_model(),
        }
    }

    pub fn check_compatible(&self, vocabulary: &CodeVocabulary) -> Result<()> {
        check(self.format_version, &self.vocabulary_hash, vocabulary)
    }
}

/// Full training state of a fold in progress, for resuming.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainingState {
    pub format_version: u32,
    pub config: TrainerConfig,
    pub vocabulary_hash: String,
    pub state: FoldState,
}

impl TrainingState {
    pub fn new(state: FoldState, config: &TrainerConfig, vocabulary: &CodeVocabulary) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            config: config.clone(),
            vocabulary_hash: vocabulary.fingerprint(),
            state,
        }
    }

    /// Fails unless the state was produced by the same configuration on the
    /// same vocabulary; the epoch count may grow.
    pub fn check_resumable(&self, config: &TrainerConfig, vocabulary: &CodeVocabulary) -> Result<()> {
        check(self.format_version, &self.vocabulary_hash, vocabulary)?;
        let same = TrainerConfig {
            epochs: config.epochs,
            ..self.config.clone()
        };
        if &same != config {
            return Err(Error::Compatibility("saved training state was produced with a different configuration".into()));
        }
        if self.state.epoch > config.epochs {
            return Err(Error::Compatibility(format!(
                "saved state is at epoch {}, beyond the configured {}",
                self.state.epoch, config.epochs
            )));
        }
        Ok(())
    }
}

fn check(format: u32, hash: &str, vocabulary: &CodeVocabulary) -> Result<()> {
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Compatibility(format!("checkpoint format {format}, expected {CHECKPOINT_FORMAT}")));
    }
    let actual = vocabulary.fingerprint();
    if hash != actual {
        return Err(Error::Compatibility(format!(
            "vocabulary hash {hash} does not match the bundle's {actual}"
        )));
    }
    Ok(())
}

/// Writes `value` as JSON through a temporary file so readers never see a
/// partial document.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string(value)?;
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
