use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

fn d32() -> usize {
    32
}
fn e50() -> usize {
    50
}
fn b16() -> usize {
    16
}
fn b256() -> usize {
    256
}
fn lr() -> f64 {
    1e-4
}
fn five() -> usize {
    5
}
fn tenth() -> f64 {
    0.1
}
fn three() -> usize {
    3
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TrainerConfig {
    #[serde(default = "d32")]
    pub hidden_dim: usize,
    #[serde(default = "e50")]
    pub epochs: usize,
    #[serde(default = "b16")]
    pub labeled_batch: usize,
    #[serde(default = "b256")]
    pub unlabeled_batch: usize,
    #[serde(default = "lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "five")]
    pub folds: usize,
    #[serde(default = "tenth")]
    pub validation_fraction: f64,
    /// Run a single fold of the split instead of all of them.
    #[serde(default)]
    pub only_fold: Option<usize>,
    #[serde(default = "three")]
    pub kernel_width: usize,
    #[serde(default)]
    pub proj_dim: Option<usize>,
    #[serde(default = "one")]
    pub temperature: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all trainer fields have defaults")
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learningRate must be positive, got {}", self.learning_rate)));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if let Some(f) = self.only_fold {
            if f >= self.folds {
                return Err(Error::Config(format!("onlyFold {f} is not below folds {}", self.folds)));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validationFraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.proj_dim == Some(0) {
            return Err(Error::Config("projDim must be positive".into()));
        }
        self.encoder_config(1).validate()
    }

    pub fn encoder_config(&self, vocabulary_size: usize) -> EncoderConfig {
        let mut e = EncoderConfig::new(self.hidden_dim, vocabulary_size);
        e.kernel_width = self.kernel_width;
        e
    }

    pub fn model_config(&self, vocabulary_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder_config(vocabulary_size),
            proj_dim: self.proj_dim,
            temperature: self.temperature,
        }
    }

    pub fn fold_indices(&self) -> Vec<usize> {
        match self.only_fold {
            Some(f) => vec![f],
            None => (0..self.folds).collect(),
        }
    }
}
