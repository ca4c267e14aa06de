//! Multi-view multi-task risk profiling for complication onset.
//!
//! A patient's claims history is encoded twice: per clinical code as a
//! temporal signal (feature view) and per visit as an attended code set run
//! through a bidirectional GRU (visit view). Each task attends over both
//! shared representations; labeled tasks decode a probability and an
//! unlabeled task aligns the two views contrastively.

pub mod data;
pub mod encoders;
pub mod error;
pub mod heads;
pub mod interpret;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use data::{CodeVocabulary, LabeledDataset, PatientRecord, SyntheticSpec, TaskBundle, Visit};
pub use encoders::EncoderConfig;
pub use error::{Error, Result};
pub use model::{ModelConfig, MuViTaNet, Variant};
pub use numerics::{Graph, ParamStore, Tensor};
pub use trainer::{EvalResult, TrainerConfig};
