//! Optimization: configuration, Adam, checkpoints and the training loop.

mod checkpoint;
mod config;
mod optim;
mod run;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::model::ModelError;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, Checkpoint, FORMAT_VERSION};
pub use config::TrainConfig;
pub use optim::{adam_step, adam_update, AdamHyper, OptimizerState, StepInfo};
pub use run::{
    build_pool, evaluate_lm, ranking_accuracy, resolve_config, resume, sample_triples, train, train_with,
    write_history_csv, EpochStats, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize, diagnostic: Box<Checkpoint> },
    #[error("corrupt checkpoint: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
