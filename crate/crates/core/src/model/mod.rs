//! A small decoder-only language model trained from random initialization.

mod params;
mod scoring;
mod transformer;

pub use params::{LayerParams, ModelConfig, Parameters, TensorRef};
pub use scoring::{DecodeMode, TeacherForced};
pub use transformer::{log_softmax, softmax, ForwardTrace};

use thiserror::Error;

use crate::corpus::TokenId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("response is empty")]
    EmptyResponse,
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}
