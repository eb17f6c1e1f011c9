//! Multi-party dialogue corpora: parsing, vocabularies, speaker-attributed
//! encoding, and construction of positive/negative training examples.

mod encode;
mod negatives;
mod parse;
mod types;
mod vocab;

pub use encode::{encode_context, make_examples, EncodedContext, Example, Segment};
pub use negatives::{ExamplePool, PoolOptions, Provenance, SpeakerSwap, TrainingTriple};
pub use parse::{parse_corpus, validate_corpus, write_corpus, ParseOptions, ValidationReport, Violation};
pub use types::{tokenize, Dialogue, SlotMap, SpeakerId, Utterance};
pub use vocab::{speaker_token_text, TokenId, Vocabulary, BOS, EOS, PAD, UNK};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: dialogue {dialogue_id}: {message}")]
    Validation {
        line: usize,
        dialogue_id: String,
        message: String,
    },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid speaker label {label:?}: {reason}")]
    InvalidSpeaker { label: String, reason: &'static str },
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("speaker {0} has no slot")]
    MissingSlot(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("invalid vocabulary file: {0}")]
    VocabFormat(String),
    #[error("sampling error: {0}")]
    Sampling(String),
}
