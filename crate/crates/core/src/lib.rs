//! Speaker-aware multi-party dialogue generation: corpus handling, a small
//! decoder-only language model with exact gradients, the combined language
//! modeling + contrastive objective, training, decoding and evaluation.

pub mod corpus;
pub mod seed;
pub mod model;
pub mod objectives;
pub mod train;
pub mod metrics;
pub mod synth;
