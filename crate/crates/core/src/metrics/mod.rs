//! Automatic response metrics and stratified reports.

mod overlap;
mod report;

use thiserror::Error;

pub use overlap::{bleu, distinct_n, lcs_len, rouge_l, rouge_l_pair};
pub use report::{
    build_report, eval_pairs, format_table, read_predictions, score_pairs, speaker_role, stratify_context_length,
    stratify_speaker_roles, write_predictions, write_report_csv, ContextBucket, EvalPair, MetricReport, Prediction,
    Role, Strata, Stratum, REPORT_COLUMNS, SMOOTHING_NOTE,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric is undefined: {0}")]
    Undefined(&'static str),
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("BLEU order must be 1..=3, got {0}")]
    Order(usize),
    #[error("prediction refers to unknown or duplicate pair ({dialogue_id}, {target_index})")]
    Reference { dialogue_id: String, target_index: usize },
    #[error("line {line}: malformed prediction: {message}")]
    Json { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
