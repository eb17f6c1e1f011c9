use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{log_softmax, softmax};
use super::{ForwardTrace, ModelError, Parameters};
use crate::corpus::{TokenId, EOS};
use crate::seed;

/// A teacher-forced evaluation of `response` after `prefix`.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub logits: Array2<f64>,
    pub trace: ForwardTrace,
    /// Row of `logits` that predicts `response[0]`.
    pub offset: usize,
    pub response: Vec<TokenId>,
    /// `log P(y_t | y_<t, X)` per response token.
    pub token_log_probs: Vec<f64>,
}

impl TeacherForced {
    pub fn sum_log_prob(&self) -> f64 {
        self.token_log_probs.iter().sum()
    }

    /// Upstream gradient on the logits for the scalar `weight · Σ_t log P(y_t | ·)`.
    pub fn log_prob_upstream(&self, weight: f64) -> Array2<f64> {
        let mut d = Array2::zeros(self.logits.raw_dim());
        self.add_log_prob_upstream(&mut d, weight);
        d
    }

    pub fn add_log_prob_upstream(&self, upstream: &mut Array2<f64>, weight: f64) {
        for (t, &y) in self.response.iter().enumerate() {
            let r = self.offset + t;
            let probs = softmax(self.logits.row(r).as_slice().expect("logits are contiguous"));
            let mut row = upstream.row_mut(r);
            for (v, (dst, p)) in row.iter_mut().zip(probs).enumerate() {
                let indicator = if v == y as usize { 1.0 } else { 0.0 };
                *dst += weight * (indicator - p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

impl Parameters {
    pub fn teacher_forced(
        &self,
        prefix: &[TokenId],
        response: &[TokenId],
    ) -> Result<TeacherForced, ModelError> {
        if response.is_empty() {
            return Err(ModelError::EmptyResponse);
        }
        if prefix.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut input = Vec::with_capacity(prefix.len() + response.len() - 1);
        input.extend_from_slice(prefix);
        input.extend_from_slice(&response[..response.len() - 1]);
        let (logits, trace) = self.forward(&input)?;
        let offset = prefix.len() - 1;
        let token_log_probs = response
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let lp = log_softmax(logits.row(offset + t).as_slice().expect("contiguous"));
                lp[y as usize]
            })
            .collect();
        Ok(TeacherForced {
            logits,
            trace,
            offset,
            response: response.to_vec(),
            token_log_probs,
        })
    }

    /// `log P(Y | X) = Σ_t log P(y_t | y_<t, X)`, never materializing the product.
    pub fn sequence_log_prob(&self, prefix: &[TokenId], response: &[TokenId]) -> Result<f64, ModelError> {
        Ok(self.teacher_forced(prefix, response)?.sum_log_prob())
    }

    /// Generates until EOS or `max_len` tokens; the EOS, when produced, is included.
    ///
    /// Generation also stops once the model's context window is full.
    pub fn decode(
        &self,
        prefix: &[TokenId],
        mode: DecodeMode,
        max_len: usize,
        seed: u64,
    ) -> Result<Vec<TokenId>, ModelError> {
        if max_len == 0 {
            return Err(ModelError::Config("max_len must be at least 1".into()));
        }
        if let DecodeMode::Sample { temperature } = mode {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(ModelError::Config(format!("temperature must be positive, got {temperature}")));
            }
        }
        let mut rng = seed::rng(seed);
        let mut seq = prefix.to_vec();
        let mut out = Vec::new();
        while out.len() < max_len && seq.len() <= self.config.max_seq_len {
            let (logits, _) = self.forward(&seq)?;
            let last = logits.row(logits.nrows() - 1);
            let last = last.as_slice().expect("contiguous");
            let next = match mode {
                DecodeMode::Greedy => argmax_lowest(last),
                DecodeMode::Sample { temperature } => {
                    let scaled: Vec<f64> = last.iter().map(|v| v / temperature).collect();
                    sample(&softmax(&scaled), rng.random::<f64>())
                }
            };
            out.push(next);
            if next == EOS {
                break;
            }
            seq.push(next);
        }
        Ok(out)
    }
}

/// Index of the maximum; ties go to the lowest index.
fn argmax_lowest(row: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

fn sample(probs: &[f64], u: f64) -> TokenId {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as TokenId;
        }
    }
    // Rounding left `acc` just below 1: take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as TokenId
}
