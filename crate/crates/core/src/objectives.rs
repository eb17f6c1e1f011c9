//! Training objectives: per-token language-modeling loss, the log-domain
//! compatibility score, the two-term margin ranking loss over contextual and
//! speaker negatives, and their weighted sum.
//!
//! Scores are compared as log-probabilities. Raw sequence probabilities
//! underflow for any realistic response length, which would make a fixed
//! margin meaningless, so the margin is measured in nats.

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, TokenId, TrainingTriple, Vocabulary};
use crate::model::{ModelError, Parameters, TeacherForced};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub margin: f64,
    pub lambda_weight: f64,
    /// Divide each score by its response length before comparing.
    pub length_normalize_score: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda_weight: 0.5,
            length_normalize_score: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(format!("margin must be a finite non-negative number, got {}", self.margin));
        }
        if !(self.lambda_weight >= 0.0 && self.lambda_weight.is_finite()) {
            return Err(format!(
                "lambda_weight must be a finite non-negative number, got {}",
                self.lambda_weight
            ));
        }
        Ok(())
    }

    fn normalizer(&self, len: usize) -> f64 {
        if self.length_normalize_score {
            len as f64
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub contrastive: f64,
    pub total: f64,
    pub hinge_context: f64,
    pub hinge_speaker: f64,
    /// Positive, contextual-negative and speaker-negative scores, when computed.
    pub scores: Option<[f64; 3]>,
}

/// Model-ready token sequences of a training triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleInputs {
    pub prefix: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub neg_response: Vec<TokenId>,
    pub neg_prefix: Vec<TokenId>,
}

impl TripleInputs {
    pub fn from_triple(triple: &TrainingTriple, vocab: &Vocabulary) -> Result<Self, CorpusError> {
        Ok(Self {
            prefix: triple.context.model_prefix(vocab)?,
            response: triple.response.clone(),
            neg_response: triple.neg_response.clone(),
            neg_prefix: triple.neg_context.model_prefix(vocab)?,
        })
    }
}

/// `max(0, margin + negative − positive)`.
pub fn hinge(margin: f64, positive: f64, negative: f64) -> f64 {
    (margin + negative - positive).max(0.0)
}

/// At the kink the hinge counts as active.
fn hinge_active(margin: f64, positive: f64, negative: f64) -> bool {
    margin + negative - positive >= 0.0
}

/// Mean per-token negative log-likelihood of `response`.
pub fn lm_loss(params: &Parameters, prefix: &[TokenId], response: &[TokenId]) -> Result<f64, ModelError> {
    let tf = params.teacher_forced(prefix, response)?;
    Ok(-tf.sum_log_prob() / response.len() as f64)
}

fn score_of(tf: &TeacherForced, config: &ObjectiveConfig) -> f64 {
    tf.sum_log_prob() / config.normalizer(tf.response.len())
}

/// `log P(response | prefix)`, per token when length normalization is on.
pub fn score(
    params: &Parameters,
    prefix: &[TokenId],
    response: &[TokenId],
    config: &ObjectiveConfig,
) -> Result<f64, ModelError> {
    Ok(score_of(&params.teacher_forced(prefix, response)?, config))
}

/// Scores of the positive, the contextual negative and the speaker negative.
pub fn triple_scores(
    params: &Parameters,
    inputs: &TripleInputs,
    config: &ObjectiveConfig,
) -> Result<[f64; 3], ModelError> {
    Ok([
        score(params, &inputs.prefix, &inputs.response, config)?,
        score(params, &inputs.prefix, &inputs.neg_response, config)?,
        score(params, &inputs.neg_prefix, &inputs.response, config)?,
    ])
}

/// Margin loss over both negatives; returns the sum and the two hinge terms.
pub fn contrastive_loss(
    params: &Parameters,
    inputs: &TripleInputs,
    config: &ObjectiveConfig,
) -> Result<(f64, [f64; 2]), ModelError> {
    let [pos, neg_ctx, neg_spk] = triple_scores(params, inputs, config)?;
    Ok(contrastive_from_scores(pos, neg_ctx, neg_spk, config.margin))
}

pub fn contrastive_from_scores(pos: f64, neg_ctx: f64, neg_spk: f64, margin: f64) -> (f64, [f64; 2]) {
    let hc = hinge(margin, pos, neg_ctx);
    let hs = hinge(margin, pos, neg_spk);
    (hc + hs, [hc, hs])
}

pub fn total_loss(
    params: &Parameters,
    inputs: &TripleInputs,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ModelError> {
    let lm = lm_loss(params, &inputs.prefix, &inputs.response)?;
    let scores = triple_scores(params, inputs, config)?;
    let [pos, neg_ctx, neg_spk] = scores;
    let (contrastive, [hinge_context, hinge_speaker]) = contrastive_from_scores(pos, neg_ctx, neg_spk, config.margin);
    Ok(LossBreakdown {
        lm,
        contrastive,
        total: lm + config.lambda_weight * contrastive,
        hinge_context,
        hinge_speaker,
        scores: Some(scores),
    })
}

/// Language-modeling loss alone, accumulating `weight · ∇lm` into `grads`.
pub fn lm_loss_with_grad(
    params: &Parameters,
    prefix: &[TokenId],
    response: &[TokenId],
    weight: f64,
    grads: &mut Parameters,
) -> Result<LossBreakdown, ModelError> {
    let tf = params.teacher_forced(prefix, response)?;
    let m = response.len() as f64;
    let lm = -tf.sum_log_prob() / m;
    params.backward_into(&tf.trace, &tf.log_prob_upstream(-weight / m), grads)?;
    Ok(LossBreakdown {
        lm,
        contrastive: 0.0,
        total: lm,
        hinge_context: 0.0,
        hinge_speaker: 0.0,
        scores: None,
    })
}

/// Combined loss `lm + λ · contrastive`, accumulating `weight · ∇total` into `grads`.
///
/// The positive pair is evaluated once and shared by both terms. A negative is
/// back-propagated only when its hinge is active and λ > 0, so λ = 0 produces
/// exactly the gradient of [`lm_loss_with_grad`].
pub fn total_loss_with_grad(
    params: &Parameters,
    inputs: &TripleInputs,
    config: &ObjectiveConfig,
    weight: f64,
    grads: &mut Parameters,
) -> Result<LossBreakdown, ModelError> {
    let pos = params.teacher_forced(&inputs.prefix, &inputs.response)?;
    let neg_ctx = params.teacher_forced(&inputs.prefix, &inputs.neg_response)?;
    let neg_spk = params.teacher_forced(&inputs.neg_prefix, &inputs.response)?;

    let m = inputs.response.len() as f64;
    let lm = -pos.sum_log_prob() / m;
    let s_pos = score_of(&pos, config);
    let s_ctx = score_of(&neg_ctx, config);
    let s_spk = score_of(&neg_spk, config);
    let (contrastive, [hinge_context, hinge_speaker]) =
        contrastive_from_scores(s_pos, s_ctx, s_spk, config.margin);

    let lambda = config.lambda_weight;
    let ctx_on = lambda > 0.0 && hinge_active(config.margin, s_pos, s_ctx);
    let spk_on = lambda > 0.0 && hinge_active(config.margin, s_pos, s_spk);
    let n_active = f64::from(u8::from(ctx_on) + u8::from(spk_on));

    let mut pos_weight = -1.0 / m;
    if n_active > 0.0 {
        pos_weight -= lambda * n_active / config.normalizer(inputs.response.len());
    }
    params.backward_into(&pos.trace, &pos.log_prob_upstream(weight * pos_weight), grads)?;
    if ctx_on {
        let w = lambda / config.normalizer(inputs.neg_response.len());
        params.backward_into(&neg_ctx.trace, &neg_ctx.log_prob_upstream(weight * w), grads)?;
    }
    if spk_on {
        let w = lambda / config.normalizer(inputs.response.len());
        params.backward_into(&neg_spk.trace, &neg_spk.log_prob_upstream(weight * w), grads)?;
    }

    Ok(LossBreakdown {
        lm,
        contrastive,
        total: lm + lambda * contrastive,
        hinge_context,
        hinge_speaker,
        scores: Some([s_pos, s_ctx, s_spk]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 8,
            max_seq_len: 16,
            seed: 2,
        }
    }

    fn inputs() -> TripleInputs {
        TripleInputs {
            prefix: vec![1, 4, 9, 10, 5],
            response: vec![11, 12, 2],
            neg_response: vec![13, 2],
            neg_prefix: vec![1, 6, 14, 10, 5],
        }
    }

    #[test]
    fn hinge_piecewise() {
        assert_eq!(hinge(1.0, -2.0, -2.0), 1.0);
        assert_eq!(hinge(0.0, -1.0, -3.0), 0.0);
        assert_eq!(hinge(0.0, -3.0, -1.0), 2.0);
        assert_eq!(hinge(0.5, -1.0, -1.5), 0.0);
    }

    #[test]
    fn equal_scores_give_twice_margin() {
        let (loss, hinges) = contrastive_from_scores(-3.25, -3.25, -3.25, 0.75);
        assert_eq!(loss, 1.5);
        assert_eq!(hinges, [0.75, 0.75]);
    }

    #[test]
    fn lm_loss_matches_negated_mean_log_prob() {
        let p = Parameters::init(&cfg()).unwrap();
        let i = inputs();
        let lp = p.sequence_log_prob(&i.prefix, &i.response).unwrap();
        let lm = lm_loss(&p, &i.prefix, &i.response).unwrap();
        assert!((lm + lp / 3.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_total_is_lm() {
        let p = Parameters::init(&cfg()).unwrap();
        let c = ObjectiveConfig { lambda_weight: 0.0, ..Default::default() };
        let b = total_loss(&p, &inputs(), &c).unwrap();
        assert_eq!(b.total, b.lm);
        assert!(b.contrastive > 0.0);
    }

    #[test]
    fn gradient_paths_agree_on_loss_values() {
        let p = Parameters::init(&cfg()).unwrap();
        let c = ObjectiveConfig::default();
        let mut g = p.zeros_like();
        let a = total_loss_with_grad(&p, &inputs(), &c, 1.0, &mut g).unwrap();
        let b = total_loss(&p, &inputs(), &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total, a.lm + c.lambda_weight * a.contrastive);
        assert_eq!(a.contrastive, a.hinge_context + a.hinge_speaker);
    }

    #[test]
    fn lambda_zero_gradient_equals_lm_gradient_bitwise() {
        let p = Parameters::init(&cfg()).unwrap();
        let c = ObjectiveConfig { lambda_weight: 0.0, ..Default::default() };
        let i = inputs();
        let mut g_total = p.zeros_like();
        total_loss_with_grad(&p, &i, &c, 0.25, &mut g_total).unwrap();
        let mut g_lm = p.zeros_like();
        lm_loss_with_grad(&p, &i.prefix, &i.response, 0.25, &mut g_lm).unwrap();
        assert!(g_total.bit_eq(&g_lm));
    }

    #[test]
    fn inactive_hinges_leave_only_lm_gradient() {
        let p = Parameters::init(&cfg()).unwrap();
        let i = inputs();
        // A hugely negative margin switches both hinges off.
        let c = ObjectiveConfig { margin: -1e6, lambda_weight: 1.0, length_normalize_score: true };
        let mut g_total = p.zeros_like();
        let b = total_loss_with_grad(&p, &i, &c, 1.0, &mut g_total).unwrap();
        assert_eq!(b.contrastive, 0.0);
        let mut g_lm = p.zeros_like();
        lm_loss_with_grad(&p, &i.prefix, &i.response, 1.0, &mut g_lm).unwrap();
        assert!(g_total.bit_eq(&g_lm));
    }

    #[test]
    fn validate_rejects_negative_values() {
        assert!(ObjectiveConfig { margin: -0.1, ..Default::default() }.validate().is_err());
        assert!(ObjectiveConfig { lambda_weight: -1.0, ..Default::default() }.validate().is_err());
        assert!(ObjectiveConfig::default().validate().is_ok());
    }
}
