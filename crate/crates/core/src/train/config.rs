use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TrainError;
use crate::model::ModelConfig;
use crate::objectives::ObjectiveConfig;

/// Everything that determines a training run.
///
/// On disk this is a TOML key-value file; every key is optional and falls
/// back to the default shown in [`TrainConfig::default`]:
///
/// ```toml
/// learning_rate = 3e-4
/// beta1 = 0.9
/// beta2 = 0.999
/// epsilon = 1e-8
/// batch_size = 8
/// epochs = 20
/// grad_clip_norm = 1.0      # 0 disables clipping
/// seed = 0
/// contrastive_enabled = true
/// min_context = 1
/// min_count = 1
/// max_speaker_slots = 8
///
/// [objective]
/// margin = 1.0
/// lambda_weight = 0.5
/// length_normalize_score = true
///
/// [model]
/// d_model = 64
/// n_heads = 2
/// n_layers = 2
/// d_ff = 128
/// max_seq_len = 256
/// seed = 0
/// ```
///
/// `model.vocab_size` is overwritten by the size of the vocabulary built
/// from the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(serialize_with = "clip_out", deserialize_with = "clip_in")]
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// When false, negatives are never sampled and only the LM loss runs.
    pub contrastive_enabled: bool,
    pub min_context: usize,
    pub min_count: usize,
    pub max_speaker_slots: usize,
    pub objective: ObjectiveConfig,
    pub model: ModelConfig,
}

fn clip_out<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(v.unwrap_or(0.0))
}

fn clip_in<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    let v = f64::deserialize(d)?;
    Ok((v != 0.0).then_some(v))
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 20,
            grad_clip_norm: Some(1.0),
            seed: 0,
            contrastive_enabled: true,
            min_context: 1,
            min_count: 1,
            max_speaker_slots: 8,
            objective: ObjectiveConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if self.min_context == 0 || self.min_count == 0 || self.max_speaker_slots == 0 {
            return bad("min_context, min_count and max_speaker_slots must be positive".into());
        }
        self.objective.validate().map_err(TrainError::Config)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
