use super::{TrainConfig, TrainError};
use crate::model::Parameters;

/// Adam moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Parameters,
    pub second_moment: Parameters,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    pub fn bit_eq(&self, other: &OptimizerState) -> bool {
        self.step == other.step
            && self.first_moment.bit_eq(&other.first_moment)
            && self.second_moment.bit_eq(&other.second_moment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

/// Bias-corrected Adam update of one tensor; `step` is the 1-based step number.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    hp: &AdamHyper,
) {
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

/// Result of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Clips `grads` to the configured global norm, then applies one Adam step.
pub fn adam_step(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<StepInfo, TrainError> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(TrainError::Shape("parameters, gradients and optimizer state differ in shape".into()));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient(name));
    }
    let grad_norm = grads.l2_norm();
    let clip_scale = match config.grad_clip_norm {
        Some(max) if grad_norm > max => Some(max / grad_norm),
        _ => None,
    };
    state.step += 1;
    let hp = AdamHyper::from(config);
    let src = grads.tensors();
    let mut scaled = Vec::new();
    let ms = state.first_moment.tensors_mut();
    let vs = state.second_moment.tensors_mut();
    for ((((_, p), g), (_, m)), (_, v)) in params.tensors_mut().into_iter().zip(&src).zip(ms).zip(vs) {
        let g = match clip_scale {
            Some(s) => {
                scaled.clear();
                scaled.extend(g.data.iter().map(|x| x * s));
                &scaled[..]
            }
            None => g.data,
        };
        adam_update(p, g, m, v, state.step, &hp);
    }
    Ok(StepInfo {
        grad_norm,
        clipped: clip_scale.is_some(),
    })
}
