use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2048,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            max_seq_len: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_attn_out: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
}

/// All trainable tensors. Also used as the gradient container.
///
/// Activations are row vectors, so projections are `x · W` and the output
/// layer is `h · W_o + b_o` with `W_o` of shape `d_model × vocab_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub positional_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Array1<f64>,
    pub final_ln_bias: Array1<f64>,
    pub output_weight: Array2<f64>,
    pub output_bias: Array1<f64>,
}

/// Borrowed view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

macro_rules! for_each_tensor {
    ($p:expr, $iter:ident, $as_slice:ident, $f:expr) => {{
        let f = &mut $f;
        f("token_embedding".to_string(), $p.token_embedding.shape().to_vec(), $p.token_embedding.$as_slice().unwrap());
        f("positional_embedding".to_string(), $p.positional_embedding.shape().to_vec(), $p.positional_embedding.$as_slice().unwrap());
        for (i, l) in $p.layers.$iter().enumerate() {
            f(format!("layers.{i}.ln1_gain"), l.ln1_gain.shape().to_vec(), l.ln1_gain.$as_slice().unwrap());
            f(format!("layers.{i}.ln1_bias"), l.ln1_bias.shape().to_vec(), l.ln1_bias.$as_slice().unwrap());
            f(format!("layers.{i}.w_query"), l.w_query.shape().to_vec(), l.w_query.$as_slice().unwrap());
            f(format!("layers.{i}.w_key"), l.w_key.shape().to_vec(), l.w_key.$as_slice().unwrap());
            f(format!("layers.{i}.w_value"), l.w_value.shape().to_vec(), l.w_value.$as_slice().unwrap());
            f(format!("layers.{i}.w_attn_out"), l.w_attn_out.shape().to_vec(), l.w_attn_out.$as_slice().unwrap());
            f(format!("layers.{i}.ln2_gain"), l.ln2_gain.shape().to_vec(), l.ln2_gain.$as_slice().unwrap());
            f(format!("layers.{i}.ln2_bias"), l.ln2_bias.shape().to_vec(), l.ln2_bias.$as_slice().unwrap());
            f(format!("layers.{i}.ff_in"), l.ff_in.shape().to_vec(), l.ff_in.$as_slice().unwrap());
            f(format!("layers.{i}.ff_in_bias"), l.ff_in_bias.shape().to_vec(), l.ff_in_bias.$as_slice().unwrap());
            f(format!("layers.{i}.ff_out"), l.ff_out.shape().to_vec(), l.ff_out.$as_slice().unwrap());
            f(format!("layers.{i}.ff_out_bias"), l.ff_out_bias.shape().to_vec(), l.ff_out_bias.$as_slice().unwrap());
        }
        f("final_ln_gain".to_string(), $p.final_ln_gain.shape().to_vec(), $p.final_ln_gain.$as_slice().unwrap());
        f("final_ln_bias".to_string(), $p.final_ln_bias.shape().to_vec(), $p.final_ln_bias.$as_slice().unwrap());
        f("output_weight".to_string(), $p.output_weight.shape().to_vec(), $p.output_weight.$as_slice().unwrap());
        f("output_bias".to_string(), $p.output_bias.shape().to_vec(), $p.output_bias.$as_slice().unwrap());
    }};
}

impl Parameters {
    /// Random initialization: weights ~ N(0, 1/d_model), layer-norm gains 1, biases 0.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::rng(config.seed);
        let std = 1.0 / (config.d_model as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut matrix = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        };
        let d = config.d_model;
        let token_embedding = matrix(config.vocab_size, d);
        let positional_embedding = matrix(config.max_seq_len, d);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_query: matrix(d, d),
                w_key: matrix(d, d),
                w_value: matrix(d, d),
                w_attn_out: matrix(d, d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                ff_in: matrix(d, config.d_ff),
                ff_in_bias: Array1::zeros(config.d_ff),
                ff_out: matrix(config.d_ff, d),
                ff_out_bias: Array1::zeros(d),
            });
        }
        let output_weight = matrix(d, config.vocab_size);
        Ok(Self {
            config: *config,
            token_embedding,
            positional_embedding,
            layers,
            final_ln_gain: Array1::ones(d),
            final_ln_bias: Array1::zeros(d),
            output_weight,
            output_bias: Array1::zeros(config.vocab_size),
        })
    }

    /// All-zero tensors shaped like `config`; the gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = LayerParams {
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            w_query: Array2::zeros((d, d)),
            w_key: Array2::zeros((d, d)),
            w_value: Array2::zeros((d, d)),
            w_attn_out: Array2::zeros((d, d)),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            ff_in: Array2::zeros((d, config.d_ff)),
            ff_in_bias: Array1::zeros(config.d_ff),
            ff_out: Array2::zeros((config.d_ff, d)),
            ff_out_bias: Array1::zeros(d),
        };
        Self {
            config: *config,
            token_embedding: Array2::zeros((config.vocab_size, d)),
            positional_embedding: Array2::zeros((config.max_seq_len, d)),
            layers: vec![layer; config.n_layers],
            final_ln_gain: Array1::zeros(d),
            final_ln_bias: Array1::zeros(d),
            output_weight: Array2::zeros((d, config.vocab_size)),
            output_bias: Array1::zeros(config.vocab_size),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for_each_tensor!(self, iter, as_slice, |name, shape, data| out.push(TensorRef { name, shape, data }));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for_each_tensor!(self, iter_mut, as_slice_mut, |name, _shape: Vec<usize>, data| out.push((name, data)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor in a fixed order.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(s.data) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
            .map(|t| t.name)
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.name == y.name && x.shape == y.shape)
    }

    /// Bitwise equality of every entry.
    pub fn bit_eq(&self, other: &Parameters) -> bool {
        self.config == other.config
            && self.same_shape(other)
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.data.iter().zip(b.data).all(|(x, y)| x.to_bits() == y.to_bits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            max_seq_len: 10,
            seed: 3,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = Parameters::init(&small()).unwrap();
        let b = Parameters::init(&small()).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn different_seed_differs() {
        let a = Parameters::init(&small()).unwrap();
        let b = Parameters::init(&ModelConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.token_embedding, b.token_embedding);
    }

    #[test]
    fn layer_norm_gains_start_at_one() {
        let p = Parameters::init(&small()).unwrap();
        for l in &p.layers {
            assert!(l.ln1_gain.iter().all(|&g| g == 1.0));
            assert!(l.ln2_gain.iter().all(|&g| g == 1.0));
            assert!(l.ff_in_bias.iter().all(|&b| b == 0.0));
        }
        assert!(p.final_ln_gain.iter().all(|&g| g == 1.0));
        assert!(p.output_bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn heads_must_divide_width() {
        let bad = ModelConfig { n_heads: 3, ..small() };
        assert!(matches!(Parameters::init(&bad), Err(ModelError::Config(_))));
    }

    #[test]
    fn tensor_listing_matches_shapes() {
        let p = Parameters::init(&small()).unwrap();
        let ts = p.tensors();
        assert_eq!(ts.len(), 2 + 12 * 2 + 4);
        assert_eq!(ts[0].shape, vec![11, 8]);
        assert_eq!(ts.last().unwrap().name, "output_bias");
        for t in &ts {
            assert_eq!(t.shape.iter().product::<usize>(), t.data.len());
        }
        let mut z = p.zeros_like();
        assert!(z.same_shape(&p));
        z.add_scaled(&p, 2.0);
        z.scale(0.5);
        assert!(z.bit_eq(&p));
    }

    #[test]
    fn init_scale_is_roughly_inverse_sqrt_width() {
        let cfg = ModelConfig { vocab_size: 400, d_model: 16, ..small() };
        let p = Parameters::init(&cfg).unwrap();
        let n = p.token_embedding.len() as f64;
        let mean = p.token_embedding.sum() / n;
        let var = p.token_embedding.mapv(|x| (x - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 0.02);
        assert!((var.sqrt() - 0.25).abs() < 0.02);
    }
}
