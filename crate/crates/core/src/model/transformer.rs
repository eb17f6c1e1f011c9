//! Pre-norm causal transformer: forward pass with activation caches and the
//! matching hand-written reverse pass.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::{ModelError, Parameters};
use crate::corpus::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    ln1: NormCache,
    normed1: Array2<f64>,
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attended: Array2<f64>,
    ln2: NormCache,
    normed2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    ids: Vec<TokenId>,
    layers: Vec<LayerCache>,
    final_ln: NormCache,
    /// Final hidden states `h_t`, one row per position.
    pub hidden: Array2<f64>,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let scale = *r;
        row.mapv_inplace(|v| v * scale);
    }
    let y = &xhat * gain + bias;
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let sum_g = g.sum();
        let sum_gx = g.dot(&xh);
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = r / n * (n * gi - sum_g - xi * sum_gx));
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// `c += a · b`
fn mm_acc(c: &mut Array2<f64>, a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    general_mat_mul(1.0, a, b, 1.0, c);
}

impl Parameters {
    fn check_input(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits for every position (`seq_len × vocab_size`) plus the trace for `backward`.
    pub fn forward(&self, ids: &[TokenId]) -> Result<(Array2<f64>, ForwardTrace), ModelError> {
        self.check_input(ids)?;
        let cfg = &self.config;
        let t_len = ids.len();
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Array2::zeros((t_len, cfg.d_model));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&self.token_embedding.row(id as usize));
            row += &self.positional_embedding.row(t);
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (normed1, ln1) = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            let query = normed1.dot(&layer.w_query);
            let key = normed1.dot(&layer.w_key);
            let value = normed1.dot(&layer.w_value);
            let mut attended = Array2::zeros((t_len, cfg.d_model));
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut p = query.slice(cols).dot(&key.slice(cols).t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let visible = row.slice(s![..=i]);
                    let max = visible.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let mut total = 0.0;
                    for (j, v) in row.iter_mut().enumerate() {
                        if j <= i {
                            *v = ((*v - max) * scale).exp();
                            total += *v;
                        } else {
                            *v = 0.0;
                        }
                    }
                    row.mapv_inplace(|v| v / total);
                }
                attended.slice_mut(cols).assign(&p.dot(&value.slice(cols)));
                probs.push(p);
            }
            x += &attended.dot(&layer.w_attn_out);

            let (normed2, ln2) = layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            let ff_pre = normed2.dot(&layer.ff_in) + &layer.ff_in_bias;
            let ff_act = ff_pre.mapv(gelu);
            x += &(ff_act.dot(&layer.ff_out) + &layer.ff_out_bias);

            caches.push(LayerCache {
                ln1,
                normed1,
                query,
                key,
                value,
                probs,
                attended,
                ln2,
                normed2,
                ff_pre,
                ff_act,
            });
        }

        let (hidden, final_ln) = layer_norm(&x, &self.final_ln_gain, &self.final_ln_bias);
        let logits = hidden.dot(&self.output_weight) + &self.output_bias;
        Ok((
            logits,
            ForwardTrace {
                ids: ids.to_vec(),
                layers: caches,
                final_ln,
                hidden,
            },
        ))
    }

    /// Gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Array2<f64>) -> Result<Parameters, ModelError> {
        let mut grads = self.zeros_like();
        self.backward_into(trace, dlogits, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Parameters::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        dlogits: &Array2<f64>,
        grads: &mut Parameters,
    ) -> Result<(), ModelError> {
        let cfg = &self.config;
        let t_len = trace.seq_len();
        if trace.layers.len() != self.layers.len()
            || trace.hidden.ncols() != cfg.d_model
            || dlogits.dim() != (t_len, cfg.vocab_size)
            || grads.config != *cfg
        {
            return Err(ModelError::Shape(format!(
                "trace of {} layers × {} width, upstream {:?}, for a model of {} layers × {} width × {} vocab",
                trace.layers.len(),
                trace.hidden.ncols(),
                dlogits.dim(),
                self.layers.len(),
                cfg.d_model,
                cfg.vocab_size
            )));
        }
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        mm_acc(&mut grads.output_weight, &trace.hidden.t(), &dlogits.view());
        grads.output_bias += &dlogits.sum_axis(Axis(0));
        let dhidden = dlogits.dot(&self.output_weight.t());
        let mut dx = layer_norm_backward(
            &dhidden,
            &trace.final_ln,
            &self.final_ln_gain,
            &mut grads.final_ln_gain,
            &mut grads.final_ln_bias,
        );

        for ((layer, cache), g) in self
            .layers
            .iter()
            .zip(&trace.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            // Feed-forward branch.
            mm_acc(&mut g.ff_out, &cache.ff_act.t(), &dx.view());
            g.ff_out_bias += &dx.sum_axis(Axis(0));
            let mut dpre = dx.dot(&layer.ff_out.t());
            Zip::from(&mut dpre)
                .and(&cache.ff_pre)
                .for_each(|d, &u| *d *= gelu_grad(u));
            mm_acc(&mut g.ff_in, &cache.normed2.t(), &dpre.view());
            g.ff_in_bias += &dpre.sum_axis(Axis(0));
            let dnormed2 = dpre.dot(&layer.ff_in.t());
            dx += &layer_norm_backward(&dnormed2, &cache.ln2, &layer.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

            // Attention branch.
            mm_acc(&mut g.w_attn_out, &cache.attended.t(), &dx.view());
            let dattended = dx.dot(&layer.w_attn_out.t());
            let mut dquery = Array2::zeros((t_len, cfg.d_model));
            let mut dkey = Array2::zeros((t_len, cfg.d_model));
            let mut dvalue = Array2::zeros((t_len, cfg.d_model));
            for (h, p) in cache.probs.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let datt_h = dattended.slice(cols);
                let dp = datt_h.dot(&cache.value.slice(cols).t());
                dvalue.slice_mut(cols).assign(&p.t().dot(&datt_h));
                let mut dscores = &dp * p;
                for (mut row, prow) in dscores.rows_mut().into_iter().zip(p.rows()) {
                    let dot = row.sum();
                    Zip::from(&mut row).and(&prow).for_each(|d, &pij| *d -= pij * dot);
                }
                dscores *= scale;
                dquery.slice_mut(cols).assign(&dscores.dot(&cache.key.slice(cols)));
                dkey.slice_mut(cols).assign(&dscores.t().dot(&cache.query.slice(cols)));
            }
            let n1t = cache.normed1.t();
            mm_acc(&mut g.w_query, &n1t, &dquery.view());
            mm_acc(&mut g.w_key, &n1t, &dkey.view());
            mm_acc(&mut g.w_value, &n1t, &dvalue.view());
            let mut dnormed1 = dquery.dot(&layer.w_query.t());
            mm_acc(&mut dnormed1, &dkey.view(), &layer.w_key.t());
            mm_acc(&mut dnormed1, &dvalue.view(), &layer.w_value.t());
            dx += &layer_norm_backward(&dnormed1, &cache.ln1, &layer.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        }

        for (t, &id) in trace.ids.iter().enumerate() {
            let row = dx.row(t);
            let mut tok = grads.token_embedding.row_mut(id as usize);
            tok += &row;
            let mut pos = grads.positional_embedding.row_mut(t);
            pos += &row;
        }
        Ok(())
    }
}

/// Numerically stable `log softmax` of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}
