//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use mpdg::model::{ModelConfig, Parameters};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Below this magnitude both gradients count as zero.
pub const FD_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub failures: Vec<(String, usize, f64, f64)>,
    pub per_tensor: Vec<(String, usize)>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_ABS_FLOOR)
}

/// Central differences of `loss` against `analytic` on up to `per_tensor`
/// random coordinates of every tensor (all coordinates when fewer).
pub fn gradcheck<F>(params: &Parameters, analytic: &Parameters, per_tensor: usize, seed: u64, loss: F) -> GradCheck
where
    F: Fn(&Parameters) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck::default();
    let names: Vec<(String, usize)> = params.tensors().iter().map(|t| (t.name.clone(), t.data.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut probe = params.clone();
    for (ti, (name, len)) in names.iter().enumerate() {
        let coords: Vec<usize> = if *len <= per_tensor {
            (0..*len).collect()
        } else {
            sample(&mut rng, *len, per_tensor).into_vec()
        };
        for &c in &coords {
            let orig = params.tensors()[ti].data[c];
            set(&mut probe, ti, c, orig + FD_STEP);
            let up = loss(&probe);
            set(&mut probe, ti, c, orig - FD_STEP);
            let down = loss(&probe);
            set(&mut probe, ti, c, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grads[ti][c];
            let r = rel_err(a, numeric);
            if r > report.worst_rel {
                report.worst_rel = r;
                report.worst = Some((name.clone(), c, a, numeric));
            }
            if r > FD_REL_TOL {
                report.failures.push((name.clone(), c, a, numeric));
            }
            report.checked += 1;
        }
        report.per_tensor.push((name.clone(), coords.len()));
    }
    report
}

fn set(p: &mut Parameters, tensor: usize, coord: usize, value: f64) {
    let mut ts = p.tensors_mut();
    ts[tensor].1[coord] = value;
}

pub fn fd_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
        max_seq_len: 24,
        seed: 11,
    }
}

/// Longest common subsequence by exhaustive subsequence enumeration.
pub fn brute_force_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&T> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = sub.len();
        }
    }
    best
}

/// Every sequence over `alphabet` with length in `1..=max_len`.
pub fn all_sequences(alphabet: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<&'static str>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for &a in alphabet {
                let mut t = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}
