//! Shared oracles for integration tests: finite-difference harnesses and
//! brute-force reference implementations kept independent of the library's
//! forward/backward composition.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rcla_core::graph::{Graph, NodeId};
use rcla_core::model::{Model, ModelConfig};
use rcla_core::routing::RoutingPlan;
use rcla_core::tensor::Tensor;

/// A 2-layer model small enough for exhaustive finite differences.
pub fn fd_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        n_kv_heads: 2,
        head_dim: 4,
        vocab_size: 13,
        max_seq_len: 16,
        bytes_per_value: 4,
    }
}

pub fn uniform_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Flatten all parameters of a model into one vector (canonical order).
pub fn flatten_params(model: &Model<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for (_, t) in model.named_params() {
        out.extend_from_slice(t.data());
    }
    out
}

/// Write a flat vector back into the model's parameters.
pub fn unflatten_params(model: &mut Model<f64>, flat: &[f64]) {
    let mut at = 0;
    for (_, t) in model.named_params_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Masked-sum cross-entropy loss of a model on one sequence under a plan.
pub fn model_loss(model: &Model<f64>, tokens: &[u32], targets: &[u32], plan: &RoutingPlan) -> f64 {
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let logits = model.forward_graph(&mut g, &params, tokens, plan).unwrap();
    let (loss, _) = g.cross_entropy_sum(logits, targets, 0).unwrap();
    g.value(loss).item()
}

/// Analytic gradient of `model_loss` for every parameter, flattened.
pub fn model_grad(model: &Model<f64>, tokens: &[u32], targets: &[u32], plan: &RoutingPlan) -> Vec<f64> {
    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let logits = model.forward_graph(&mut g, &params, tokens, plan).unwrap();
    let (loss, _) = g.cross_entropy_sum(logits, targets, 0).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut out = Vec::new();
    for id in params.ordered_ids() {
        out.extend_from_slice(grads.get(id).unwrap().data());
    }
    out
}

/// FD check for a single-input op: builds `sum(op(x))` as the loss.
pub fn check_unary_op(
    build: impl Fn(&mut Graph<f64>, NodeId) -> NodeId,
    x0: &Tensor<f64>,
    h: f64,
) -> f64 {
    let analytic = {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true);
        let y = build(&mut g, x);
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        grads.get(x).unwrap().to_f64_vec()
    };
    let f = |vals: &[f64]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(x0.shape().to_vec(), vals.to_vec()).unwrap(), false);
        let y = build(&mut g, x);
        let loss = g.sum(y).unwrap();
        g.value(loss).item()
    };
    let numeric = rcla_core::gradcheck::finite_diff_grad(f, x0.data(), h);
    rcla_core::gradcheck::max_rel_err(&analytic, &numeric)
}

/// Brute-force causal GQA attention with rotary queries/keys, written
/// directly from the definition with f64 scalar loops. Independent of the
/// library's kernel organization.
pub struct ReferenceAttention {
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
}

impl ReferenceAttention {
    /// `q_rows`: `[seq_q, n_heads*head_dim]` already roped.
    /// `k_rows`/`v_rows`: `[kv_seq, n_kv_heads*head_dim]`, keys already roped.
    pub fn run(
        &self,
        q_rows: &[f64],
        seq_q: usize,
        k_rows: &[f64],
        v_rows: &[f64],
        kv_seq: usize,
        causal_offset: usize,
    ) -> Vec<f64> {
        let group = self.n_heads / self.n_kv_heads;
        let width = self.n_heads * self.head_dim;
        let kv_width = self.n_kv_heads * self.head_dim;
        let mut out = vec![0.0; seq_q * width];
        for t in 0..seq_q {
            for h in 0..self.n_heads {
                let g = h / group;
                let q = &q_rows[t * width + h * self.head_dim..t * width + (h + 1) * self.head_dim];
                let visible = (causal_offset + t + 1).min(kv_seq);
                let mut scores = Vec::with_capacity(visible);
                for j in 0..visible {
                    let k = &k_rows
                        [j * kv_width + g * self.head_dim..j * kv_width + (g + 1) * self.head_dim];
                    let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                    scores.push(dot / (self.head_dim as f64).sqrt());
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let p = e / z;
                    let v = &v_rows
                        [j * kv_width + g * self.head_dim..j * kv_width + (g + 1) * self.head_dim];
                    for (o, &vv) in out
                        [t * width + h * self.head_dim..t * width + (h + 1) * self.head_dim]
                        .iter_mut()
                        .zip(v)
                    {
                        *o += p * vv;
                    }
                }
            }
        }
        out
    }
}

/// Reference rotary rotation, interleaving halves, angles in f64.
pub fn reference_rope(x: &mut [f64], rows: usize, n_heads: usize, head_dim: usize, pos_start: usize) {
    let half = head_dim / 2;
    let width = n_heads * head_dim;
    for t in 0..rows {
        let pos = (pos_start + t) as f64;
        for h in 0..n_heads {
            for i in 0..half {
                let theta = pos * 10000f64.powf(-2.0 * i as f64 / head_dim as f64);
                let (s, c) = theta.sin_cos();
                let base = t * width + h * head_dim;
                let a = x[base + i];
                let b = x[base + i + half];
                x[base + i] = a * c - b * s;
                x[base + i + half] = b * c + a * s;
            }
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_f32(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
