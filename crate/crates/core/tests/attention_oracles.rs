//! Reference-implementation oracles for the attention path: a monolithic
//! brute-force causal attention, a hand-assembled cross-layer composition,
//! and a plain multi-head reference for the GQA special case.

mod common;

use common::{max_abs_diff, uniform_tensor, ReferenceAttention};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rcla_core::kernels;
use rcla_core::model::{Model, ModelConfig};
use rcla_core::routing::RoutingPlan;
use rcla_core::tensor::Tensor;

fn model_with(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::init(cfg, &mut rng).unwrap()
}

/// attend() with a layer's own KV over a full prompt must match a monolithic
/// non-cached causal self-attention computed from the definition.
#[test]
fn attend_matches_monolithic_reference() {
    let cfg = common::fd_config();
    let model = model_with(cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = 7;
    let x = uniform_tensor(vec![seq, cfg.d_model], &mut rng, -1.0, 1.0);

    let kv = model.own_kv(0, x.data(), seq);
    // own_kv normalizes internally; attend expects the normalized input
    let xn = kernels::rmsnorm_rows(
        x.data(),
        model.layers[0].attn_norm.data(),
        cfg.d_model,
        1e-6,
    );
    let xn_t = Tensor::new(vec![seq, cfg.d_model], xn.clone()).unwrap();
    let out = model.attend(0, &xn_t, &kv, 0, 0).unwrap();

    // reference: project q, rope, brute-force attention, project out
    let mut q = kernels::matmul(&xn, model.layers[0].wq.data(), seq, cfg.d_model, cfg.q_dim());
    common::reference_rope(&mut q, seq, cfg.n_heads, cfg.head_dim, 0);
    let reference = ReferenceAttention {
        n_heads: cfg.n_heads,
        n_kv_heads: cfg.n_kv_heads,
        head_dim: cfg.head_dim,
    };
    let attn = reference.run(&q, seq, kv.keys().data(), kv.values().data(), seq, 0);
    let expect = kernels::matmul(&attn, model.layers[0].wo.data(), seq, cfg.q_dim(), cfg.d_model);

    let err = max_abs_diff(out.data(), &expect);
    assert!(err < 1e-5, "attend vs monolithic reference: {err}");
}

/// A 2-layer forward where layer 1 reads layer 0's KV must equal a reference
/// computation assembled by hand from the raw pieces.
#[test]
fn cross_layer_forward_matches_hand_assembled_reference() {
    let cfg = common::fd_config();
    let model = model_with(cfg, 3);
    let tokens = [5u32, 2, 9, 1, 7];
    let seq = tokens.len();
    let plan = RoutingPlan::from_sources(vec![0, 0]).unwrap();
    let logits = model.eval_logits(&tokens, &plan).unwrap();

    // hand assembly with raw kernels only
    let d = cfg.d_model;
    let eps = 1e-6;
    let reference = ReferenceAttention {
        n_heads: cfg.n_heads,
        n_kv_heads: cfg.n_kv_heads,
        head_dim: cfg.head_dim,
    };
    let mut x = model.embed_rows(&tokens).unwrap();
    let mut kv0: Option<(Vec<f64>, Vec<f64>)> = None;
    for l in 0..2 {
        let w = &model.layers[l];
        let xn = kernels::rmsnorm_rows(&x, w.attn_norm.data(), d, eps);
        let mut q = kernels::matmul(&xn, w.wq.data(), seq, d, cfg.q_dim());
        common::reference_rope(&mut q, seq, cfg.n_heads, cfg.head_dim, 0);
        let mut k = kernels::matmul(&xn, w.wk.data(), seq, d, cfg.kv_dim());
        common::reference_rope(&mut k, seq, cfg.n_kv_heads, cfg.head_dim, 0);
        let v = kernels::matmul(&xn, w.wv.data(), seq, d, cfg.kv_dim());
        if l == 0 {
            kv0 = Some((k.clone(), v.clone()));
        }
        // both layers attend to layer 0's KV under this plan
        let (ks, vs) = kv0.as_ref().unwrap();
        let attn = reference.run(&q, seq, ks, vs, seq, 0);
        let proj = kernels::matmul(&attn, w.wo.data(), seq, cfg.q_dim(), d);
        for (a, b) in x.iter_mut().zip(&proj) {
            *a += b;
        }
        let xm = kernels::rmsnorm_rows(&x, w.mlp_norm.data(), d, eps);
        let hid = cfg.mlp_hidden();
        let mut gate = kernels::matmul(&xm, w.w_gate.data(), seq, d, hid);
        for g in gate.iter_mut() {
            let s = 1.0 / (1.0 + (-*g).exp());
            *g *= s;
        }
        let up = kernels::matmul(&xm, w.w_up.data(), seq, d, hid);
        for (g, u) in gate.iter_mut().zip(&up) {
            *g *= u;
        }
        let down = kernels::matmul(&gate, w.w_down.data(), seq, hid, d);
        for (a, b) in x.iter_mut().zip(&down) {
            *a += b;
        }
    }
    let xf = kernels::rmsnorm_rows(&x, model.final_norm.data(), d, eps);
    let expect = kernels::matmul(&xf, model.lm_head.data(), seq, d, cfg.vocab_size);

    let err = max_abs_diff(logits.data(), &expect);
    assert!(err < 1e-10, "cross-layer composition drift: {err}");
}

/// With n_kv_heads == n_heads the GQA path must reproduce plain multi-head
/// attention.
#[test]
fn gqa_with_equal_heads_matches_plain_mha() {
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 4,
        n_kv_heads: 4,
        head_dim: 4,
        vocab_size: 13,
        max_seq_len: 16,
        bytes_per_value: 4,
    };
    let model = model_with(cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seq = 6;
    let x = uniform_tensor(vec![seq, cfg.d_model], &mut rng, -1.0, 1.0);
    let kv = model.own_kv(0, x.data(), seq);
    let xn = kernels::rmsnorm_rows(x.data(), model.layers[0].attn_norm.data(), cfg.d_model, 1e-6);
    let xn_t = Tensor::new(vec![seq, cfg.d_model], xn.clone()).unwrap();
    let out = model.attend(0, &xn_t, &kv, 0, 0).unwrap();

    // plain MHA: every head has its own kv head (group = 1)
    let mut q = kernels::matmul(&xn, model.layers[0].wq.data(), seq, cfg.d_model, cfg.q_dim());
    common::reference_rope(&mut q, seq, cfg.n_heads, cfg.head_dim, 0);
    let mha = ReferenceAttention {
        n_heads: 4,
        n_kv_heads: 4,
        head_dim: 4,
    };
    let attn = mha.run(&q, seq, kv.keys().data(), kv.values().data(), seq, 0);
    let expect = kernels::matmul(&attn, model.layers[0].wo.data(), seq, cfg.q_dim(), cfg.d_model);
    let err = max_abs_diff(out.data(), &expect);
    assert!(err < 1e-5, "gqa/mha mismatch: {err}");
}

/// A decode-style shifted query against cached keys equals the same position
/// inside a full-prompt attention: keys rotated at the source, queries at the
/// consumer, nothing re-rotated.
#[test]
fn shifted_query_attends_like_full_prompt() {
    let cfg = common::fd_config();
    let model = model_with(cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = 5;
    let x = uniform_tensor(vec![seq, cfg.d_model], &mut rng, -1.0, 1.0);
    let xn = kernels::rmsnorm_rows(x.data(), model.layers[0].attn_norm.data(), cfg.d_model, 1e-6);
    let kv = model.own_kv(0, x.data(), seq);

    // full prompt: all positions at once
    let xn_t = Tensor::new(vec![seq, cfg.d_model], xn.clone()).unwrap();
    let full = model.attend(0, &xn_t, &kv, 0, 0).unwrap();

    // decode style: only the last row, with pos_start = causal_offset = seq-1
    let last = Tensor::new(
        vec![1, cfg.d_model],
        xn[(seq - 1) * cfg.d_model..].to_vec(),
    )
    .unwrap();
    let step = model.attend(0, &last, &kv, seq - 1, seq - 1).unwrap();

    let err = max_abs_diff(step.data(), &full.data()[(seq - 1) * cfg.d_model..]);
    assert!(err < 1e-12, "shifted decode drift: {err}");
}
