//! Decoder-only transformer with grouped-query attention and rotary
//! positions whose attention accepts an externally supplied KV source.
//!
//! Two execution paths share the same weights and the same kernels:
//!
//! - the *taped* path ([`Model::forward_graph`]) records onto a
//!   [`Graph`] for training, computing every layer's own KV and attending
//!   per a [`RoutingPlan`];
//! - the *raw* path (the `attend`/`project_kv_rows`/`mlp_rows` helpers) runs
//!   without gradient bookkeeping and is what the cache engine drives during
//!   prefill and decode.
//!
//! Rotary embedding is applied to keys at the layer that computes them and to
//! queries at the layer that consumes them, always at absolute token
//! positions, so cross-layer KV needs no re-rotation.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{ConfigError, ModelConfig};

use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, GraphError, NodeId};
use crate::kernels::{self, KvView};
use crate::routing::RoutingPlan;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("kv produced by layer {src_layer} cannot be consumed by earlier layer {consumer}")]
    DepthCausality { src_layer: usize, consumer: usize },
    #[error("kv holds {kv_seq} positions but the causal mask needs {required}")]
    KvTooShort { kv_seq: usize, required: usize },
    #[error("routing plan covers {plan} layers, model has {n_layers}")]
    RoutingLength { plan: usize, n_layers: usize },
    #[error("sequence of {seq} tokens exceeds max_seq_len {max}")]
    SeqTooLong { seq: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
}

// ── Weights ─────────────────────────────────────────────────────────────────

/// One transformer block's parameters. Projections map `[in, out]` so rows of
/// activations multiply on the left.
#[derive(Debug, Clone)]
pub struct LayerWeights<F: Scalar> {
    pub attn_norm: Tensor<F>,
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub mlp_norm: Tensor<F>,
    pub w_gate: Tensor<F>,
    pub w_up: Tensor<F>,
    pub w_down: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub embed: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub final_norm: Tensor<F>,
    pub lm_head: Tensor<F>,
}

const INIT_STD: f64 = 0.02;

fn gauss<F: Scalar>(rng: &mut impl Rng, std: f64) -> F {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    F::from_f64(std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
}

impl<F: Scalar> Model<F> {
    /// Random initialization: N(0, 0.02) projections and embeddings, unit
    /// norm gains.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let hidden = config.mlp_hidden();
        let mat =
            |r: &mut dyn FnMut() -> F, rows: usize, cols: usize| Tensor::from_fn(vec![rows, cols], |_| r());
        let mut draw = || gauss::<F>(rng, INIT_STD);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Tensor::full(vec![d], F::one()),
                wq: mat(&mut draw, d, config.q_dim()),
                wk: mat(&mut draw, d, config.kv_dim()),
                wv: mat(&mut draw, d, config.kv_dim()),
                wo: mat(&mut draw, config.q_dim(), d),
                mlp_norm: Tensor::full(vec![d], F::one()),
                w_gate: mat(&mut draw, d, hidden),
                w_up: mat(&mut draw, d, hidden),
                w_down: mat(&mut draw, hidden, d),
            })
            .collect();
        Ok(Model {
            config,
            embed: Tensor::from_fn(vec![config.vocab_size, d], |_| gauss(rng, INIT_STD)),
            layers,
            final_norm: Tensor::full(vec![d], F::one()),
            lm_head: Tensor::from_fn(vec![d, config.vocab_size], |_| gauss(rng, INIT_STD)),
        })
    }

    /// All-zero weights with the given shape; used by the checkpoint loader.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let hidden = config.mlp_hidden();
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Tensor::zeros(vec![d]),
                wq: Tensor::zeros(vec![d, config.q_dim()]),
                wk: Tensor::zeros(vec![d, config.kv_dim()]),
                wv: Tensor::zeros(vec![d, config.kv_dim()]),
                wo: Tensor::zeros(vec![config.q_dim(), d]),
                mlp_norm: Tensor::zeros(vec![d]),
                w_gate: Tensor::zeros(vec![d, hidden]),
                w_up: Tensor::zeros(vec![d, hidden]),
                w_down: Tensor::zeros(vec![hidden, d]),
            })
            .collect();
        Ok(Model {
            config,
            embed: Tensor::zeros(vec![config.vocab_size, d]),
            layers,
            final_norm: Tensor::zeros(vec![d]),
            lm_head: Tensor::zeros(vec![d, config.vocab_size]),
        })
    }

    /// Parameters in canonical order. The trainer, optimizer, and checkpoint
    /// format all rely on this ordering being stable.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, w) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.attn_norm"), &w.attn_norm));
            out.push((format!("layers.{l}.wq"), &w.wq));
            out.push((format!("layers.{l}.wk"), &w.wk));
            out.push((format!("layers.{l}.wv"), &w.wv));
            out.push((format!("layers.{l}.wo"), &w.wo));
            out.push((format!("layers.{l}.mlp_norm"), &w.mlp_norm));
            out.push((format!("layers.{l}.w_gate"), &w.w_gate));
            out.push((format!("layers.{l}.w_up"), &w.w_up));
            out.push((format!("layers.{l}.w_down"), &w.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = vec![("embed".to_string(), &mut self.embed)];
        for (l, w) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{l}.attn_norm"), &mut w.attn_norm));
            out.push((format!("layers.{l}.wq"), &mut w.wq));
            out.push((format!("layers.{l}.wk"), &mut w.wk));
            out.push((format!("layers.{l}.wv"), &mut w.wv));
            out.push((format!("layers.{l}.wo"), &mut w.wo));
            out.push((format!("layers.{l}.mlp_norm"), &mut w.mlp_norm));
            out.push((format!("layers.{l}.w_gate"), &mut w.w_gate));
            out.push((format!("layers.{l}.w_up"), &mut w.w_up));
            out.push((format!("layers.{l}.w_down"), &mut w.w_down));
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Convert the whole model to another element type (f32 ⇄ f64).
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            config: self.config,
            embed: self.embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|w| LayerWeights {
                    attn_norm: w.attn_norm.cast(),
                    wq: w.wq.cast(),
                    wk: w.wk.cast(),
                    wv: w.wv.cast(),
                    wo: w.wo.cast(),
                    mlp_norm: w.mlp_norm.cast(),
                    w_gate: w.w_gate.cast(),
                    w_up: w.w_up.cast(),
                    w_down: w.w_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            lm_head: self.lm_head.cast(),
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SeqTooLong {
                seq: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    id: t,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }
}

// ── Taped (training) path ───────────────────────────────────────────────────

/// Graph leaves for every model parameter, in canonical order.
pub struct GraphParams {
    pub embed: NodeId,
    pub layers: Vec<GraphLayerParams>,
    pub final_norm: NodeId,
    pub lm_head: NodeId,
}

pub struct GraphLayerParams {
    pub attn_norm: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub mlp_norm: NodeId,
    pub w_gate: NodeId,
    pub w_up: NodeId,
    pub w_down: NodeId,
}

impl GraphParams {
    /// Ids in the same order as [`Model::named_params`].
    pub fn ordered_ids(&self) -> Vec<NodeId> {
        let mut out = vec![self.embed];
        for l in &self.layers {
            out.extend([
                l.attn_norm,
                l.wq,
                l.wk,
                l.wv,
                l.wo,
                l.mlp_norm,
                l.w_gate,
                l.w_up,
                l.w_down,
            ]);
        }
        out.push(self.final_norm);
        out.push(self.lm_head);
        out
    }
}

/// Key/value nodes a layer produced on the tape, tagged with their source.
#[derive(Debug, Clone, Copy)]
pub struct TapedKv {
    pub keys: NodeId,
    pub values: NodeId,
    pub source_layer: usize,
}

/// Where a layer's attention reads its keys and values from.
pub enum KvSource<'a> {
    /// The layer's own freshly computed KV.
    SelfAttn,
    /// KV produced by an earlier layer on the same tape.
    External(&'a TapedKv),
}

impl<F: Scalar> Model<F> {
    /// Register every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<F>, requires_grad: bool) -> GraphParams {
        GraphParams {
            embed: g.leaf(self.embed.clone(), requires_grad),
            layers: self
                .layers
                .iter()
                .map(|w| GraphLayerParams {
                    attn_norm: g.leaf(w.attn_norm.clone(), requires_grad),
                    wq: g.leaf(w.wq.clone(), requires_grad),
                    wk: g.leaf(w.wk.clone(), requires_grad),
                    wv: g.leaf(w.wv.clone(), requires_grad),
                    wo: g.leaf(w.wo.clone(), requires_grad),
                    mlp_norm: g.leaf(w.mlp_norm.clone(), requires_grad),
                    w_gate: g.leaf(w.w_gate.clone(), requires_grad),
                    w_up: g.leaf(w.w_up.clone(), requires_grad),
                    w_down: g.leaf(w.w_down.clone(), requires_grad),
                })
                .collect(),
            final_norm: g.leaf(self.final_norm.clone(), requires_grad),
            lm_head: g.leaf(self.lm_head.clone(), requires_grad),
        }
    }

    /// One block on the tape: pre-norm attention against `kv_source`, then a
    /// pre-norm SwiGLU MLP, both residual. The layer's own KV is always
    /// computed (training semantics) and returned alongside the output.
    pub fn layer_forward_graph(
        &self,
        g: &mut Graph<F>,
        params: &GraphLayerParams,
        layer: usize,
        hidden_in: NodeId,
        kv_source: KvSource<'_>,
    ) -> Result<(NodeId, TapedKv), ModelError> {
        let cfg = &self.config;
        let xn = g.rmsnorm(hidden_in, params.attn_norm)?;
        let q = g.matmul(xn, params.wq)?;
        let q = g.rope(q, cfg.n_heads, cfg.head_dim, 0)?;
        let k = g.matmul(xn, params.wk)?;
        let k = g.rope(k, cfg.n_kv_heads, cfg.head_dim, 0)?;
        let v = g.matmul(xn, params.wv)?;
        let own_kv = TapedKv {
            keys: k,
            values: v,
            source_layer: layer,
        };
        let kv = match kv_source {
            KvSource::SelfAttn => &own_kv,
            KvSource::External(kv) => {
                if kv.source_layer > layer {
                    return Err(ModelError::DepthCausality {
                        src_layer: kv.source_layer,
                        consumer: layer,
                    });
                }
                kv
            }
        };
        let attn = g.attention(
            q,
            kv.keys,
            kv.values,
            cfg.n_heads,
            cfg.n_kv_heads,
            cfg.head_dim,
            0,
        )?;
        let proj = g.matmul(attn, params.wo)?;
        let x = g.add(hidden_in, proj)?;

        let xm = g.rmsnorm(x, params.mlp_norm)?;
        let gate = g.matmul(xm, params.w_gate)?;
        let gate = g.silu(gate)?;
        let up = g.matmul(xm, params.w_up)?;
        let h = g.mul(gate, up)?;
        let down = g.matmul(h, params.w_down)?;
        let out = g.add(x, down)?;
        Ok((out, own_kv))
    }

    /// Full forward under a routing plan: layer `l` attends to the own KV of
    /// layer `plan[l]` (itself when `plan[l] == l`). Every layer computes its
    /// own KV regardless of whether anything reads it.
    ///
    /// Returns the `[seq, vocab]` logits node.
    pub fn forward_graph(
        &self,
        g: &mut Graph<F>,
        params: &GraphParams,
        tokens: &[u32],
        routing: &RoutingPlan,
    ) -> Result<NodeId, ModelError> {
        self.check_tokens(tokens)?;
        if routing.len() != self.config.n_layers {
            return Err(ModelError::RoutingLength {
                plan: routing.len(),
                n_layers: self.config.n_layers,
            });
        }
        let mut x = g.gather(params.embed, tokens)?;
        let mut kvs: Vec<TapedKv> = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            let src = routing.source(l);
            let source = if src == l {
                KvSource::SelfAttn
            } else {
                KvSource::External(&kvs[src])
            };
            let (out, own_kv) = self.layer_forward_graph(g, &params.layers[l], l, x, source)?;
            x = out;
            kvs.push(own_kv);
        }
        let xf = g.rmsnorm(x, params.final_norm)?;
        Ok(g.matmul(xf, params.lm_head)?)
    }

    /// Dedicated plain self-attention forward: never consults a routing plan.
    pub fn forward_self_only_graph(
        &self,
        g: &mut Graph<F>,
        params: &GraphParams,
        tokens: &[u32],
    ) -> Result<NodeId, ModelError> {
        self.check_tokens(tokens)?;
        let mut x = g.gather(params.embed, tokens)?;
        for l in 0..self.config.n_layers {
            let (out, _) = self.layer_forward_graph(g, &params.layers[l], l, x, KvSource::SelfAttn)?;
            x = out;
        }
        let xf = g.rmsnorm(x, params.final_norm)?;
        Ok(g.matmul(xf, params.lm_head)?)
    }

    /// Convenience: evaluate logits without keeping the tape.
    pub fn eval_logits(&self, tokens: &[u32], routing: &RoutingPlan) -> Result<Tensor<F>, ModelError> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let logits = self.forward_graph(&mut g, &params, tokens, routing)?;
        Ok(g.value(logits).clone())
    }
}

// ── Raw (inference) path ────────────────────────────────────────────────────

/// One layer's keys and values in row layout `[seq, n_kv_heads·head_dim]`,
/// tagged with the layer that produced them.
#[derive(Debug, Clone)]
pub struct LayerKv<F: Scalar> {
    keys: Tensor<F>,
    values: Tensor<F>,
    source_layer: usize,
}

impl<F: Scalar> LayerKv<F> {
    pub fn new(keys: Tensor<F>, values: Tensor<F>, source_layer: usize) -> Result<Self, ModelError> {
        if keys.shape() != values.shape() || keys.rank() != 2 {
            return Err(ModelError::Graph(GraphError::Shape(
                crate::tensor::ShapeError::Mismatch {
                    op: "layer_kv",
                    lhs: keys.shape().to_vec(),
                    rhs: values.shape().to_vec(),
                },
            )));
        }
        Ok(LayerKv {
            keys,
            values,
            source_layer,
        })
    }

    pub fn seq(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn source_layer(&self) -> usize {
        self.source_layer
    }

    pub fn keys(&self) -> &Tensor<F> {
        &self.keys
    }

    pub fn values(&self) -> &Tensor<F> {
        &self.values
    }

    pub fn view(&self, n_kv_heads: usize, head_dim: usize) -> KvView<'_, F> {
        KvView::from_rows(
            self.keys.data(),
            self.values.data(),
            self.seq(),
            n_kv_heads,
            head_dim,
        )
    }
}

impl<F: Scalar> Model<F> {
    /// Embedding rows for a token sequence, flat `[seq × d_model]`.
    pub fn embed_rows(&self, tokens: &[u32]) -> Result<Vec<F>, ModelError> {
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let mut out = Vec::with_capacity(tokens.len() * d);
        for &t in tokens {
            out.extend_from_slice(&self.embed.data()[t as usize * d..(t as usize + 1) * d]);
        }
        Ok(out)
    }

    /// Attention sublayer against an external KV view: project queries from
    /// the normalized input, rotate them at absolute positions starting at
    /// `pos_start`, attend causally (query `t` sees kv positions
    /// `0..=causal_offset+t`), and project the result back to `d_model`.
    pub(crate) fn attend_rows(
        &self,
        layer: usize,
        x_norm: &[F],
        seq_q: usize,
        kv: &KvView<'_, F>,
        pos_start: usize,
        causal_offset: usize,
    ) -> Result<Vec<F>, ModelError> {
        let cfg = &self.config;
        let required = causal_offset + seq_q;
        if kv.seq < required {
            return Err(ModelError::KvTooShort {
                kv_seq: kv.seq,
                required,
            });
        }
        let w = &self.layers[layer];
        let mut q = kernels::matmul(x_norm, w.wq.data(), seq_q, cfg.d_model, cfg.q_dim());
        kernels::rope_rows(&mut q, seq_q, cfg.n_heads, cfg.head_dim, pos_start);
        let attn = kernels::attn_forward(
            &q,
            seq_q,
            cfg.n_heads,
            cfg.head_dim,
            kv,
            causal_offset,
            None,
        );
        Ok(kernels::matmul(
            &attn,
            w.wo.data(),
            seq_q,
            cfg.q_dim(),
            cfg.d_model,
        ))
    }

    /// Cross-layer attention against explicit keys/values.
    ///
    /// `query_input` is the normalized attention input `[seq_q, d_model]`.
    /// Fails if the KV's source layer lies deeper than the consuming layer or
    /// if the KV holds fewer positions than the causal mask requires.
    pub fn attend(
        &self,
        layer: usize,
        query_input: &Tensor<F>,
        kv: &LayerKv<F>,
        pos_start: usize,
        causal_offset: usize,
    ) -> Result<Tensor<F>, ModelError> {
        if kv.source_layer > layer {
            return Err(ModelError::DepthCausality {
                src_layer: kv.source_layer,
                consumer: layer,
            });
        }
        let seq_q = query_input.shape()[0];
        let view = kv.view(self.config.n_kv_heads, self.config.head_dim);
        let out = self.attend_rows(layer, query_input.data(), seq_q, &view, pos_start, causal_offset)?;
        Ok(Tensor::new(vec![seq_q, self.config.d_model], out).expect("shape fixed"))
    }

    /// Key/value rows for `seq` normalized input rows; keys come back already
    /// rotated for absolute positions starting at `pos_start`.
    pub fn project_kv_rows(
        &self,
        layer: usize,
        x_norm: &[F],
        seq: usize,
        pos_start: usize,
    ) -> (Vec<F>, Vec<F>) {
        let cfg = &self.config;
        let w = &self.layers[layer];
        let mut k = kernels::matmul(x_norm, w.wk.data(), seq, cfg.d_model, cfg.kv_dim());
        kernels::rope_rows(&mut k, seq, cfg.n_kv_heads, cfg.head_dim, pos_start);
        let v = kernels::matmul(x_norm, w.wv.data(), seq, cfg.d_model, cfg.kv_dim());
        (k, v)
    }

    /// This layer's own KV for a full prompt, as the taped path would compute
    /// it: normalize the block input, project, rotate keys from position 0.
    pub fn own_kv(&self, layer: usize, hidden_in: &[F], seq: usize) -> LayerKv<F> {
        let xn = self.norm_rows(&self.layers[layer].attn_norm, hidden_in);
        let (k, v) = self.project_kv_rows(layer, &xn, seq, 0);
        let kv_dim = self.config.kv_dim();
        LayerKv {
            keys: Tensor::new(vec![seq, kv_dim], k).expect("shape fixed"),
            values: Tensor::new(vec![seq, kv_dim], v).expect("shape fixed"),
            source_layer: layer,
        }
    }

    pub(crate) fn norm_rows(&self, gain: &Tensor<F>, x: &[F]) -> Vec<F> {
        kernels::rmsnorm_rows(x, gain.data(), self.config.d_model, crate::graph::RMSNORM_EPS)
    }

    /// SwiGLU MLP sublayer output (to be added residually).
    pub(crate) fn mlp_rows(&self, layer: usize, hidden: &[F], seq: usize) -> Vec<F> {
        let cfg = &self.config;
        let w = &self.layers[layer];
        let xm = self.norm_rows(&w.mlp_norm, hidden);
        let hid = cfg.mlp_hidden();
        let mut gate = kernels::matmul(&xm, w.w_gate.data(), seq, cfg.d_model, hid);
        for v in gate.iter_mut() {
            *v = kernels::silu(*v);
        }
        let up = kernels::matmul(&xm, w.w_up.data(), seq, cfg.d_model, hid);
        for (g_, &u) in gate.iter_mut().zip(&up) {
            *g_ = *g_ * u;
        }
        kernels::matmul(&gate, w.w_down.data(), seq, hid, cfg.d_model)
    }

    /// Final norm + LM head over `rows` hidden rows.
    pub(crate) fn logits_rows(&self, hidden: &[F], rows: usize) -> Vec<F> {
        let cfg = &self.config;
        let xf = self.norm_rows(&self.final_norm, hidden);
        kernels::matmul(&xf, self.lm_head.data(), rows, cfg.d_model, cfg.vocab_size)
    }
}
