//! Inference-time KV cache with depth-wise sharing.
//!
//! A [`CacheStore`] holds one bank per retained (leader) layer. During
//! prefill and decode, leader layers project and append their keys/values;
//! non-leader layers skip their K/V projections entirely and attend to the
//! nearest leader's bank via the sharing strategy's source map.
//!
//! Accounting is exact and separate from allocation: `logical_bytes` is the
//! closed form |S| · seq · 2 · n_kv_heads · head_dim · bytes_per_value, while
//! banks grow by amortized doubling underneath.

use serde::Serialize;
use thiserror::Error;

use crate::kernels::KvView;
use crate::model::{Model, ModelConfig, ModelError};
use crate::routing::SharingStrategy;
use crate::scalar::Scalar;
use crate::tensor::Buf;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("prefill requires an empty store (seq_len = {0})")]
    StoreNotEmpty(usize),
    #[error("decode requires a prefilled store")]
    NotPrefilled,
    #[error("cache at {seq} tokens cannot grow past max_seq_len {max}")]
    MaxSeqExceeded { seq: usize, max: usize },
    #[error("strategy covers {strategy} layers, model has {model}")]
    StrategyMismatch { strategy: usize, model: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ── Footprint accounting ────────────────────────────────────────────────────

/// Bytes of KV cache one token costs with every layer retained:
/// `2 · n_layers · n_kv_heads · head_dim · bytes_per_value`.
pub fn per_token_footprint(config: &ModelConfig) -> u64 {
    2 * config.n_layers as u64
        * config.n_kv_heads as u64
        * config.head_dim as u64
        * config.bytes_per_value as u64
}

/// Bytes of KV cache per token per *retained layer*.
pub fn per_layer_token_bytes(config: &ModelConfig) -> u64 {
    2 * config.n_kv_heads as u64 * config.head_dim as u64 * config.bytes_per_value as u64
}

/// Total cache bytes for `seq` tokens under a sharing strategy.
pub fn strategy_footprint(config: &ModelConfig, strategy: &SharingStrategy, seq: usize) -> u64 {
    strategy.retained_count() as u64 * seq as u64 * per_layer_token_bytes(config)
}

/// Footprint report emitted as JSON by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct FootprintReport {
    pub config: ModelConfig,
    /// Retained layer indices.
    pub strategy: Vec<usize>,
    /// Prompt plus generated tokens accounted for.
    pub seq_len: usize,
    /// Full-retention bytes per token.
    pub per_token_bytes: u64,
    /// Bytes per token under the strategy.
    pub strategy_per_token_bytes: u64,
    /// Total bytes for `seq_len` tokens under the strategy.
    pub total_bytes: u64,
    /// Total bytes a full cache would need for the same sequence.
    pub full_total_bytes: u64,
    /// |S| / L.
    pub retention: f64,
    /// total_bytes / weight_bytes, when weight bytes were supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_to_weight_ratio: Option<f64>,
}

/// Build a report for a prompt of `prompt_len` tokens plus `generated` new
/// ones. `weight_bytes`, when given, adds the cache-vs-weights comparison.
pub fn footprint_report(
    config: &ModelConfig,
    strategy: &SharingStrategy,
    prompt_len: usize,
    generated: usize,
    weight_bytes: Option<u64>,
) -> FootprintReport {
    let seq_len = prompt_len + generated;
    let total_bytes = strategy_footprint(config, strategy, seq_len);
    FootprintReport {
        config: *config,
        strategy: strategy.retained().to_vec(),
        seq_len,
        per_token_bytes: per_token_footprint(config),
        strategy_per_token_bytes: strategy.retained_count() as u64 * per_layer_token_bytes(config),
        total_bytes,
        full_total_bytes: per_token_footprint(config) * seq_len as u64,
        retention: strategy.retention_fraction(),
        cache_to_weight_ratio: weight_bytes.map(|w| total_bytes as f64 / w as f64),
    }
}

// ── Cache store ─────────────────────────────────────────────────────────────

/// Per-leader key/value bank, laid out `[n_kv_heads, capacity, head_dim]` so
/// one head's positions are contiguous.
struct CacheBank<F: Scalar> {
    keys: Buf<F>,
    values: Buf<F>,
    rows: usize,
    capacity: usize,
}

impl<F: Scalar> CacheBank<F> {
    fn new() -> Self {
        CacheBank {
            keys: Buf::new(Vec::new()),
            values: Buf::new(Vec::new()),
            rows: 0,
            capacity: 0,
        }
    }

    fn reserve(&mut self, rows: usize, n_kv: usize, head_dim: usize) {
        if rows <= self.capacity {
            return;
        }
        let new_cap = rows.next_power_of_two().max(16);
        let mut keys = Buf::new(vec![F::zero(); n_kv * new_cap * head_dim]);
        let mut values = Buf::new(vec![F::zero(); n_kv * new_cap * head_dim]);
        for h in 0..n_kv {
            for t in 0..self.rows {
                let src = (h * self.capacity + t) * head_dim;
                let dst = (h * new_cap + t) * head_dim;
                keys[dst..dst + head_dim].copy_from_slice(&self.keys[src..src + head_dim]);
                values[dst..dst + head_dim].copy_from_slice(&self.values[src..src + head_dim]);
            }
        }
        self.keys = keys;
        self.values = values;
        self.capacity = new_cap;
    }

    /// Append `rows` positions given row-layout `[rows, n_kv·head_dim]` data.
    fn append(&mut self, k_rows: &[F], v_rows: &[F], rows: usize, n_kv: usize, head_dim: usize) {
        self.reserve(self.rows + rows, n_kv, head_dim);
        let width = n_kv * head_dim;
        for t in 0..rows {
            for h in 0..n_kv {
                let src = t * width + h * head_dim;
                let dst = (h * self.capacity + self.rows + t) * head_dim;
                self.keys[dst..dst + head_dim].copy_from_slice(&k_rows[src..src + head_dim]);
                self.values[dst..dst + head_dim].copy_from_slice(&v_rows[src..src + head_dim]);
            }
        }
        self.rows += rows;
    }

    fn view(&self, n_kv: usize, head_dim: usize) -> KvView<'_, F> {
        KvView {
            keys: &self.keys,
            values: &self.values,
            seq: self.rows,
            n_kv_heads: n_kv,
            head_dim,
            pos_stride: head_dim,
            head_stride: self.capacity * head_dim,
        }
    }
}

/// Inference-time cache for one generation stream.
pub struct CacheStore<F: Scalar> {
    strategy: SharingStrategy,
    config: ModelConfig,
    banks: Vec<CacheBank<F>>,
    seq_len: usize,
    write_count: u64,
}

impl<F: Scalar> CacheStore<F> {
    pub fn new(config: ModelConfig, strategy: SharingStrategy) -> Result<Self, EngineError> {
        if strategy.n_layers() != config.n_layers {
            return Err(EngineError::StrategyMismatch {
                strategy: strategy.n_layers(),
                model: config.n_layers,
            });
        }
        let banks = strategy.retained().iter().map(|_| CacheBank::new()).collect();
        Ok(CacheStore {
            strategy,
            config,
            banks,
            seq_len: 0,
            write_count: 0,
        })
    }

    pub fn strategy(&self) -> &SharingStrategy {
        &self.strategy
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn is_empty(&self) -> bool {
        self.seq_len == 0
    }

    /// Cumulative bank appends; one decode step writes exactly |S| rows.
    pub fn write_count(&self) -> u64 {
        self.write_count
    }

    /// Exact logical bytes: |S| · seq · 2 · n_kv_heads · head_dim · bpv.
    pub fn logical_bytes(&self) -> u64 {
        strategy_footprint(&self.config, &self.strategy, self.seq_len)
    }

    /// Bytes actually held by the banks (amortized-doubled capacity).
    pub fn allocated_bytes(&self) -> u64 {
        self.banks
            .iter()
            .map(|b| 2 * b.capacity as u64 * self.config.kv_dim() as u64 * F::BYTES as u64)
            .sum()
    }

    fn bank_index(&self, leader: usize) -> usize {
        self.strategy
            .retained()
            .binary_search(&leader)
            .expect("leader is retained")
    }

    fn append(&mut self, layer: usize, k_rows: &[F], v_rows: &[F], rows: usize) {
        let (n_kv, hd) = (self.config.n_kv_heads, self.config.head_dim);
        let idx = self.bank_index(layer);
        self.banks[idx].append(k_rows, v_rows, rows, n_kv, hd);
        self.write_count += rows as u64;
    }

    fn view_for(&self, consumer: usize) -> KvView<'_, F> {
        let leader = self.strategy.map_source(consumer);
        let idx = self.bank_index(leader);
        self.banks[idx].view(self.config.n_kv_heads, self.config.head_dim)
    }

    fn commit(&mut self, rows: usize) {
        self.seq_len += rows;
        debug_assert!(self.banks.iter().all(|b| b.rows == self.seq_len));
    }
}

// ── Prefill and decode ──────────────────────────────────────────────────────

/// Run `rows` token positions starting at absolute position `pos_start`
/// through all layers, appending leader KV as we go. Returns the final hidden
/// rows. `causal_offset` equals `pos_start`: query `t` sees cache positions
/// `0..=pos_start+t`.
fn forward_rows<F: Scalar>(
    model: &Model<F>,
    store: &mut CacheStore<F>,
    tokens: &[u32],
    pos_start: usize,
) -> Result<Vec<F>, EngineError> {
    let rows = tokens.len();
    let mut x = model.embed_rows(tokens)?;
    for l in 0..model.config.n_layers {
        let xn = model.norm_rows(&model.layers[l].attn_norm, &x);
        if store.strategy.is_leader(l) {
            let (k, v) = model.project_kv_rows(l, &xn, rows, pos_start);
            store.append(l, &k, &v, rows);
        }
        let view = store.view_for(l);
        debug_assert!(view.seq >= pos_start + rows, "source bank lags the stream");
        let attn = model.attend_rows(l, &xn, rows, &view, pos_start, pos_start)?;
        for (a, &b) in x.iter_mut().zip(&attn) {
            *a = *a + b;
        }
        let mlp = model.mlp_rows(l, &x, rows);
        for (a, &b) in x.iter_mut().zip(&mlp) {
            *a = *a + b;
        }
    }
    store.commit(rows);
    Ok(x)
}

/// Process a whole prompt in one pass, populating the store. Returns the
/// logits of the last position.
pub fn prefill<F: Scalar>(
    model: &Model<F>,
    tokens: &[u32],
    store: &mut CacheStore<F>,
) -> Result<Vec<F>, EngineError> {
    if !store.is_empty() {
        return Err(EngineError::StoreNotEmpty(store.seq_len));
    }
    if tokens.len() > model.config.max_seq_len {
        return Err(EngineError::MaxSeqExceeded {
            seq: tokens.len(),
            max: model.config.max_seq_len,
        });
    }
    let rows = tokens.len();
    let hidden = forward_rows(model, store, tokens, 0)?;
    let d = model.config.d_model;
    let last = &hidden[(rows - 1) * d..rows * d];
    let logits = model.logits_rows(last, 1);
    check_logits(&logits)?;
    Ok(logits)
}

/// Append one token and return its next-token logits. Leader layers append
/// one KV row each; non-leaders write nothing.
pub fn decode_step<F: Scalar>(
    model: &Model<F>,
    token: u32,
    store: &mut CacheStore<F>,
) -> Result<Vec<F>, EngineError> {
    if store.is_empty() {
        return Err(EngineError::NotPrefilled);
    }
    if store.seq_len + 1 > model.config.max_seq_len {
        return Err(EngineError::MaxSeqExceeded {
            seq: store.seq_len + 1,
            max: model.config.max_seq_len,
        });
    }
    let pos = store.seq_len;
    let hidden = forward_rows(model, store, &[token], pos)?;
    let logits = model.logits_rows(&hidden, 1);
    check_logits(&logits)?;
    Ok(logits)
}

fn check_logits<F: Scalar>(logits: &[F]) -> Result<(), EngineError> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EngineError::Model(ModelError::Graph(
            crate::graph::GraphError::NonFinite { op: "logits" },
        )))
    }
}

pub fn argmax<F: Scalar>(logits: &[F]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy generation: prefill the prompt, then decode up to `max_new` tokens,
/// stopping after `eos` is produced. Returns the generated ids (including the
/// terminating `eos` if reached).
pub fn greedy_generate<F: Scalar>(
    model: &Model<F>,
    prompt: &[u32],
    store: &mut CacheStore<F>,
    max_new: usize,
    eos: u32,
) -> Result<Vec<u32>, EngineError> {
    let mut logits = prefill(model, prompt, store)?;
    let mut out = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        let next = argmax(&logits);
        out.push(next);
        if next == eos {
            break;
        }
        logits = decode_step(model, next, store)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::RoutingPlan;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64) -> Model<f32> {
        let mut cfg = ModelConfig::toy();
        cfg.max_seq_len = 128;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::init(cfg, &mut rng).unwrap()
    }

    #[test]
    fn per_token_footprint_matches_published_shapes() {
        let llama2 = ModelConfig::accounting_preset("llama2-7b").unwrap();
        assert_eq!(per_token_footprint(&llama2), 524_288); // 512 KB
        let qwen3 = ModelConfig::accounting_preset("qwen3-8b").unwrap();
        assert_eq!(per_token_footprint(&qwen3), 147_456); // 144 KB
        let llama3 = ModelConfig::accounting_preset("llama3-8b").unwrap();
        assert_eq!(per_token_footprint(&llama3), 131_072); // 128 KB
    }

    #[test]
    fn strategy_footprint_scales_inversely_with_group_size() {
        let cfg = ModelConfig::accounting_preset("qwen3-8b").unwrap();
        let full = strategy_footprint(&cfg, &SharingStrategy::all(36), 8192);
        assert_eq!(full, 1_207_959_552);
        let g4 = strategy_footprint(
            &cfg,
            &SharingStrategy::keep_every_k(36, 4).unwrap(),
            8192,
        );
        assert_eq!(full / g4, 4);
        assert_eq!(full % g4, 0);
    }

    #[test]
    fn footprint_zero_seq_and_kv_head_linearity() {
        let mut cfg = ModelConfig::toy();
        assert_eq!(strategy_footprint(&cfg, &SharingStrategy::all(8), 0), 0);
        let full = strategy_footprint(&cfg, &SharingStrategy::all(8), 64);
        cfg.n_kv_heads = 1;
        cfg.n_heads = 4; // still divisible
        let halved = strategy_footprint(&cfg, &SharingStrategy::all(8), 64);
        assert_eq!(full, 2 * halved);
    }

    #[test]
    fn store_accounting_is_exact() {
        let model = toy_model(0);
        let cfg = model.config;
        let strategy = SharingStrategy::keep_every_k(8, 2).unwrap();
        let mut store = CacheStore::<f32>::new(cfg, strategy.clone()).unwrap();
        let tokens: Vec<u32> = (0..64).map(|i| (i % 250) as u32 + 3).collect();
        prefill(&model, &tokens, &mut store).unwrap();
        assert_eq!(store.seq_len(), 64);
        assert_eq!(
            store.logical_bytes(),
            strategy_footprint(&cfg, &strategy, 64)
        );
        // half retention costs exactly half of the full-cache bytes
        let mut full_store = CacheStore::<f32>::new(cfg, SharingStrategy::all(8)).unwrap();
        prefill(&model, &tokens, &mut full_store).unwrap();
        assert_eq!(full_store.logical_bytes(), 2 * store.logical_bytes());
    }

    #[test]
    fn prefill_requires_empty_store_and_decode_requires_prefill() {
        let model = toy_model(1);
        let mut store = CacheStore::<f32>::new(model.config, SharingStrategy::all(8)).unwrap();
        assert!(matches!(
            decode_step(&model, 5, &mut store),
            Err(EngineError::NotPrefilled)
        ));
        prefill(&model, &[3, 4, 5], &mut store).unwrap();
        assert!(matches!(
            prefill(&model, &[3], &mut store),
            Err(EngineError::StoreNotEmpty(3))
        ));
    }

    #[test]
    fn prefill_rejects_overlong_prompt() {
        let model = toy_model(2);
        let tokens: Vec<u32> = vec![3; model.config.max_seq_len + 1];
        let mut store = CacheStore::<f32>::new(model.config, SharingStrategy::all(8)).unwrap();
        assert!(matches!(
            prefill(&model, &tokens, &mut store),
            Err(EngineError::MaxSeqExceeded { .. })
        ));
    }

    #[test]
    fn writes_per_decode_step_equal_retained_count() {
        let model = toy_model(3);
        for k in [1usize, 2, 4] {
            let strategy = SharingStrategy::keep_every_k(8, k).unwrap();
            let leaders = strategy.retained_count() as u64;
            let mut store = CacheStore::<f32>::new(model.config, strategy).unwrap();
            prefill(&model, &[5, 6, 7, 8], &mut store).unwrap();
            assert_eq!(store.write_count(), 4 * leaders);
            decode_step(&model, 9, &mut store).unwrap();
            assert_eq!(store.write_count(), 5 * leaders);
        }
    }

    #[test]
    fn full_retention_prefill_matches_routed_forward_bitwise() {
        let model = toy_model(4);
        let tokens: Vec<u32> = (0..32).map(|i| (i * 7 % 250) as u32 + 3).collect();
        let mut store = CacheStore::<f32>::new(model.config, SharingStrategy::all(8)).unwrap();
        let logits = prefill(&model, &tokens, &mut store).unwrap();
        let reference = model
            .eval_logits(&tokens, &RoutingPlan::identity(8))
            .unwrap();
        let vocab = model.config.vocab_size;
        let last = &reference.data()[(tokens.len() - 1) * vocab..];
        assert_eq!(&logits[..], last, "shared kernels keep the paths bit-equal");
    }

    #[test]
    fn shared_prefill_matches_mu_routed_forward_bitwise() {
        let model = toy_model(5);
        let tokens: Vec<u32> = (0..24).map(|i| (i * 11 % 250) as u32 + 3).collect();
        let strategy = SharingStrategy::keep_every_k(8, 2).unwrap();
        let mut store = CacheStore::<f32>::new(model.config, strategy.clone()).unwrap();
        let logits = prefill(&model, &tokens, &mut store).unwrap();
        let reference = model.eval_logits(&tokens, &strategy.to_plan()).unwrap();
        let vocab = model.config.vocab_size;
        let last = &reference.data()[(tokens.len() - 1) * vocab..];
        assert_eq!(&logits[..], last);
    }

    #[test]
    fn decode_matches_full_recompute() {
        let model = toy_model(6);
        let prompt: Vec<u32> = (0..16).map(|i| (i * 13 % 250) as u32 + 3).collect();
        for strategy in [
            SharingStrategy::all(8),
            SharingStrategy::keep_every_k(8, 2).unwrap(),
            SharingStrategy::single(8),
        ] {
            let mut store = CacheStore::<f32>::new(model.config, strategy.clone()).unwrap();
            let mut logits = prefill(&model, &prompt, &mut store).unwrap();
            let mut context = prompt.clone();
            for step in 0..8 {
                let next = argmax(&logits);
                context.push(next);
                logits = decode_step(&model, next, &mut store).unwrap();
                let mut fresh = CacheStore::<f32>::new(model.config, strategy.clone()).unwrap();
                let recomputed = prefill(&model, &context, &mut fresh).unwrap();
                let max_err = logits
                    .iter()
                    .zip(&recomputed)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f32, f32::max);
                assert!(
                    max_err <= 1e-4,
                    "strategy {} step {step}: drift {max_err}",
                    strategy.label()
                );
            }
        }
    }

    #[test]
    fn greedy_generation_is_reproducible() {
        let model = toy_model(7);
        let strategy = SharingStrategy::keep_every_k(8, 4).unwrap();
        let gen = || {
            let mut store = CacheStore::<f32>::new(model.config, strategy.clone()).unwrap();
            greedy_generate(&model, &[1, 50, 60, 70], &mut store, 12, 2).unwrap()
        };
        assert_eq!(gen(), gen());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn footprint_is_monotone_in_retained_count_and_seq(
                extra in proptest::collection::btree_set(0usize..12, 0..6),
                seq in 0usize..4096,
                grow in 1usize..512,
            ) {
                let cfg = ModelConfig::toy();
                let small = SharingStrategy::new(
                    std::iter::once(0).chain(extra.iter().copied().filter(|&i| i < 8)),
                    8,
                ).unwrap();
                let full = SharingStrategy::all(8);
                prop_assert!(
                    strategy_footprint(&cfg, &small, seq) <= strategy_footprint(&cfg, &full, seq)
                );
                prop_assert!(
                    strategy_footprint(&cfg, &small, seq)
                        <= strategy_footprint(&cfg, &small, seq + grow)
                );
            }

            #[test]
            fn one_over_g_law_is_exact_when_g_divides_layers(g in prop::sample::select(vec![1usize, 2, 3, 4, 6, 9, 12, 18, 36])) {
                let mut cfg = ModelConfig::toy();
                cfg.n_layers = 36;
                let full = strategy_footprint(&cfg, &SharingStrategy::all(36), 1000);
                let shared = strategy_footprint(
                    &cfg,
                    &SharingStrategy::keep_every_k(36, g).unwrap(),
                    1000,
                );
                prop_assert_eq!(shared * g as u64, full);
            }
        }
    }

    #[test]
    fn report_single_token_equals_per_token_bytes() {
        // T=1, t=0: total is exactly one per-token footprint
        let cfg = ModelConfig::toy();
        let report = footprint_report(&cfg, &SharingStrategy::all(8), 1, 0, None);
        assert_eq!(report.total_bytes, per_token_footprint(&cfg));
        assert_eq!(report.full_total_bytes, report.total_bytes);
    }

    #[test]
    fn report_serializes_with_ratio() {
        let cfg = ModelConfig::accounting_preset("llama2-7b").unwrap();
        let report = footprint_report(
            &cfg,
            &SharingStrategy::all(32),
            48_000,
            0,
            Some(13_476_839_424),
        );
        assert_eq!(report.total_bytes, 524_288 * 48_000);
        let ratio = report.cache_to_weight_ratio.unwrap();
        assert!(ratio > 1.0, "a book-length context outweighs the weights");
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"retention\":1.0"));
    }
}
