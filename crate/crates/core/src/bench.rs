//! Benchmark and evaluation harness: TTFT/throughput sweeps over (length,
//! batch, group size) grids, retention sweeps over checkpoints × strategies,
//! and CSV/plot-data emission.
//!
//! Timing protocol: warmup iterations first, then the median of `repeats`
//! measured runs on a monotonic clock. Wall-clock columns are the only
//! nondeterministic ones; cache bytes always come from the closed-form
//! accounting.

use std::time::Instant;

use thiserror::Error;

use crate::cache::{decode_step, prefill, strategy_footprint, CacheStore, EngineError};
use crate::data::retrieval::{exact_match_eval, RetrievalExample};
use crate::mem;
use crate::model::Model;
use crate::routing::{RoutingError, SharingStrategy};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep: {0}")]
    BadSpec(String),
    #[error("input length {len} exceeds the model's max_seq_len {max} (with decode budget)")]
    LengthExceedsModel { len: usize, max: usize },
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("strategy {index} covers {strategy} layers, model has {model}")]
    StrategyLayers {
        index: usize,
        strategy: usize,
        model: usize,
    },
}

// ── Sweep specification ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub lengths: Vec<usize>,
    pub batches: Vec<usize>,
    pub group_sizes: Vec<usize>,
    /// Timed repeats per grid point; the row reports their median.
    pub repeats: usize,
    pub warmup_iters: usize,
    /// Decode budget per measurement.
    pub decode_tokens: usize,
    /// Artificial cap on live tensor + cache bytes; rows that would exceed it
    /// report status=oom instead of running.
    pub mem_cap_bytes: Option<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lengths: vec![512],
            batches: vec![1],
            group_sizes: vec![1, 4],
            repeats: 3,
            warmup_iters: 2,
            decode_tokens: 128,
            mem_cap_bytes: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repeats < 3 {
            return Err(BenchError::BadSpec(format!(
                "timing rows need repeats >= 3, got {}",
                self.repeats
            )));
        }
        if self.lengths.is_empty() || self.batches.is_empty() || self.group_sizes.is_empty() {
            return Err(BenchError::BadSpec("empty sweep axis".into()));
        }
        if self.decode_tokens == 0 {
            return Err(BenchError::BadSpec("decode_tokens must be positive".into()));
        }
        if self.group_sizes.contains(&0) {
            return Err(BenchError::BadSpec("group size 0".into()));
        }
        if self.batches.contains(&0) {
            return Err(BenchError::BadSpec("batch size 0".into()));
        }
        Ok(())
    }
}

// ── Records ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchStatus {
    Ok,
    Oom,
}

impl BenchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchStatus::Ok => "ok",
            BenchStatus::Oom => "oom",
        }
    }
}

/// One benchmark measurement row.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub input_len: usize,
    pub batch: usize,
    pub group_size: usize,
    pub status: BenchStatus,
    pub ttft_ms: f64,
    pub decode_tok_per_s: f64,
    pub kv_cache_bytes: u64,
    pub peak_alloc_bytes: u64,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str =
        "input_len,batch,group_size,status,ttft_ms,decode_tok_s,kv_cache_bytes,peak_bytes";

    pub fn to_csv_row(&self) -> String {
        match self.status {
            BenchStatus::Ok => format!(
                "{},{},{},ok,{:.3},{:.2},{},{}",
                self.input_len,
                self.batch,
                self.group_size,
                self.ttft_ms,
                self.decode_tok_per_s,
                self.kv_cache_bytes,
                self.peak_alloc_bytes
            ),
            BenchStatus::Oom => format!(
                "{},{},{},oom,,,,",
                self.input_len, self.batch, self.group_size
            ),
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Deterministic synthetic prompt that avoids the special token ids.
fn synth_prompt(len: usize, vocab: usize, salt: usize) -> Vec<u32> {
    (0..len)
        .map(|i| ((i * 31 + salt * 17 + 7) % (vocab - 3) + 3) as u32)
        .collect()
}

// ── Benchmark sweep ─────────────────────────────────────────────────────────

/// Run the full grid. Rows stream to `on_record` as they finish and are also
/// returned. A grid point that would exceed `mem_cap_bytes` (projected cache
/// plus currently live tensor bytes, checked again during decode) emits an
/// `oom` row and the sweep continues.
pub fn bench_sweep<F: Scalar>(
    model: &Model<F>,
    spec: &SweepSpec,
    mut on_record: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>, BenchError> {
    spec.validate()?;
    let cfg = model.config;
    for &len in &spec.lengths {
        if len + spec.decode_tokens > cfg.max_seq_len {
            return Err(BenchError::LengthExceedsModel {
                len,
                max: cfg.max_seq_len,
            });
        }
    }
    let mut rows = Vec::new();
    for &len in &spec.lengths {
        for &batch in &spec.batches {
            for &g in &spec.group_sizes {
                let record = bench_point(model, spec, len, batch, g)?;
                on_record(&record);
                rows.push(record);
            }
        }
    }
    Ok(rows)
}

fn bench_point<F: Scalar>(
    model: &Model<F>,
    spec: &SweepSpec,
    len: usize,
    batch: usize,
    g: usize,
) -> Result<BenchRecord, BenchError> {
    let cfg = model.config;
    let strategy = SharingStrategy::keep_every_k(cfg.n_layers, g)?;
    let oom_row = || BenchRecord {
        input_len: len,
        batch,
        group_size: g,
        status: BenchStatus::Oom,
        ttft_ms: 0.0,
        decode_tok_per_s: 0.0,
        kv_cache_bytes: 0,
        peak_alloc_bytes: 0,
    };

    let projected =
        batch as u64 * strategy_footprint(&cfg, &strategy, len + spec.decode_tokens);
    if let Some(cap) = spec.mem_cap_bytes {
        if projected + mem::live_bytes() > cap {
            return Ok(oom_row());
        }
    }

    let prompts: Vec<Vec<u32>> = (0..batch)
        .map(|b| synth_prompt(len, cfg.vocab_size, b))
        .collect();

    // warmup: touch the whole code path with a short decode budget
    for _ in 0..spec.warmup_iters {
        let mut stores = make_stores(&cfg, &strategy, batch)?;
        for (store, prompt) in stores.iter_mut().zip(&prompts) {
            prefill(model, prompt, store)?;
        }
        for _ in 0..spec.decode_tokens.min(8) {
            for store in stores.iter_mut() {
                decode_step(model, 3, store)?;
            }
        }
    }

    mem::reset_peak();
    let mut ttfts = Vec::with_capacity(spec.repeats);
    let mut throughputs = Vec::with_capacity(spec.repeats);
    let mut cache_bytes = 0u64;
    for _ in 0..spec.repeats {
        let mut stores = make_stores(&cfg, &strategy, batch)?;
        let mut logits: Vec<Vec<F>> = Vec::with_capacity(batch);
        let t0 = Instant::now();
        for (store, prompt) in stores.iter_mut().zip(&prompts) {
            logits.push(prefill(model, prompt, store)?);
        }
        ttfts.push(t0.elapsed().as_secs_f64() * 1e3);

        let t1 = Instant::now();
        for _ in 0..spec.decode_tokens {
            for (store, l) in stores.iter_mut().zip(logits.iter_mut()) {
                let next = crate::cache::argmax(l);
                *l = decode_step(model, next, store)?;
            }
            if let Some(cap) = spec.mem_cap_bytes {
                let live_cache: u64 = stores.iter().map(CacheStore::logical_bytes).sum();
                if live_cache.max(mem::live_bytes()) > cap {
                    return Ok(oom_row());
                }
            }
        }
        let decode_secs = t1.elapsed().as_secs_f64();
        throughputs.push(batch as f64 * spec.decode_tokens as f64 / decode_secs);
        cache_bytes = stores.iter().map(CacheStore::logical_bytes).sum();
    }

    Ok(BenchRecord {
        input_len: len,
        batch,
        group_size: g,
        status: BenchStatus::Ok,
        ttft_ms: median(ttfts),
        decode_tok_per_s: median(throughputs),
        kv_cache_bytes: cache_bytes,
        peak_alloc_bytes: mem::peak_bytes(),
    })
}

fn make_stores<F: Scalar>(
    cfg: &crate::model::ModelConfig,
    strategy: &SharingStrategy,
    batch: usize,
) -> Result<Vec<CacheStore<F>>, BenchError> {
    (0..batch)
        .map(|_| CacheStore::new(*cfg, strategy.clone()).map_err(BenchError::from))
        .collect()
}

// ── Retention sweep ─────────────────────────────────────────────────────────

/// One (checkpoint, strategy) evaluation row.
#[derive(Debug, Clone)]
pub struct RetentionRow {
    pub checkpoint: String,
    pub mode: String,
    pub strategy: String,
    pub retention_pct: f64,
    pub accuracy: f64,
    pub n_examples: usize,
    pub kv_cache_bytes_per_token: u64,
}

impl RetentionRow {
    pub const CSV_HEADER: &'static str =
        "checkpoint,mode,strategy,retention_pct,accuracy,n_examples";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.4},{}",
            self.checkpoint,
            self.mode,
            self.strategy,
            self.retention_pct,
            self.accuracy,
            self.n_examples
        )
    }
}

/// Exact-match accuracy for every (checkpoint, strategy) combination, in
/// long format for plotting degradation curves.
pub fn retention_sweep<F: Scalar>(
    checkpoints: &[(String, Model<F>, Option<String>)],
    strategies: &[SharingStrategy],
    examples: &[RetrievalExample],
) -> Result<Vec<RetentionRow>, BenchError> {
    let mut rows = Vec::new();
    for (label, model, mode) in checkpoints {
        for (i, strategy) in strategies.iter().enumerate() {
            if strategy.n_layers() != model.config.n_layers {
                return Err(BenchError::StrategyLayers {
                    index: i,
                    strategy: strategy.n_layers(),
                    model: model.config.n_layers,
                });
            }
            let accuracy = exact_match_eval(model, strategy, examples)?;
            rows.push(RetentionRow {
                checkpoint: label.clone(),
                mode: mode.clone().unwrap_or_else(|| "unknown".into()),
                strategy: strategy.label(),
                retention_pct: strategy.retention_fraction() * 100.0,
                accuracy,
                n_examples: examples.len(),
                kv_cache_bytes_per_token: crate::cache::per_layer_token_bytes(&model.config)
                    * strategy.retained_count() as u64,
            });
        }
    }
    Ok(rows)
}

// ── Plot data ───────────────────────────────────────────────────────────────

/// Space-separated .dat rendering (gnuplot-friendly): a `#` header line, then
/// one row per record with the same columns as the CSV.
pub fn to_dat(csv_header: &str, csv_rows: &[String]) -> String {
    let mut out = format!("# {}\n", csv_header.replace(',', " "));
    for row in csv_rows {
        let cells: Vec<&str> = row.split(',').collect();
        let printed: Vec<&str> = cells
            .iter()
            .map(|c| if c.is_empty() { "nan" } else { *c })
            .collect();
        out.push_str(&printed.join(" "));
        out.push('\n');
    }
    out
}
