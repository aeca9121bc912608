//! KV source selection: sharing strategies, the nearest-leader map, and the
//! stochastic routing samplers used during training.
//!
//! Layer indices are 0-based throughout. Layer 0 has no predecessors and
//! always self-attends; a [`SharingStrategy`] must retain it so that every
//! layer has a leader at or below its own depth.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("sharing strategy must retain layer 0")]
    MissingLayerZero,
    #[error("sharing strategy must retain at least one layer")]
    EmptyRetained,
    #[error("retained index {index} out of range for {n_layers} layers")]
    IndexOutOfRange { index: usize, n_layers: usize },
    #[error("group size must be at least 1, got {0}")]
    BadGroupSize(usize),
    #[error("probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("routing source {src} for layer {layer} violates source ≤ layer")]
    BadPlanSource { layer: usize, src: usize },
    #[error("routing plan has {plan} entries for {n_layers} layers")]
    PlanLength { plan: usize, n_layers: usize },
}

// ── Sharing strategies ──────────────────────────────────────────────────────

/// The set of layers that keep a KV cache at inference. All other layers read
/// the nearest retained predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharingStrategy {
    retained: Vec<usize>, // sorted, deduplicated, starts with 0
    n_layers: usize,
}

impl SharingStrategy {
    pub fn new(
        retained: impl IntoIterator<Item = usize>,
        n_layers: usize,
    ) -> Result<Self, RoutingError> {
        let mut retained: Vec<usize> = retained.into_iter().collect();
        retained.sort_unstable();
        retained.dedup();
        if retained.is_empty() {
            return Err(RoutingError::EmptyRetained);
        }
        if retained[0] != 0 {
            return Err(RoutingError::MissingLayerZero);
        }
        if let Some(&last) = retained.last() {
            if last >= n_layers {
                return Err(RoutingError::IndexOutOfRange {
                    index: last,
                    n_layers,
                });
            }
        }
        Ok(SharingStrategy { retained, n_layers })
    }

    /// Every layer keeps its own cache.
    pub fn all(n_layers: usize) -> Self {
        SharingStrategy {
            retained: (0..n_layers).collect(),
            n_layers,
        }
    }

    /// Only layer 0 keeps a cache.
    pub fn single(n_layers: usize) -> Self {
        SharingStrategy {
            retained: vec![0],
            n_layers,
        }
    }

    /// Retain layers `{0, k, 2k, …}`: groups of `k` consecutive layers share
    /// the group leader's cache (the last group may be short).
    pub fn keep_every_k(n_layers: usize, k: usize) -> Result<Self, RoutingError> {
        if k == 0 {
            return Err(RoutingError::BadGroupSize(k));
        }
        Ok(SharingStrategy {
            retained: (0..n_layers).step_by(k).collect(),
            n_layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn retained_count(&self) -> usize {
        self.retained.len()
    }

    pub fn retention_fraction(&self) -> f64 {
        self.retained.len() as f64 / self.n_layers as f64
    }

    pub fn is_leader(&self, layer: usize) -> bool {
        self.retained.binary_search(&layer).is_ok()
    }

    /// Nearest retained layer at or below `layer`: `layer` itself when
    /// retained, otherwise the greatest retained index below it. Total
    /// because layer 0 is always retained.
    pub fn map_source(&self, layer: usize) -> usize {
        debug_assert!(layer < self.n_layers);
        match self.retained.binary_search(&layer) {
            Ok(_) => layer,
            Err(insert_at) => self.retained[insert_at - 1],
        }
    }

    /// The deterministic routing plan this strategy induces.
    pub fn to_plan(&self) -> RoutingPlan {
        RoutingPlan {
            source: (0..self.n_layers).map(|l| self.map_source(l)).collect(),
        }
    }

    /// Serialize as a JSON array of retained indices, e.g. `[0,4,8]`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.retained).expect("vec of usize serializes")
    }

    /// Parse a JSON array of retained indices.
    pub fn from_json(json: &str, n_layers: usize) -> Result<Self, RoutingError> {
        let retained: Vec<usize> =
            serde_json::from_str(json).map_err(|_| RoutingError::EmptyRetained)?;
        SharingStrategy::new(retained, n_layers)
    }

    /// Short label for CSV/report columns: `all`, `every4`, or `set[0-3-5]`.
    pub fn label(&self) -> String {
        if self.retained.len() == self.n_layers {
            return "all".to_string();
        }
        for k in 2..=self.n_layers {
            let candidate: Vec<usize> = (0..self.n_layers).step_by(k).collect();
            if candidate == self.retained {
                return format!("every{k}");
            }
        }
        let ids: Vec<String> = self.retained.iter().map(|i| i.to_string()).collect();
        format!("set[{}]", ids.join("-"))
    }
}

// ── Routing plans ───────────────────────────────────────────────────────────

/// Per-layer KV source for one training forward pass: `source[l] == l` means
/// self-attention, anything smaller is cross-layer attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingPlan {
    source: Vec<usize>,
}

impl RoutingPlan {
    pub fn identity(n_layers: usize) -> Self {
        RoutingPlan {
            source: (0..n_layers).collect(),
        }
    }

    pub fn from_sources(source: Vec<usize>) -> Result<Self, RoutingError> {
        for (layer, &src) in source.iter().enumerate() {
            if src > layer {
                return Err(RoutingError::BadPlanSource { layer, src });
            }
        }
        Ok(RoutingPlan { source })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self, layer: usize) -> usize {
        self.source[layer]
    }

    pub fn sources(&self) -> &[usize] {
        &self.source
    }

    pub fn is_identity(&self) -> bool {
        self.source.iter().enumerate().all(|(l, &s)| s == l)
    }

    /// FNV-1a over the source array; logged per training step so two runs can
    /// be compared plan-for-plan.
    pub fn digest(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for &s in &self.source {
            for byte in (s as u64).to_le_bytes() {
                hash ^= u64::from(byte);
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }
}

// ── Training routing modes ──────────────────────────────────────────────────

/// Which routing distribution the trainer draws plans from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TrainingRoutingMode {
    /// Plain self-attention at every layer.
    Baseline,
    /// Per layer: self-attend with probability `p`, otherwise read a
    /// uniformly random preceding layer.
    Rcla { p: f64 },
    /// Deterministic sharing in groups of `k`.
    ClaAt { k: usize },
    /// Per layer: self-attend with probability `p`, otherwise read the fixed
    /// every-`k` leader.
    RdClaAt { k: usize, p: f64 },
}

impl TrainingRoutingMode {
    pub fn validate(&self) -> Result<(), RoutingError> {
        match *self {
            TrainingRoutingMode::Baseline => Ok(()),
            TrainingRoutingMode::Rcla { p } => check_probability(p),
            TrainingRoutingMode::ClaAt { k } => check_group(k),
            TrainingRoutingMode::RdClaAt { k, p } => {
                check_group(k)?;
                check_probability(p)
            }
        }
    }

    /// Label used in checkpoints and CSV rows.
    pub fn label(&self) -> String {
        match *self {
            TrainingRoutingMode::Baseline => "baseline".to_string(),
            TrainingRoutingMode::Rcla { p } => format!("rcla(p={p})"),
            TrainingRoutingMode::ClaAt { k } => format!("cla@{k}"),
            TrainingRoutingMode::RdClaAt { k, p } => format!("rd-cla@{k}(p={p})"),
        }
    }
}

fn check_probability(p: f64) -> Result<(), RoutingError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(RoutingError::BadProbability(p))
    }
}

fn check_group(k: usize) -> Result<(), RoutingError> {
    if k >= 1 {
        Ok(())
    } else {
        Err(RoutingError::BadGroupSize(k))
    }
}

// ── Samplers ────────────────────────────────────────────────────────────────

/// Fully random routing: layer 0 always self-attends; every later layer
/// self-attends with probability `p` and otherwise picks a source uniformly
/// among all of its predecessors.
pub fn sample_rcla(n_layers: usize, p: f64, rng: &mut impl Rng) -> Result<RoutingPlan, RoutingError> {
    check_probability(p)?;
    let mut source = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        if l == 0 || rng.gen_bool(p) {
            source.push(l);
        } else {
            source.push(rng.gen_range(0..l));
        }
    }
    Ok(RoutingPlan { source })
}

/// Random-deterministic routing: like [`sample_rcla`], but the cross-layer
/// branch reads the fixed every-`k` leader instead of a random predecessor.
pub fn sample_rdcla(
    n_layers: usize,
    k: usize,
    p: f64,
    rng: &mut impl Rng,
) -> Result<RoutingPlan, RoutingError> {
    check_probability(p)?;
    let strategy = SharingStrategy::keep_every_k(n_layers, k)?;
    let mut source = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        if l == 0 || rng.gen_bool(p) {
            source.push(l);
        } else {
            source.push(strategy.map_source(l));
        }
    }
    Ok(RoutingPlan { source })
}

/// Draw one plan for a training step under the given mode.
pub fn plan_for_mode(
    mode: TrainingRoutingMode,
    n_layers: usize,
    rng: &mut impl Rng,
) -> Result<RoutingPlan, RoutingError> {
    match mode {
        TrainingRoutingMode::Baseline => Ok(RoutingPlan::identity(n_layers)),
        TrainingRoutingMode::Rcla { p } => sample_rcla(n_layers, p, rng),
        TrainingRoutingMode::ClaAt { k } => {
            Ok(SharingStrategy::keep_every_k(n_layers, k)?.to_plan())
        }
        TrainingRoutingMode::RdClaAt { k, p } => sample_rdcla(n_layers, k, p, rng),
    }
}
