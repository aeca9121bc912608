//! Training loop: seeded routing, AdamW, gradient clipping, warmup + decay,
//! TrainRecord logging, and rolling checkpoints.
//!
//! Reproducibility comes from three independent ChaCha streams derived from
//! one seed: data sampling, routing plans, and (outside this module) weight
//! initialization. Routing draws never perturb data order, which is why an
//! `Rcla { p: 1.0 }` run is bit-identical to `Baseline` under the same seed.

mod optim;
mod schedule;

pub use optim::{adamw_step, clip_gradients, AdamState, OptimError, ADAM_EPS};
pub use schedule::{lr_at, DecaySchedule};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::tokenizer::PAD;
use crate::graph::Graph;
use crate::model::{save_checkpoint, CheckpointError, Model, ModelError};
use crate::routing::{plan_for_mode, RoutingError, RoutingPlan, TrainingRoutingMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// RNG stream ids carved out of the master seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const DATA: u64 = 1;
    pub const ROUTING: u64 = 2;
}

/// Seeded generator for one of the named streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error("step {step}: forward failed: {source}")]
    Forward { step: usize, source: ModelError },
    #[error("step {step}: non-finite loss; last-good checkpoint retained")]
    NonFiniteLoss { step: usize },
    #[error("step {step}: {source}")]
    Optim {
        step: usize,
        source: OptimError,
    },
    #[error("step {step}: batch source produced no train targets")]
    EmptyBatch { step: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl TrainError {
    /// True when the failure is numerical instability (non-finite values)
    /// rather than bad configuration or I/O. The CLI maps this to its
    /// aborted-training exit code.
    pub fn is_instability(&self) -> bool {
        use crate::graph::GraphError;
        matches!(
            self,
            TrainError::NonFiniteLoss { .. }
                | TrainError::Optim {
                    source: OptimError::NonFiniteGrad { .. },
                    ..
                }
                | TrainError::Forward {
                    source: ModelError::Graph(GraphError::NonFinite { .. }),
                    ..
                }
        )
    }
}

/// Everything a training run needs besides the model and the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainingRoutingMode,
    pub lr_peak: f64,
    pub warmup_frac: f64,
    pub decay: DecaySchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many steps; 0 = only at the end.
    pub eval_every: usize,
}

impl TrainConfig {
    /// Pre-training shape: β2 = 0.99, 5% linear warmup, cosine decay,
    /// weight decay 0.1, clip norm 0.1.
    pub fn pretrain(mode: TrainingRoutingMode, steps: usize, seed: u64) -> Self {
        TrainConfig {
            mode,
            lr_peak: 1e-3,
            warmup_frac: 0.05,
            decay: DecaySchedule::Cosine,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.1,
            clip_norm: 0.1,
            batch_size: 8,
            steps,
            seed,
            eval_every: 0,
        }
    }

    /// Fine-tuning shape: β2 = 0.95, 1.5% warmup, linear decay to zero.
    pub fn finetune(mode: TrainingRoutingMode, steps: usize, seed: u64) -> Self {
        TrainConfig {
            beta2: 0.95,
            warmup_frac: 0.015,
            decay: DecaySchedule::Linear,
            ..Self::pretrain(mode, steps, seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.mode
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))?;
        if self.lr_peak <= 0.0 {
            return Err(TrainError::BadConfig("lr_peak must be positive".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(TrainError::BadConfig("clip_norm must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(TrainError::BadConfig("warmup_frac must lie in [0,1]".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(TrainError::BadConfig(
                "steps and batch_size must be at least 1".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!("{name} must lie in (0,1)")));
            }
        }
        Ok(())
    }
}

/// One logged step. `eval_loss` is present on eval steps only.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub routing_digest: u64,
    pub eval_loss: Option<f64>,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "step,train_loss,eval_loss,lr,routing_digest";

    pub fn to_csv_row(&self) -> String {
        let eval = self
            .eval_loss
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        format!(
            "{},{:.6},{},{:.8e},{:016x}",
            self.step, self.train_loss, eval, self.lr, self.routing_digest
        )
    }
}

/// Supplies training batches and a fixed eval split as `(input, target)`
/// token rows. Target positions equal to PAD are excluded from the loss.
pub trait BatchSource {
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<u32>, Vec<u32>)>;
    fn eval_set(&self) -> &[(Vec<u32>, Vec<u32>)];
}

/// Mean masked cross entropy of the model on a fixed set, under the given
/// routing (identity = full cache, the default evaluation condition).
pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    set: &[(Vec<u32>, Vec<u32>)],
    routing: &RoutingPlan,
) -> Result<f64, ModelError> {
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for (input, target) in set {
        let mut g = Graph::new();
        let params = model.bind(&mut g, false);
        let logits = model.forward_graph(&mut g, &params, input, routing)?;
        let (loss, n) = g.cross_entropy_sum(logits, target, PAD)?;
        loss_sum += g.value(loss).item().as_f64();
        count += n;
    }
    Ok(loss_sum / count.max(1) as f64)
}

/// Run the training loop, mutating `model` in place.
///
/// Per step: draw one routing plan for the batch, accumulate gradients over
/// the batch sequences, clip to `clip_norm`, and apply AdamW at the scheduled
/// rate. Evaluation (identity routing) runs every `eval_every` steps and at
/// the end; when `checkpoint_path` is set, the checkpoint on disk is updated
/// at those same points, so an abort always leaves the last good weights
/// behind.
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    data: &mut dyn BatchSource,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>, TrainError> {
    cfg.validate()?;
    let n_layers = model.config.n_layers;
    let mut data_rng = stream_rng(cfg.seed, streams::DATA);
    let mut routing_rng = stream_rng(cfg.seed, streams::ROUTING);
    let shapes: Vec<Vec<usize>> = model
        .named_params()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(&shapes);
    let mut records = Vec::with_capacity(cfg.steps);
    let mode_label = cfg.mode.label();
    if let Some(path) = checkpoint_path {
        save_checkpoint(path, model, Some(&mode_label))?;
    }

    for step in 0..cfg.steps {
        let plan = plan_for_mode(cfg.mode, n_layers, &mut routing_rng)?;
        let batch = data.next_batch(cfg.batch_size, &mut data_rng);

        let mut grad_acc: Vec<Tensor<F>> =
            shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        let mut loss_sum = 0.0f64;
        let mut token_count = 0usize;
        for (input, target) in &batch {
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let logits = model
                .forward_graph(&mut g, &params, input, &plan)
                .map_err(|source| TrainError::Forward { step, source })?;
            let (loss, n) = g
                .cross_entropy_sum(logits, target, PAD)
                .map_err(|source| TrainError::Forward {
                    step,
                    source: source.into(),
                })?;
            loss_sum += g.value(loss).item().as_f64();
            token_count += n;
            let mut grads = g.backward(loss).map_err(|source| TrainError::Forward {
                step,
                source: source.into(),
            })?;
            for (acc, id) in grad_acc.iter_mut().zip(params.ordered_ids()) {
                if let Some(grad) = grads.take(id) {
                    acc.add_assign(&grad).expect("aligned shapes");
                }
            }
        }
        if token_count == 0 {
            return Err(TrainError::EmptyBatch { step });
        }
        let train_loss = loss_sum / token_count as f64;
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        let inv_count = F::from_f64(1.0 / token_count as f64);
        for gacc in grad_acc.iter_mut() {
            gacc.scale_assign(inv_count);
        }
        clip_gradients(&mut grad_acc, cfg.clip_norm);
        let lr = lr_at(step, cfg.steps, cfg.lr_peak, cfg.warmup_frac, cfg.decay);
        let mut params = model.named_params_mut();
        adamw_step(
            &mut params,
            &grad_acc,
            &mut adam,
            lr,
            cfg.beta1,
            cfg.beta2,
            cfg.weight_decay,
        )
        .map_err(|source| TrainError::Optim { step, source })?;
        drop(params);

        let eval_point = (cfg.eval_every != 0 && (step + 1) % cfg.eval_every == 0)
            || step + 1 == cfg.steps;
        let eval_loss = if eval_point && !data.eval_set().is_empty() {
            let loss = evaluate(model, data.eval_set(), &RoutingPlan::identity(n_layers))
                .map_err(|source| TrainError::Forward { step, source })?;
            if let Some(path) = checkpoint_path {
                save_checkpoint(path, model, Some(&mode_label))?;
            }
            Some(loss)
        } else {
            None
        };

        let record = TrainRecord {
            step,
            train_loss,
            lr,
            routing_digest: plan.digest(),
            eval_loss,
        };
        on_record(&record);
        records.push(record);
    }
    if let Some(path) = checkpoint_path {
        save_checkpoint(path, model, Some(&mode_label))?;
    }
    Ok(records)
}
