//! Learning-rate schedules: linear warmup into cosine or linear decay.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySchedule {
    /// Pre-training recipe: cosine to zero.
    Cosine,
    /// Fine-tuning recipe: linear to zero.
    Linear,
}

/// Learning rate at `step` (0-based) out of `steps` total.
///
/// Warmup ramps linearly over the first `round(warmup_frac · steps)` steps
/// with `lr(0) = lr_peak / warmup_steps`, reaching `lr_peak` exactly on the
/// last warmup step. The remainder decays toward zero.
pub fn lr_at(step: usize, steps: usize, lr_peak: f64, warmup_frac: f64, decay: DecaySchedule) -> f64 {
    debug_assert!(step < steps);
    let warmup_steps = (warmup_frac * steps as f64).round() as usize;
    if step < warmup_steps {
        return lr_peak * (step + 1) as f64 / warmup_steps as f64;
    }
    let span = steps - warmup_steps;
    if span == 0 {
        return lr_peak;
    }
    let tau = (step - warmup_steps) as f64 / span as f64;
    match decay {
        DecaySchedule::Cosine => lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * tau).cos()),
        DecaySchedule::Linear => lr_peak * (1.0 - tau),
    }
}
