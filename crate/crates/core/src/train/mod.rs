//! Loss, optimizer, learning-rate schedule, weight averaging and the epoch
//! loop.

mod optim;
mod presets;
mod run;
mod schedule;
mod swa;

pub use crate::autograd::BCE_CLAMP;
pub use optim::{sgd_momentum_step, SgdState};
pub use presets::{Preset, PRESETS};
pub use run::{
    evaluate_loss, train_loop, EpochRecord, TrainConfig, TrainData, TrainOutcome, BEST_CHECKPOINT, HISTORY_FILE,
    LAST_CHECKPOINT, PREFETCH, SWA_CHECKPOINT,
};
pub use schedule::{onecycle_lr, OneCycleConfig, Schedule};
pub use swa::SwaState;

use crate::error::{Error, Result};

/// Mean binary cross-entropy with probabilities clamped to
/// `[BCE_CLAMP, 1 − BCE_CLAMP]`.
pub fn bce(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::InvalidArgument(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
        }
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / probs.len() as f64)
}
