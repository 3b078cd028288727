use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycleConfig {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps < 2
            || !(self.max_lr > 0.0)
            || !(self.pct_start > 0.0 && self.pct_start < 1.0)
            || !(self.div_factor > 0.0)
            || !(self.final_div_factor > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid OneCycle configuration {self:?}")));
        }
        Ok(())
    }

    /// Step at which the rate peaks: `round(pct_start · total_steps)`, kept
    /// strictly inside the run.
    pub fn peak_step(&self) -> usize {
        let p = (self.pct_start * self.total_steps as f64).round() as usize;
        p.clamp(1, self.total_steps - 1)
    }
}

/// Cosine interpolation from `start` (t = 0) to `end` (t = 1).
fn cosine(start: f64, end: f64, t: f64) -> f64 {
    if t <= 0.0 {
        start
    } else if t >= 1.0 {
        end
    } else {
        end + (start - end) * (1.0 + (PI * t).cos()) / 2.0
    }
}

/// Learning rate at `step`: a cosine rise from `max_lr / div_factor` to
/// `max_lr` at the peak step, then a cosine fall to `max_lr / final_div_factor`
/// at the last step.
pub fn onecycle_lr(step: usize, cfg: &OneCycleConfig) -> Result<f64> {
    cfg.validate()?;
    if step >= cfg.total_steps {
        return Err(Error::InvalidArgument(format!("step {step} outside 0..{}", cfg.total_steps)));
    }
    let peak = cfg.peak_step();
    let initial = cfg.max_lr / cfg.div_factor;
    let last = cfg.max_lr / cfg.final_div_factor;
    Ok(if step <= peak {
        cosine(initial, cfg.max_lr, step as f64 / peak as f64)
    } else {
        let span = (cfg.total_steps - 1 - peak) as f64;
        cosine(cfg.max_lr, last, (step - peak) as f64 / span)
    })
}

/// Learning-rate policy of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant { lr: f64 },
    OneCycle { max_lr: f64, pct_start: f64, div_factor: f64, final_div_factor: f64 },
}

impl Schedule {
    pub fn lr(&self, step: usize, total_steps: usize) -> Result<f64> {
        match *self {
            Schedule::Constant { lr } => Ok(lr),
            Schedule::OneCycle { max_lr, pct_start, div_factor, final_div_factor } => {
                onecycle_lr(step, &OneCycleConfig { max_lr, total_steps, pct_start, div_factor, final_div_factor })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OneCycleConfig {
        OneCycleConfig { max_lr: 0.05, total_steps: 1000, pct_start: 0.3, div_factor: 500.0, final_div_factor: 500.0 }
    }

    #[test]
    fn endpoints() {
        let c = cfg();
        assert_eq!(onecycle_lr(0, &c).unwrap(), 0.05 / 500.0);
        assert_eq!(onecycle_lr(300, &c).unwrap(), 0.05);
        assert!((onecycle_lr(999, &c).unwrap() - 0.05 / 500.0).abs() < 1e-12);
        assert!(onecycle_lr(1000, &c).is_err());
    }

    #[test]
    fn continuous_at_peak() {
        let c = cfg();
        let at = onecycle_lr(300, &c).unwrap();
        let before = onecycle_lr(299, &c).unwrap();
        let after = onecycle_lr(301, &c).unwrap();
        assert!(before < at && after < at);
        assert!((at - before) < 1e-5 && (at - after) < 1e-5);
    }
}
