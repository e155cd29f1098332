use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub d_model: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
}

fn default_warmup() -> u64 {
    4000
}

impl LrSchedule {
    pub fn new(d_model: usize, warmup_steps: u64) -> Self {
        LrSchedule { d_model, warmup_steps }
    }
}

/// `d^-0.5 * min(step^-0.5, step * warmup^-1.5)`, steps counted from 1.
pub fn warmup_lr(step: u64, schedule: &LrSchedule) -> Result<f64, NnError> {
    if step == 0 {
        return Err(NnError::InvalidArgument("learning-rate step must be at least 1".into()));
    }
    if schedule.d_model == 0 || schedule.warmup_steps == 0 {
        return Err(NnError::InvalidArgument("schedule needs positive d_model and warmup_steps".into()));
    }
    let s = step as f64;
    let w = schedule.warmup_steps as f64;
    Ok((schedule.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}
