use serde::{Deserialize, Serialize};

use crate::error::{KnError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    Cosine {
        total: u64,
    },
    /// Halve once each milestone is reached.
    StepHalving {
        milestones: Vec<u64>,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Cosine { total: 0 } => Err(KnError::Config("cosine schedule needs a positive length".into())),
            Schedule::StepHalving { milestones } if milestones.windows(2).any(|w| w[0] >= w[1]) => {
                Err(KnError::Config(format!("milestones must be strictly increasing: {milestones:?}")))
            }
            _ => Ok(()),
        }
    }
}

/// Rate at `step`; cosine clamps steps past the end.
pub fn lr_at(spec: &Schedule, step: u64, base_lr: f64) -> f64 {
    match spec {
        Schedule::Constant => base_lr,
        Schedule::Cosine { total } => {
            let t = step.min(*total) as f64 / *total as f64;
            base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
        }
        Schedule::StepHalving { milestones } => {
            let passed = milestones.iter().filter(|&&m| step >= m).count();
            base_lr / 2f64.powi(passed as i32)
        }
    }
}
