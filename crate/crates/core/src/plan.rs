use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSequence, StateTrajectory};

/// Outcome of a single planning call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub controls: ControlSequence,
    /// Shielded state trajectory the planner reports.
    pub states: StateTrajectory,
    /// Reward recomputed on `states`.
    pub reward: f64,
    /// Rows the shield replaced while producing `states`.
    pub interventions: usize,
    pub wall_time_ms: f64,
    /// Best candidate reward per denoising step, coarse to fine.
    pub reward_trace: Vec<f64>,
}
