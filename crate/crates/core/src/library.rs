//! In-memory trajectory library: the dataset of (controls, states, reward)
//! records that replaces the dynamics model for data-driven planning.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSequence, StateTrajectory, SystemSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub controls: ControlSequence,
    pub states: StateTrajectory,
    pub reward: f64,
}

impl TrajectoryRecord {
    pub fn initial_state(&self) -> &[f64] {
        self.states.initial()
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.states.terminal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RewardStats {
    pub fn from_rewards(rewards: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0usize;
        let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for r in rewards {
            n += 1;
            sum += r;
            min = min.min(r);
            max = max.max(r);
        }
        (n > 0).then(|| RewardStats {
            mean: sum / n as f64,
            min,
            max,
        })
    }

    /// `(r - r̄) / (r_max - r_min)`, or 0 when every reward is equal.
    pub fn normalize(&self, r: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (r - self.mean) / span
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub base_seed: u64,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLibrary {
    pub system: SystemSpec,
    records: Vec<TrajectoryRecord>,
    reward_stats: RewardStats,
    pub provenance: Provenance,
}

impl TrajectoryLibrary {
    pub fn new(system: SystemSpec, records: Vec<TrajectoryRecord>, provenance: Provenance) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dimension("library must contain at least one record".into()));
        }
        for (j, r) in records.iter().enumerate() {
            if r.controls.n_u() != system.n_u || r.controls.horizon() != system.horizon {
                return Err(Error::Dimension(format!("record {j}: controls are not H × n_u")));
            }
            if r.states.n_x() != system.n_x || r.states.n_rows() != system.horizon + 1 {
                return Err(Error::Dimension(format!("record {j}: states are not (H+1) × n_x")));
            }
            if !r.reward.is_finite() {
                return Err(Error::Numeric(format!("record {j}: reward is not finite")));
            }
        }
        let reward_stats = RewardStats::from_rewards(records.iter().map(|r| r.reward))
            .expect("non-empty library");
        Ok(Self {
            system,
            records,
            reward_stats,
            provenance,
        })
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn reward_stats(&self) -> RewardStats {
        self.reward_stats
    }

    pub fn normalized_reward(&self, j: usize) -> f64 {
        self.reward_stats.normalize(self.records[j].reward)
    }
}
