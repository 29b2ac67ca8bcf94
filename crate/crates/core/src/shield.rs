//! Geometric safety shield: any state that leaves the safe set is replaced
//! by the last safe state. Applies equally to dynamics rollouts and to state
//! trajectories estimated from data.

use crate::dynamics::{ControlSequence, StateTrajectory, SystemSpec};
use crate::error::{Error, Result};
use crate::parkenv::{ParkingScene, RewardAccumulator};

/// A shielded trajectory and the number of rows the shield replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct Shielded {
    pub states: StateTrajectory,
    pub interventions: usize,
}

fn require_safe_start(x0: &[f64], scene: &ParkingScene, system: &SystemSpec) -> Result<()> {
    if !scene.is_safe(x0, system) {
        return Err(Error::Precondition("initial state is outside the safe set".into()));
    }
    Ok(())
}

/// Post-hoc shield over a complete state trajectory.
pub fn shield_states(states: &StateTrajectory, scene: &ParkingScene, system: &SystemSpec) -> Result<Shielded> {
    if states.n_x() != system.n_x {
        return Err(Error::Dimension(format!(
            "trajectory width {} != {}",
            states.n_x(),
            system.n_x
        )));
    }
    require_safe_start(states.initial(), scene, system)?;
    let mut out = states.clone();
    let mut interventions = 0;
    for t in 1..states.n_rows() {
        if !scene.is_safe(states.row(t), system) {
            let (prev, cur) = out.values_mut().split_at_mut(t * system.n_x);
            cur[..system.n_x].copy_from_slice(&prev[(t - 1) * system.n_x..]);
            interventions += 1;
        }
    }
    Ok(Shielded {
        states: out,
        interventions,
    })
}

/// Post-hoc shield fused with the reward; avoids materializing the output.
pub(crate) fn shielded_reward_of(states: &StateTrajectory, scene: &ParkingScene, system: &SystemSpec) -> (f64, usize) {
    let mut acc = RewardAccumulator::default();
    let mut last_safe = states.initial();
    let mut interventions = 0;
    for t in 1..states.n_rows() {
        let row = states.row(t);
        if scene.is_safe(row, system) {
            last_safe = row;
        } else {
            interventions += 1;
        }
        acc.push(scene.goal_score(last_safe));
    }
    (acc.finish(), interventions)
}

/// Interleaved shield: each step integrates from the current (possibly
/// reverted) state, and unsafe successors are discarded.
pub fn shielded_rollout(
    system: &SystemSpec,
    x0: &[f64],
    controls: &ControlSequence,
    scene: &ParkingScene,
) -> Result<Shielded> {
    system.check_controls(controls)?;
    if x0.len() != system.n_x {
        return Err(Error::Dimension(format!("initial state has {} entries", x0.len())));
    }
    if controls.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("controls are not finite".into()));
    }
    require_safe_start(x0, scene, system)?;
    let n_x = system.n_x;
    let h = controls.horizon();
    let mut values = vec![0.0; (h + 1) * n_x];
    values[..n_x].copy_from_slice(x0);
    let mut interventions = 0;
    for t in 0..h {
        let (prev, next) = values.split_at_mut((t + 1) * n_x);
        let cur = &prev[t * n_x..];
        let next = &mut next[..n_x];
        system.step_unchecked(cur, controls.row(t), next);
        if !scene.is_safe(next, system) {
            next.copy_from_slice(cur);
            interventions += 1;
        }
    }
    system.count_oracle(h as u64);
    Ok(Shielded {
        states: StateTrajectory::from_flat(n_x, values),
        interventions,
    })
}

/// Reward of a shielded (or plain) rollout without storing the trajectory.
///
/// Bit-identical to `reward(&shielded_rollout(..).states, scene)`.
pub(crate) fn rollout_reward(
    system: &SystemSpec,
    x0: &[f64],
    controls: &[f64],
    scene: &ParkingScene,
    shielded: bool,
) -> f64 {
    let n_u = system.n_u;
    let mut cur = [0.0f64; 8];
    let mut next = [0.0f64; 8];
    let n_x = system.n_x;
    cur[..n_x].copy_from_slice(x0);
    let mut acc = RewardAccumulator::default();
    for u in controls.chunks(n_u) {
        system.step_unchecked(&cur[..n_x], u, &mut next[..n_x]);
        if !shielded || scene.is_safe(&next[..n_x], system) {
            cur[..n_x].copy_from_slice(&next[..n_x]);
        }
        acc.push(scene.goal_score(&cur[..n_x]));
    }
    system.count_oracle((controls.len() / n_u) as u64);
    acc.finish()
}
