//! Model-based diffusion baseline: reward-weighted denoising in which every
//! candidate control sequence is rolled out through the analytical dynamics.
//! Also serves as the oracle that generates trajectory libraries.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSequence, SystemSpec};
use crate::error::{param, Error, Result};
use crate::numcore::{
    draw_gaussian, make_schedule, softmax_select, NoiseSchedule, RewardScaling, RngStream, ScheduleShape,
};
use crate::parkenv::{reward, ParkingScene};
use crate::plan::PlanResult;
use crate::shield::{rollout_reward, shielded_rollout, Shielded};

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_CANDIDATES: u64 = 2;
pub(crate) const TAG_RENOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbdConfig {
    pub n_diffuse: usize,
    pub candidates: usize,
    pub temperature: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub schedule_shape: ScheduleShape,
    /// Multiplier on σ_i for the proposal noise.
    pub candidate_scale: f64,
    /// Interleave the safety shield into every rollout.
    pub shielded: bool,
    pub reward_scaling: RewardScaling,
}

impl Default for MbdConfig {
    fn default() -> Self {
        Self {
            n_diffuse: 100,
            candidates: 20_000,
            temperature: 0.01,
            sigma_max: 1.0,
            sigma_min: 0.02,
            schedule_shape: ScheduleShape::LinearLog,
            candidate_scale: 1.0,
            shielded: true,
            reward_scaling: RewardScaling::Raw,
        }
    }
}

impl MbdConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.n_diffuse, self.sigma_max, self.sigma_min, self.schedule_shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(param("MBD needs at least one candidate"));
        }
        if !(self.temperature > 0.0) {
            return Err(param("MBD temperature must be positive"));
        }
        if !(self.candidate_scale >= 0.0) {
            return Err(param("candidate scale must be non-negative"));
        }
        self.schedule().map(|_| ())
    }
}

/// Output of one reward-weighted update.
#[derive(Debug, Clone)]
pub struct MbdStep {
    pub controls: ControlSequence,
    pub best_reward: f64,
    pub rewards: Vec<f64>,
}

fn candidate_into(
    out: &mut [f64],
    center: &[f64],
    noise: &[f64],
    scale: f64,
    system: &SystemSpec,
) {
    for ((o, c), e) in out.iter_mut().zip(center).zip(noise) {
        *o = c + scale * e;
    }
    for row in out.chunks_mut(system.n_u) {
        system.clamp_control(row);
    }
}

/// One reward-weighted update around `current` at noise level `sigma`.
pub fn mbd_denoise_step(
    current: &ControlSequence,
    x0: &[f64],
    scene: &ParkingScene,
    system: &SystemSpec,
    cfg: &MbdConfig,
    sigma: f64,
    stream: &RngStream,
) -> Result<MbdStep> {
    system.check_controls(current)?;
    let d = current.values().len();
    let k = cfg.candidates;
    let noise = draw_gaussian(&[k, d], stream);
    let scale = cfg.candidate_scale * sigma;
    let center = current.values();

    let rewards: Vec<f64> = noise
        .par_chunks(d)
        .map_init(
            || vec![0.0; d],
            |buf, eps| {
                candidate_into(buf, center, eps, scale, system);
                rollout_reward(system, x0, buf, scene, cfg.shielded)
            },
        )
        .collect();
    let weights = softmax_select(&cfg.reward_scaling.apply(&rewards), cfg.temperature)?;

    let mut mean = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for (eps, &w) in noise.chunks(d).zip(&weights.normalized) {
        if w == 0.0 {
            continue;
        }
        candidate_into(&mut buf, center, eps, scale, system);
        for (m, c) in mean.iter_mut().zip(&buf) {
            *m += w * c;
        }
    }
    let best_reward = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MbdStep {
        controls: ControlSequence::from_flat(system.n_u, mean),
        best_reward,
        rewards,
    })
}

/// Full reverse-diffusion plan from noise.
pub fn mbd_plan(
    x0: &[f64],
    scene: &ParkingScene,
    system: &SystemSpec,
    cfg: &MbdConfig,
    stream: &RngStream,
) -> Result<PlanResult> {
    cfg.validate()?;
    if !scene.is_safe(x0, system) {
        return Err(Error::Precondition("MBD start state is unsafe".into()));
    }
    let start = Instant::now();
    let schedule = cfg.schedule()?;
    let n = schedule.n_steps();
    let shape = [system.horizon, system.n_u];
    let mut y = ControlSequence::from_flat(system.n_u, draw_gaussian(&shape, &stream.child(&[TAG_INIT])));
    let mut trace = Vec::with_capacity(n - 1);
    for i in (1..n).rev() {
        let step = mbd_denoise_step(
            &y,
            x0,
            scene,
            system,
            cfg,
            schedule.sigma(i),
            &stream.child(&[TAG_CANDIDATES, i as u64]),
        )?;
        trace.push(step.best_reward);
        y = step.controls;
        if i > 1 {
            let sigma = schedule.sigma(i - 1);
            let eps = draw_gaussian(&shape, &stream.child(&[TAG_RENOISE, i as u64]));
            for (v, e) in y.values_mut().iter_mut().zip(eps) {
                *v += sigma * e;
            }
        }
    }
    let executed = if cfg.shielded {
        shielded_rollout(system, x0, &y, scene)?
    } else {
        Shielded {
            states: system.rollout(x0, &y)?,
            interventions: 0,
        }
    };
    let r = reward(&executed.states, scene);
    Ok(PlanResult {
        controls: y,
        states: executed.states,
        reward: r,
        interventions: executed.interventions,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        reward_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SystemId;
    use crate::parkenv::{all_but, build_scene};

    fn small_cfg() -> MbdConfig {
        MbdConfig {
            n_diffuse: 30,
            candidates: 256,
            ..MbdConfig::default()
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let s = SystemSpec::new(SystemId::Bicycle);
        let scene = build_scene(3, all_but(3), &s).unwrap();
        let cfg = MbdConfig {
            candidates: 1,
            ..small_cfg()
        };
        let y = ControlSequence::zeros(s.horizon, 2);
        let stream = RngStream::new(1, 2);
        let out = mbd_denoise_step(&y, &[16.0, 16.0, 0.0], &scene, &s, &cfg, 0.5, &stream).unwrap();
        let eps = draw_gaussian(&[1, 100], &stream);
        let mut expect = vec![0.0; 100];
        candidate_into(&mut expect, y.values(), &eps, 0.5, &s);
        assert_eq!(out.controls.values(), expect.as_slice());
    }

    #[test]
    fn zero_spread_returns_center() {
        let s = SystemSpec::new(SystemId::Bicycle);
        let scene = build_scene(3, all_but(3), &s).unwrap();
        let cfg = MbdConfig {
            candidate_scale: 0.0,
            ..small_cfg()
        };
        let y = ControlSequence::from_flat(2, [1.0, 0.1].repeat(50));
        let out = mbd_denoise_step(&y, &[16.0, 16.0, 0.0], &scene, &s, &cfg, 0.5, &RngStream::new(0, 0)).unwrap();
        for (a, b) in out.controls.values().iter().zip(y.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cold_temperature_selects_argmax() {
        let s = SystemSpec::new(SystemId::Bicycle);
        let scene = build_scene(3, all_but(3), &s).unwrap();
        let cfg = MbdConfig {
            temperature: 1e-12,
            ..small_cfg()
        };
        let x0 = [16.0, 16.0, 0.0];
        let y = ControlSequence::zeros(s.horizon, 2);
        let stream = RngStream::new(4, 4);
        let out = mbd_denoise_step(&y, &x0, &scene, &s, &cfg, 0.8, &stream).unwrap();

        // brute force over the same draws, with the explicit rollout path
        let eps = draw_gaussian(&[cfg.candidates, 100], &stream);
        let mut best = (f64::NEG_INFINITY, vec![]);
        for e in eps.chunks(100) {
            let mut c = vec![0.0; 100];
            candidate_into(&mut c, y.values(), e, 0.8, &s);
            let u = ControlSequence::from_flat(2, c.clone());
            let r = reward(&shielded_rollout(&s, &x0, &u, &scene).unwrap().states, &scene);
            if r > best.0 {
                best = (r, c);
            }
        }
        assert_eq!(out.controls.values(), best.1.as_slice());
        assert_eq!(out.best_reward, best.0);
    }

    #[test]
    fn plan_determinism_bounds_and_crosscheck() {
        let s = SystemSpec::new(SystemId::Tt2d);
        let scene = build_scene(10, all_but(10), &s).unwrap();
        let x0 = [12.0, 15.0, 0.5, 0.5];
        let stream = RngStream::new(77, 3);
        let a = mbd_plan(&x0, &scene, &s, &small_cfg(), &stream).unwrap();
        let b = mbd_plan(&x0, &scene, &s, &small_cfg(), &stream).unwrap();
        assert_eq!(a.controls, b.controls);
        assert_eq!(a.reward, b.reward);
        assert!(a.controls.within_bounds(&s));
        let again = shielded_rollout(&s, &x0, &a.controls, &scene).unwrap();
        assert_eq!(reward(&again.states, &scene), a.reward);
        assert!(a.states.rows().all(|r| scene.is_safe(r, &s)));
    }

    #[test]
    fn easy_instance_reaches_goal() {
        // obstacle-free lot, goal straight ahead at 2 m
        let s = SystemSpec::new(SystemId::Bicycle);
        let scene = build_scene(3, 0, &s).unwrap();
        let g = scene.goal_pose.clone();
        let x0 = [g[0], g[1] + 2.0, g[2]];
        let out = mbd_plan(&x0, &scene, &s, &MbdConfig::default(), &RngStream::new(3, 0)).unwrap();
        assert!(out.reward >= 0.9 * 6.0, "reward {}", out.reward);
    }

    #[test]
    fn shield_off_matches_on_in_empty_lot() {
        // 2 s horizon: at most 6 m of travel from the lot center, so no
        // candidate can reach a wall and the shield never fires
        let s = SystemSpec::with_horizon(SystemId::Bicycle, 20);
        let scene = build_scene(3, 0, &s).unwrap();
        let x0 = [16.0, 16.0, 0.0];
        let on = mbd_plan(&x0, &scene, &s, &small_cfg(), &RngStream::new(9, 9)).unwrap();
        let off_cfg = MbdConfig {
            shielded: false,
            ..small_cfg()
        };
        let off = mbd_plan(&x0, &scene, &s, &off_cfg, &RngStream::new(9, 9)).unwrap();
        assert_eq!(on.interventions, 0);
        assert_eq!(on.controls, off.controls);
        assert_eq!(on.reward, off.reward);
    }

    #[test]
    fn rejects_unsafe_start() {
        let s = SystemSpec::new(SystemId::Bicycle);
        let scene = build_scene(3, all_but(3), &s).unwrap();
        assert!(matches!(
            mbd_plan(&[0.1, 0.1, 0.0], &scene, &s, &small_cfg(), &RngStream::new(0, 0)),
            Err(Error::Precondition(_))
        ));
    }
}
