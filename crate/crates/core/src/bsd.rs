//! Behavioral score diffusion: a model-free diffusion planner whose denoiser
//! is a triple-kernel Nadaraya-Watson estimate over a trajectory library,
//! followed by multi-sample shielded selection. Also hosts the
//! nearest-neighbor retrieval baseline.
//!
//! Nothing in this module evaluates the dynamics. Candidate states are the
//! stored library states, passed through the post-hoc shield.

use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, ControlSequence, StateTrajectory, SystemSpec};
use crate::error::{param, Error, Result};
use crate::library::TrajectoryLibrary;
use crate::numcore::{
    draw_gaussian, make_schedule, normalize_log_weights, softmax_select, NoiseSchedule, RewardScaling,
    RngStream, ScheduleShape, WeightVector,
};
use crate::parkenv::{reward, ParkingScene};
use crate::plan::PlanResult;
use crate::shield::{shield_states, shielded_reward_of};

const TAG_INIT: u64 = 11;
const TAG_DRAW: u64 = 12;
const TAG_RENOISE: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// `β = c · d^p`, independent of the noise level.
    Fixed,
    /// `β_i = c · σ_i^γ · d^p`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Context bandwidth on the initial state.
    pub nu_x: f64,
    /// Goal bandwidth on the terminal state.
    pub nu_g: f64,
    /// Reward temperature.
    pub eta: f64,
    /// Bandwidth coefficient.
    pub c: f64,
    /// Noise-level exponent in adaptive mode.
    pub gamma: f64,
    pub mode: BandwidthMode,
    /// Exponent on the control dimension.
    pub dim_power: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            nu_x: 2.0,
            nu_g: 3.0,
            eta: 10.0,
            c: 1.0,
            gamma: 0.5,
            mode: BandwidthMode::Fixed,
            dim_power: 0.5,
        }
    }
}

impl KernelParams {
    pub fn adaptive() -> Self {
        Self {
            mode: BandwidthMode::Adaptive,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_x > 0.0 && self.nu_g > 0.0 && self.c > 0.0) {
            return Err(param("kernel bandwidths must be positive"));
        }
        if !(self.eta >= 0.0) {
            return Err(param("reward temperature must be non-negative"));
        }
        Ok(())
    }
}

/// How the K retrieved candidates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Reward-softmax weighted sum of candidate controls.
    #[default]
    Mixture,
    /// The single best-reward candidate.
    Argmax,
}

/// Which state trajectory a plan reports alongside its controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinalStates {
    /// Kernel-weighted average of library states at the final query.
    #[default]
    KernelEstimate,
    /// The final selection's mixture of shielded candidate states, i.e. the
    /// same weights that formed the returned controls.
    Selected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BsdConfig {
    pub kernel: KernelParams,
    pub n_diffuse: usize,
    pub candidates: usize,
    pub temperature: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub schedule_shape: ScheduleShape,
    pub selection: Selection,
    pub reward_scaling: RewardScaling,
    pub final_states: FinalStates,
}

impl Default for BsdConfig {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            n_diffuse: 100,
            candidates: 20_000,
            temperature: 0.01,
            sigma_max: 1.0,
            sigma_min: 0.02,
            schedule_shape: ScheduleShape::LinearLog,
            selection: Selection::Mixture,
            reward_scaling: RewardScaling::Raw,
            final_states: FinalStates::KernelEstimate,
        }
    }
}

impl BsdConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.n_diffuse, self.sigma_max, self.sigma_min, self.schedule_shape)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.candidates == 0 {
            return Err(param("BSD needs at least one candidate"));
        }
        if !(self.temperature > 0.0) {
            return Err(param("BSD temperature must be positive"));
        }
        self.schedule().map(|_| ())
    }
}

/// Diffusion-kernel bandwidth for noise level `sigma` and control dimension `d`.
pub fn bandwidth(sigma: f64, d: usize, p: &KernelParams) -> f64 {
    let dim = (d as f64).powf(p.dim_power);
    match p.mode {
        BandwidthMode::Adaptive => p.c * sigma.powf(p.gamma) * dim,
        BandwidthMode::Fixed => p.c * dim,
    }
}

/// Squared state distance with wrapped differences on angle channels.
pub fn state_distance_sq(a: &[f64], b: &[f64], system: &SystemSpec) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(c, (x, y))| {
            let d = if system.is_angle_channel(c) { wrap_angle(x - y) } else { x - y };
            d * d
        })
        .sum()
}

/// Squared goal distance on the channels the reward scores: position and
/// lead heading.
pub fn goal_distance_sq(terminal: &[f64], goal: &[f64]) -> f64 {
    (terminal[0] - goal[0]).powi(2) + (terminal[1] - goal[1]).powi(2) + wrap_angle(terminal[2] - goal[2]).powi(2)
}

fn control_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The query-dependent, noise-independent part of the log-weights:
/// context, goal and reward kernels for every record.
#[derive(Debug, Clone)]
pub struct KernelQuery {
    static_log: Vec<f64>,
}

impl KernelQuery {
    pub fn new(library: &TrajectoryLibrary, x0: &[f64], goal: &[f64], p: &KernelParams) -> Result<Self> {
        let system = &library.system;
        if x0.len() != system.n_x || goal.len() != system.n_x {
            return Err(Error::Dimension("query state width does not match library".into()));
        }
        let stats = library.reward_stats();
        let static_log = library
            .records()
            .iter()
            .map(|r| {
                let ctx = -state_distance_sq(x0, r.initial_state(), system) / (2.0 * p.nu_x * p.nu_x);
                let gl = -goal_distance_sq(r.terminal_state(), goal) / (2.0 * p.nu_g * p.nu_g);
                let rew = p.eta * stats.normalize(r.reward);
                ctx + gl + rew
            })
            .collect();
        Ok(Self { static_log })
    }

    /// Sum of context, goal and reward log-weights per record.
    pub fn static_log_weights(&self) -> &[f64] {
        &self.static_log
    }

    pub fn log_weights(&self, y: &ControlSequence, library: &TrajectoryLibrary, beta: f64) -> Vec<f64> {
        let inv = 1.0 / (2.0 * beta * beta);
        library
            .records()
            .iter()
            .zip(&self.static_log)
            .map(|(r, s)| s - control_distance_sq(y.values(), r.controls.values()) * inv)
            .collect()
    }
}

/// Normalized triple-kernel weights (diffusion × context × goal × reward).
pub fn kernel_log_weights(
    y: &ControlSequence,
    library: &TrajectoryLibrary,
    x0: &[f64],
    goal: &[f64],
    sigma: f64,
    p: &KernelParams,
) -> Result<WeightVector> {
    check_query_controls(y, library)?;
    let query = KernelQuery::new(library, x0, goal, p)?;
    let beta = bandwidth(sigma, library.system.control_dim(), p);
    normalize_log_weights(&query.log_weights(y, library, beta))
}

fn check_query_controls(y: &ControlSequence, library: &TrajectoryLibrary) -> Result<()> {
    let s = &library.system;
    if y.n_u() != s.n_u || y.horizon() != s.horizon {
        return Err(Error::Dimension("query controls are not H × n_u".into()));
    }
    Ok(())
}

/// Kernel-weighted averages of the library controls and states.
pub fn nw_estimate(weights: &WeightVector, library: &TrajectoryLibrary) -> Result<(ControlSequence, StateTrajectory)> {
    if weights.len() != library.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} records",
            weights.len(),
            library.len()
        )));
    }
    let first = &library.records()[0];
    let mut u = vec![0.0; first.controls.values().len()];
    let mut x = vec![0.0; first.states.values().len()];
    for (r, &w) in library.records().iter().zip(&weights.normalized) {
        if w == 0.0 {
            continue;
        }
        for (acc, v) in u.iter_mut().zip(r.controls.values()) {
            *acc += w * v;
        }
        for (acc, v) in x.iter_mut().zip(r.states.values()) {
            *acc += w * v;
        }
    }
    Ok((
        ControlSequence::from_flat(first.controls.n_u(), u),
        StateTrajectory::from_flat(first.states.n_x(), x),
    ))
}

/// K i.i.d. record indices with probabilities given by `weights`.
pub fn multinomial_draw(weights: &WeightVector, k: usize, stream: &RngStream) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(param("draw count must be at least 1"));
    }
    let dist = WeightedIndex::new(&weights.normalized).map_err(|e| param(format!("bad weights: {e}")))?;
    let mut rng = stream.rng();
    Ok((0..k).map(|_| dist.sample(&mut rng)).collect())
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdStep {
    pub controls: ControlSequence,
    pub bandwidth: f64,
    /// Entropy of the kernel weights (nats); a proxy for effective support.
    pub kernel_entropy: f64,
    pub best_reward: f64,
    pub draws: Vec<usize>,
    /// Selection weight per distinct drawn record, by ascending index.
    pub selection: Vec<(usize, f64)>,
}

/// Sums per-draw weights onto distinct record indices.
fn merge_by_index(draws: &[usize], weights: &[f64]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, f64)> = draws
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    pairs.sort_by_key(|&(j, _)| j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
    for (j, w) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += w,
            _ => out.push((j, w)),
        }
    }
    out
}

/// Fixed query state for one plan: library, scene, start, and the
/// per-record shielded rewards computed so far.
struct Denoiser<'a> {
    library: &'a TrajectoryLibrary,
    scene: &'a ParkingScene,
    x0: &'a [f64],
    query: KernelQuery,
    cfg: &'a BsdConfig,
    shielded_rewards: Vec<Option<f64>>,
}

impl<'a> Denoiser<'a> {
    fn new(
        library: &'a TrajectoryLibrary,
        scene: &'a ParkingScene,
        x0: &'a [f64],
        cfg: &'a BsdConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let system = &library.system;
        if scene.system != system.id {
            return Err(Error::Config(format!(
                "scene built for {} but library holds {}",
                scene.system, system.id
            )));
        }
        if !scene.is_safe(x0, system) {
            return Err(Error::Precondition("BSD start state is unsafe".into()));
        }
        let query = KernelQuery::new(library, x0, &scene.goal_pose, &cfg.kernel)?;
        Ok(Self {
            library,
            scene,
            x0,
            query,
            cfg,
            shielded_rewards: vec![None; library.len()],
        })
    }

    fn weights(&self, y: &ControlSequence, sigma: f64) -> Result<(WeightVector, f64)> {
        let beta = bandwidth(sigma, self.library.system.control_dim(), &self.cfg.kernel);
        Ok((normalize_log_weights(&self.query.log_weights(y, self.library, beta))?, beta))
    }

    /// Retrieved states of record `j` with the live start substituted into
    /// row 0, passed through the post-hoc shield.
    fn retrieved_states(&self, j: usize) -> StateTrajectory {
        let mut states = self.library.records()[j].states.clone();
        states.row_mut(0).copy_from_slice(self.x0);
        states
    }

    fn ensure_rewards(&mut self, draws: &[usize]) {
        let mut missing: Vec<usize> = draws
            .iter()
            .copied()
            .filter(|&j| self.shielded_rewards[j].is_none())
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let this = &*self;
        let fresh: Vec<(usize, f64)> = missing
            .par_iter()
            .map(|&j| {
                let states = this.retrieved_states(j);
                let (r, _) = shielded_reward_of(&states, this.scene, &this.library.system);
                (j, r)
            })
            .collect();
        for (j, r) in fresh {
            self.shielded_rewards[j] = Some(r);
        }
    }

    fn step(&mut self, y: &ControlSequence, sigma: f64, renoise: Option<f64>, draw_stream: &RngStream, noise_stream: &RngStream) -> Result<BsdStep> {
        let (weights, beta) = self.weights(y, sigma)?;
        let draws = multinomial_draw(&weights, self.cfg.candidates, draw_stream)?;
        self.ensure_rewards(&draws);
        let rewards: Vec<f64> = draws
            .iter()
            .map(|&j| self.shielded_rewards[j].expect("reward computed"))
            .collect();
        let best_reward = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let selection = match self.cfg.selection {
            Selection::Mixture => {
                let sel = softmax_select(&self.cfg.reward_scaling.apply(&rewards), self.cfg.temperature)?;
                merge_by_index(&draws, &sel.normalized)
            }
            Selection::Argmax => {
                let k = rewards
                    .iter()
                    .enumerate()
                    .fold(0, |b, (k, &r)| if r > rewards[b] { k } else { b });
                vec![(draws[k], 1.0)]
            }
        };
        let d = y.values().len();
        let mut mean = vec![0.0; d];
        for &(j, w) in &selection {
            for (m, v) in mean.iter_mut().zip(self.library.records()[j].controls.values()) {
                *m += w * v;
            }
        }
        if let Some(s) = renoise {
            let eps = draw_gaussian(&[d], noise_stream);
            for (m, e) in mean.iter_mut().zip(eps) {
                *m += s * e;
            }
        }
        Ok(BsdStep {
            controls: ControlSequence::from_flat(y.n_u(), mean),
            bandwidth: beta,
            kernel_entropy: weights.entropy(),
            best_reward,
            draws,
            selection,
        })
    }
}

/// One denoising step: kernel weights, K retrievals, shielded rewards,
/// reward-softmax combination, then re-noising at `sigma_prev` if given.
#[allow(clippy::too_many_arguments)]
pub fn bsd_denoise_step(
    y: &ControlSequence,
    library: &TrajectoryLibrary,
    x0: &[f64],
    scene: &ParkingScene,
    sigma: f64,
    sigma_prev: Option<f64>,
    cfg: &BsdConfig,
    stream: &RngStream,
) -> Result<BsdStep> {
    check_query_controls(y, library)?;
    let mut den = Denoiser::new(library, scene, x0, cfg)?;
    den.step(y, sigma, sigma_prev, &stream.child(&[TAG_DRAW]), &stream.child(&[TAG_RENOISE]))
}

fn check_library(system: &SystemSpec, library: &TrajectoryLibrary) -> Result<()> {
    if library.system.id != system.id
        || library.system.horizon != system.horizon
        || library.system.n_x != system.n_x
    {
        return Err(Error::Config(format!(
            "library for {} (H = {}) cannot plan for {} (H = {})",
            library.system.id, library.system.horizon, system.id, system.horizon
        )));
    }
    Ok(())
}

/// Full BSD plan from Gaussian noise.
pub fn bsd_plan(
    x0: &[f64],
    scene: &ParkingScene,
    system: &SystemSpec,
    library: &TrajectoryLibrary,
    cfg: &BsdConfig,
    stream: &RngStream,
) -> Result<PlanResult> {
    check_library(system, library)?;
    let start = Instant::now();
    let mut den = Denoiser::new(library, scene, x0, cfg)?;
    let schedule = cfg.schedule()?;
    let n = schedule.n_steps();
    let mut y = ControlSequence::from_flat(
        system.n_u,
        draw_gaussian(&[system.horizon, system.n_u], &stream.child(&[TAG_INIT])),
    );
    let mut trace = Vec::with_capacity(n - 1);
    let mut last_selection = Vec::new();
    for i in (1..n).rev() {
        let renoise = (i > 1).then(|| schedule.sigma(i - 1));
        let step = den.step(
            &y,
            schedule.sigma(i),
            renoise,
            &stream.child(&[TAG_DRAW, i as u64]),
            &stream.child(&[TAG_RENOISE, i as u64]),
        )?;
        trace.push(step.best_reward);
        y = step.controls;
        last_selection = step.selection;
    }
    let mut estimate = match cfg.final_states {
        FinalStates::KernelEstimate => {
            let (final_weights, _) = den.weights(&y, schedule.sigma(0))?;
            nw_estimate(&final_weights, library)?.1
        }
        FinalStates::Selected => {
            let mut acc = vec![0.0; (system.horizon + 1) * system.n_x];
            for &(j, w) in &last_selection {
                let part = shield_states(&den.retrieved_states(j), scene, system)?;
                for (a, v) in acc.iter_mut().zip(part.states.values()) {
                    *a += w * v;
                }
            }
            StateTrajectory::from_flat(system.n_x, acc)
        }
    };
    estimate.row_mut(0).copy_from_slice(x0);
    let shielded = shield_states(&estimate, scene, system)?;
    let r = reward(&shielded.states, scene);
    Ok(PlanResult {
        controls: y,
        states: shielded.states,
        reward: r,
        interventions: shielded.interventions,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        reward_trace: trace,
    })
}

/// Index of the record maximizing the context + goal + reward log-weight.
pub fn nn_select(x0: &[f64], goal: &[f64], library: &TrajectoryLibrary, p: &KernelParams) -> Result<usize> {
    let query = KernelQuery::new(library, x0, goal, p)?;
    let s = query.static_log_weights();
    Ok((0..s.len()).fold(0, |b, j| if s[j] > s[b] { j } else { b }))
}

/// Nearest-neighbor retrieval without diffusion: the best-scoring record's
/// controls and its shielded states.
pub fn nn_plan(
    x0: &[f64],
    scene: &ParkingScene,
    system: &SystemSpec,
    library: &TrajectoryLibrary,
    p: &KernelParams,
) -> Result<PlanResult> {
    check_library(system, library)?;
    p.validate()?;
    if !scene.is_safe(x0, system) {
        return Err(Error::Precondition("NN start state is unsafe".into()));
    }
    let start = Instant::now();
    let j = nn_select(x0, &scene.goal_pose, library, p)?;
    let record = &library.records()[j];
    let mut states = record.states.clone();
    states.row_mut(0).copy_from_slice(x0);
    let shielded = shield_states(&states, scene, system)?;
    let r = reward(&shielded.states, scene);
    Ok(PlanResult {
        controls: record.controls.clone(),
        states: shielded.states,
        reward: r,
        interventions: shielded.interventions,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        reward_trace: Vec::new(),
    })
}
