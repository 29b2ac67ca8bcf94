//! Discrete-time vehicle models and the plain (unshielded) rollout.
//!
//! All four systems share one kinematic core: a bicycle-model tractor pulling
//! zero, one or two on-axle trailers, integrated with explicit Euler.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parkenv::VehicleGeometry;

static ORACLE_CALLS: AtomicU64 = AtomicU64::new(0);

/// Total number of dynamics evaluations performed by this process.
///
/// Model-free planners are checked against this counter.
pub fn oracle_calls() -> u64 {
    ORACLE_CALLS.load(Ordering::SeqCst)
}

fn count_calls(n: u64) {
    ORACLE_CALLS.fetch_add(n, Ordering::Relaxed);
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w += 2.0 * PI;
    }
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemId {
    Bicycle,
    #[serde(rename = "TT2D")]
    Tt2d,
    NTrailer,
    #[serde(rename = "AccTT2D")]
    AccTt2d,
}

impl SystemId {
    pub const ALL: [SystemId; 4] = [
        SystemId::Bicycle,
        SystemId::Tt2d,
        SystemId::NTrailer,
        SystemId::AccTt2d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SystemId::Bicycle => "Bicycle",
            SystemId::Tt2d => "TT2D",
            SystemId::NTrailer => "NTrailer",
            SystemId::AccTt2d => "AccTT2D",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            SystemId::Bicycle => 3,
            SystemId::Tt2d => 4,
            SystemId::NTrailer => 5,
            SystemId::AccTt2d => 6,
        }
    }

    /// Number of articulated bodies (tractor plus trailers).
    pub fn body_count(&self) -> usize {
        match self {
            SystemId::Bicycle => 1,
            SystemId::Tt2d | SystemId::AccTt2d => 2,
            SystemId::NTrailer => 3,
        }
    }

    pub fn index(&self) -> u64 {
        match self {
            SystemId::Bicycle => 0,
            SystemId::Tt2d => 1,
            SystemId::NTrailer => 2,
            SystemId::AccTt2d => 3,
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bicycle" => Ok(SystemId::Bicycle),
            "tt2d" => Ok(SystemId::Tt2d),
            "ntrailer" => Ok(SystemId::NTrailer),
            "acctt2d" => Ok(SystemId::AccTt2d),
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Tractor wheelbase (m).
    pub wheelbase: f64,
    /// Hitch-to-axle distances d_1, d_2 (m); one per trailer.
    pub hitch_lengths: Vec<f64>,
    /// Bound on every relative hitch angle (rad).
    pub hitch_limit: f64,
    /// Speed bound (m/s); also the velocity-state bound for AccTT2D.
    pub speed_limit: f64,
    /// Acceleration bound (m/s²), AccTT2D only.
    pub accel_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub id: SystemId,
    pub n_x: usize,
    pub n_u: usize,
    pub dt: f64,
    pub horizon: usize,
    pub control_bounds: Vec<(f64, f64)>,
    pub geometry: VehicleGeometry,
    pub params: VehicleParams,
}

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 50;
const STEER_LIMIT: f64 = 0.6;

impl SystemSpec {
    pub fn new(id: SystemId) -> Self {
        Self::with_horizon(id, DEFAULT_HORIZON)
    }

    pub fn with_horizon(id: SystemId, horizon: usize) -> Self {
        let params = VehicleParams {
            wheelbase: 2.5,
            hitch_lengths: match id {
                SystemId::Bicycle => vec![],
                SystemId::Tt2d | SystemId::AccTt2d => vec![3.0],
                SystemId::NTrailer => vec![3.0, 3.0],
            },
            hitch_limit: 1.2,
            speed_limit: 3.0,
            accel_limit: 2.0,
        };
        let control_bounds = match id {
            SystemId::AccTt2d => vec![
                (-params.accel_limit, params.accel_limit),
                (-STEER_LIMIT, STEER_LIMIT),
            ],
            _ => vec![
                (-params.speed_limit, params.speed_limit),
                (-STEER_LIMIT, STEER_LIMIT),
            ],
        };
        SystemSpec {
            id,
            n_x: id.state_dim(),
            n_u: 2,
            dt: DEFAULT_DT,
            horizon,
            control_bounds,
            geometry: VehicleGeometry::for_system(id),
            params,
        }
    }

    /// Flattened control dimension `H × n_u`.
    pub fn control_dim(&self) -> usize {
        self.horizon * self.n_u
    }

    /// State channels holding angles (wrapped after every step).
    pub fn angle_channels(&self) -> &'static [usize] {
        match self.id {
            SystemId::Bicycle => &[2],
            SystemId::Tt2d | SystemId::AccTt2d => &[2, 3],
            SystemId::NTrailer => &[2, 3, 4],
        }
    }

    pub fn is_angle_channel(&self, c: usize) -> bool {
        self.angle_channels().contains(&c)
    }

    /// Heading of every body, tractor first.
    pub fn body_headings<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[2..2 + self.id.body_count()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x != self.id.state_dim() || self.n_u != 2 {
            return Err(Error::Config(format!("{} has wrong dimensions", self.id)));
        }
        if !(self.dt > 0.0) || self.horizon == 0 {
            return Err(Error::Config("dt must be positive and horizon ≥ 1".into()));
        }
        if self.control_bounds.len() != self.n_u
            || self.control_bounds.iter().any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::Config("control bounds must satisfy min < max".into()));
        }
        if self.params.hitch_lengths.len() + 1 != self.id.body_count() {
            return Err(Error::Config("hitch length count does not match body count".into()));
        }
        Ok(())
    }

    pub fn clamp_control(&self, u: &mut [f64]) {
        for (v, (lo, hi)) in u.iter_mut().zip(&self.control_bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// One Euler step without validation; `u` is clamped internally.
    pub(crate) fn step_unchecked(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (lo0, hi0) = self.control_bounds[0];
        let (lo1, hi1) = self.control_bounds[1];
        let first = u[0].clamp(lo0, hi0);
        let steer = u[1].clamp(lo1, hi1);
        let dt = self.dt;
        let p = &self.params;

        let (speed, accel) = match self.id {
            SystemId::AccTt2d => {
                let v = x[4];
                let vmax = p.speed_limit;
                let a = first.clamp((-vmax - v) / dt, (vmax - v) / dt);
                (v, a)
            }
            _ => (first, 0.0),
        };

        let th1 = x[2];
        out[0] = x[0] + speed * th1.cos() * dt;
        out[1] = x[1] + speed * th1.sin() * dt;
        out[2] = wrap_angle(th1 + speed / p.wheelbase * steer.tan() * dt);
        if self.id.body_count() >= 2 {
            let th2 = x[3];
            out[3] = wrap_angle(th2 + speed / p.hitch_lengths[0] * (th1 - th2).sin() * dt);
            if self.id == SystemId::NTrailer {
                let th3 = x[4];
                out[4] = wrap_angle(
                    th3 + speed * (th1 - th2).cos() / p.hitch_lengths[1] * (th2 - th3).sin() * dt,
                );
            }
        }
        if self.id == SystemId::AccTt2d {
            out[4] = speed + accel * dt;
            out[5] = accel;
        }
    }

    pub(crate) fn step_counted(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        count_calls(1);
        self.step_unchecked(x, u, out);
    }

    pub(crate) fn count_oracle(&self, n: u64) {
        count_calls(n);
    }

    /// Advances the state by one step of `dt`.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_x || u.len() != self.n_u {
            return Err(Error::Dimension(format!(
                "{} expects state {} / control {}, got {} / {}",
                self.id,
                self.n_x,
                self.n_u,
                x.len(),
                u.len()
            )));
        }
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("state or control is not finite".into()));
        }
        let mut out = vec![0.0; self.n_x];
        self.step_counted(x, u, &mut out);
        Ok(out)
    }

    /// Plain rollout: row 0 is `x0`, row `t+1 = step(row t, u_t)`.
    pub fn rollout(&self, x0: &[f64], controls: &ControlSequence) -> Result<StateTrajectory> {
        self.check_controls(controls)?;
        if x0.len() != self.n_x {
            return Err(Error::Dimension(format!("initial state has {} entries", x0.len())));
        }
        if x0.iter().chain(controls.values()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("rollout input is not finite".into()));
        }
        let n_x = self.n_x;
        let mut values = vec![0.0; (controls.horizon() + 1) * n_x];
        values[..n_x].copy_from_slice(x0);
        for t in 0..controls.horizon() {
            let (prev, next) = values.split_at_mut((t + 1) * n_x);
            self.step_unchecked(&prev[t * n_x..], controls.row(t), &mut next[..n_x]);
        }
        count_calls(controls.horizon() as u64);
        Ok(StateTrajectory::from_flat(n_x, values))
    }

    pub fn check_controls(&self, controls: &ControlSequence) -> Result<()> {
        if controls.n_u() != self.n_u {
            return Err(Error::Dimension(format!(
                "control width {} != {}",
                controls.n_u(),
                self.n_u
            )));
        }
        Ok(())
    }
}

/// An `H × n_u` control matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    n_u: usize,
    values: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(horizon: usize, n_u: usize) -> Self {
        Self {
            n_u,
            values: vec![0.0; horizon * n_u],
        }
    }

    pub fn from_flat(n_u: usize, values: Vec<f64>) -> Self {
        assert!(n_u > 0 && values.len() % n_u == 0, "ragged control matrix");
        Self { n_u, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_u = rows.first().map_or(1, Vec::len);
        Self::from_flat(n_u, rows.concat())
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.n_u
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_u..(t + 1) * self.n_u]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Clamps every row to the system's control bounds.
    pub fn clamp_to(&mut self, system: &SystemSpec) {
        for row in self.values.chunks_mut(self.n_u) {
            system.clamp_control(row);
        }
    }

    pub fn within_bounds(&self, system: &SystemSpec) -> bool {
        self.values.chunks(self.n_u).all(|row| {
            row.iter()
                .zip(&system.control_bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
        })
    }
}

/// An `(H+1) × n_x` state matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    n_x: usize,
    values: Vec<f64>,
}

impl StateTrajectory {
    pub fn from_flat(n_x: usize, values: Vec<f64>) -> Self {
        assert!(n_x > 0 && values.len() % n_x == 0, "ragged state matrix");
        Self { n_x, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_x = rows.first().map_or(1, Vec::len);
        Self::from_flat(n_x, rows.concat())
    }

    pub fn constant(row: &[f64], n_rows: usize) -> Self {
        Self::from_flat(row.len(), row.repeat(n_rows))
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_x
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_x)
    }

    pub fn initial(&self) -> &[f64] {
        self.row(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.row(self.n_rows() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}
