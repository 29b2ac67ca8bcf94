//! Executable checks of the estimator theory: pointwise consistency of
//! Nadaraya-Watson regression, its bias and variance rates, the softmax /
//! entropic-DeePC correspondence on an LTI system, and shield safety over
//! arbitrary state sources.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlSequence, StateTrajectory, SystemId, SystemSpec};
use crate::error::{Error, Result};
use crate::numcore::{normalize_log_weights, RngStream};
use crate::parkenv::{all_but, build_scene, sample_initial_state};
use crate::shield::shield_states;

// ---------------------------------------------------------------- NW basics

/// Regression targets on `[0, 1]^d` (or `[-1, 1]^d` for the scaling check).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `sin(2π z_1)`.
    Sine,
    Constant(f64),
    /// `Σ z_k`.
    Linear,
    /// `Σ z_k²`.
    Quadratic,
}

impl Target {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match *self {
            Target::Sine => (2.0 * std::f64::consts::PI * z[0]).sin(),
            Target::Constant(c) => c,
            Target::Linear => z.iter().sum(),
            Target::Quadratic => z.iter().map(|v| v * v).sum(),
        }
    }
}

/// Gaussian-kernel Nadaraya-Watson estimate at `query`.
///
/// Returns `None` when every kernel weight underflows.
pub fn nw_at(query: &[f64], zs: &[Vec<f64>], ys: &[f64], h: f64) -> Option<f64> {
    let inv = 1.0 / (2.0 * h * h);
    let (mut num, mut den) = (0.0, 0.0);
    for (z, y) in zs.iter().zip(ys) {
        let d2: f64 = z.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-d2 * inv).exp();
        num += w * y;
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

/// Conditional variance of the NW estimate given the design:
/// `σ² Σ K_i² / (Σ K_i)²`.
fn nw_conditional_variance(query: &[f64], zs: &[Vec<f64>], h: f64, sigma_v: f64) -> f64 {
    let inv = 1.0 / (2.0 * h * h);
    let (mut s1, mut s2) = (0.0, 0.0);
    for z in zs {
        let d2: f64 = z.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        let w = (-d2 * inv).exp();
        s1 += w;
        s2 += w * w;
    }
    sigma_v * sigma_v * s2 / (s1 * s1)
}

fn sample_design(n: usize, d_z: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d_z).map(|_| rng.gen_range(lo..hi)).collect()).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ordinary least-squares slope of `log10 y` against `log10 x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.log10()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.log10()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn decades(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi / lo).log10()
}

// ------------------------------------------------------------- consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    pub h: f64,
    /// Median over seeds of the squared error at the query.
    pub median_sq_error: f64,
    /// Mean over seeds of the squared error.
    pub mse: f64,
    pub bias_sq: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub target: Target,
    pub sigma_v: f64,
    pub d_z: usize,
    pub query: Vec<f64>,
    pub seeds: usize,
    pub rows: Vec<ConsistencyRow>,
    /// `MSE(N_first) / MSE(N_last)` on the median squared errors.
    pub improvement: f64,
}

/// NW at a fixed interior query with `h(N) = N^{-1/(d_z+4)}` along an
/// increasing sample-size grid, on a uniform design over `[0, 1]^d_z`.
pub fn nw_consistency_check(
    target: Target,
    sigma_v: f64,
    d_z: usize,
    n_grid: &[usize],
    seeds: usize,
    stream: &RngStream,
) -> Result<ConsistencyReport> {
    if !(1..=2).contains(&d_z) {
        return Err(Error::Config("consistency check supports d_z in {1, 2}".into()));
    }
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[1] <= w[0]) || seeds == 0 {
        return Err(Error::Config("N grid must be increasing with at least two entries".into()));
    }
    let query = vec![0.25; d_z];
    let truth = target.eval(&query);
    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let h = (n as f64).powf(-1.0 / (d_z as f64 + 4.0));
        let estimates: Vec<f64> = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let mut rng = stream.child(&[gi as u64, s as u64]).rng();
                let zs = sample_design(n, d_z, 0.0, 1.0, &mut rng);
                let ys: Vec<f64> = zs
                    .iter()
                    .map(|z| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        target.eval(z) + sigma_v * e
                    })
                    .collect();
                nw_at(&query, &zs, &ys, h).unwrap_or(f64::NAN)
            })
            .collect();
        if estimates.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!("kernel weights underflowed at N = {n}")));
        }
        let sq: Vec<f64> = estimates.iter().map(|e| (e - truth) * (e - truth)).collect();
        let mean_est = estimates.iter().sum::<f64>() / seeds as f64;
        let variance = estimates.iter().map(|e| (e - mean_est).powi(2)).sum::<f64>() / seeds as f64;
        rows.push(ConsistencyRow {
            n,
            h,
            median_sq_error: median(sq.clone()),
            mse: sq.iter().sum::<f64>() / seeds as f64,
            bias_sq: (mean_est - truth).powi(2),
            variance,
        });
    }
    let improvement = rows[0].median_sq_error / rows[rows.len() - 1].median_sq_error;
    Ok(ConsistencyReport {
        target,
        sigma_v,
        d_z,
        query,
        seeds,
        rows,
        improvement,
    })
}

// ----------------------------------------------------------------- scaling

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub h_grid: Vec<f64>,
    pub bias_sq: Vec<f64>,
    /// `None` when the target has no curvature (bias is zero to round-off).
    pub bias_slope: Option<f64>,
    pub fixed_h: f64,
    pub n_grid: Vec<usize>,
    pub variance: Vec<f64>,
    pub variance_slope: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    pub target: Target,
    pub d_z: usize,
    /// Design size for the noiseless bias sweep.
    pub bias_n: usize,
    pub h_grid: Vec<f64>,
    pub fixed_h: f64,
    pub sigma_v: f64,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            target: Target::Quadratic,
            d_z: 1,
            bias_n: 20_000,
            h_grid: log_grid(0.01, 0.4, 8),
            fixed_h: 0.05,
            sigma_v: 0.1,
            n_grid: vec![300, 1000, 3000, 10_000, 30_000],
            seeds: 50,
        }
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Bias and variance rates of NW at the origin of `[-1, 1]^d_z`.
///
/// Squared bias comes from noiseless designs averaged over seeds; variance
/// is the design-conditional noise variance `σ² Σ K² / (Σ K)²`, averaged
/// over random designs at a fixed bandwidth.
pub fn mse_scaling_check(cfg: &ScalingConfig, stream: &RngStream) -> Result<ScalingReport> {
    if decades(&cfg.h_grid) < 1.5 {
        return Err(Error::Config("bandwidth grid must span at least 1.5 decades".into()));
    }
    let n_f: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    if decades(&n_f) < 1.5 {
        return Err(Error::Config("sample-size grid must span at least 1.5 decades".into()));
    }
    if cfg.seeds == 0 || !(1..=2).contains(&cfg.d_z) {
        return Err(Error::Config("scaling check needs seeds ≥ 1 and d_z in {1, 2}".into()));
    }
    let query = vec![0.0; cfg.d_z];
    let truth = cfg.target.eval(&query);

    let designs: Vec<Vec<Vec<f64>>> = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| sample_design(cfg.bias_n, cfg.d_z, -1.0, 1.0, &mut stream.child(&[0, s as u64]).rng()))
        .collect();
    let mut bias_sq = Vec::with_capacity(cfg.h_grid.len());
    for &h in &cfg.h_grid {
        let est: Vec<f64> = designs
            .par_iter()
            .map(|zs| {
                let ys: Vec<f64> = zs.iter().map(|z| cfg.target.eval(z)).collect();
                nw_at(&query, zs, &ys, h).unwrap_or(f64::NAN)
            })
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        bias_sq.push((mean - truth).powi(2));
    }
    let curvature = bias_sq.iter().any(|&b| b > 1e-24);
    let bias_slope = curvature.then(|| loglog_slope(&cfg.h_grid, &bias_sq));

    let mut variance = Vec::with_capacity(cfg.n_grid.len());
    for (gi, &n) in cfg.n_grid.iter().enumerate() {
        let v: Vec<f64> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let zs = sample_design(n, cfg.d_z, -1.0, 1.0, &mut stream.child(&[1, gi as u64, s as u64]).rng());
                nw_conditional_variance(&query, &zs, cfg.fixed_h, cfg.sigma_v)
            })
            .collect();
        variance.push(v.iter().sum::<f64>() / v.len() as f64);
    }
    let variance_slope = loglog_slope(&n_f, &variance);
    Ok(ScalingReport {
        h_grid: cfg.h_grid.clone(),
        bias_sq,
        bias_slope,
        fixed_h: cfg.fixed_h,
        n_grid: cfg.n_grid.clone(),
        variance,
        variance_slope,
        seeds: cfg.seeds,
    })
}

// ------------------------------------------------------------------ Hankel

/// Overlapping windows of length `T_ini + H` cut from one trajectory; each
/// window is one column of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelWindows {
    pub t_ini: usize,
    pub horizon: usize,
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub x_p: DMatrix<f64>,
    pub x_f: DMatrix<f64>,
}

impl HankelWindows {
    pub fn n_windows(&self) -> usize {
        self.u_f.ncols()
    }
}

fn block(rows: &[Vec<f64>], start_offset: usize, depth: usize, n_cols: usize) -> DMatrix<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(depth * width, n_cols, |r, c| rows[c + start_offset + r / width][r % width])
}

/// Builds the past/future blocks; column `j` is the window starting at
/// sample `j`: past = samples `j..j+T_ini`, future = `j+T_ini..j+T_ini+H`.
pub fn build_hankel(u_long: &[Vec<f64>], x_long: &[Vec<f64>], t_ini: usize, horizon: usize) -> Result<HankelWindows> {
    let l = u_long.len();
    if x_long.len() != l {
        return Err(Error::Dimension("input and state sequences differ in length".into()));
    }
    if l < t_ini + horizon || horizon == 0 {
        return Err(Error::Dimension(format!(
            "sequence of length {l} is shorter than T_ini + H = {}",
            t_ini + horizon
        )));
    }
    let n = l - t_ini - horizon + 1;
    Ok(HankelWindows {
        t_ini,
        horizon,
        u_p: block(u_long, 0, t_ini, n),
        u_f: block(u_long, t_ini, horizon, n),
        x_p: block(x_long, 0, t_ini, n),
        x_f: block(x_long, t_ini, horizon, n),
    })
}

/// Softmax weights `α_j ∝ exp(-‖y - U_f[:, j]‖² / 2β²)`.
pub fn softmax_columns(u_f: &DMatrix<f64>, y: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    let logw: Vec<f64> = (0..u_f.ncols())
        .map(|j| -(u_f.column(j) - y).norm_squared() / (2.0 * beta * beta))
        .collect();
    Ok(DVector::from_vec(normalize_log_weights(&logw)?.normalized))
}

/// Gradient norm of an objective in the softmax parameterization
/// `α = softmax(θ)`, relative to the size of `∇_α J`.
fn relative_stationarity(alpha: &DVector<f64>, grad_alpha: &DVector<f64>) -> f64 {
    let mean = alpha.dot(grad_alpha);
    let grad_theta = alpha.component_mul(&grad_alpha.map(|g| g - mean));
    grad_theta.amax() / grad_alpha.amax().max(f64::MIN_POSITIVE)
}

/// `∇_α` of `‖U_f α - y‖² + β² KL(α ‖ 1/N)`.
fn grad_written(u_f: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>, beta: f64) -> DVector<f64> {
    let n = alpha.len() as f64;
    let fit = u_f.transpose() * (u_f * alpha - y) * 2.0;
    fit + alpha.map(|a| beta * beta * ((n * a).ln() + 1.0))
}

/// `∇_α` of `Σ_j α_j ‖y - U_f[:, j]‖² + 2β² KL(α ‖ 1/N)`, whose stationary
/// point is exactly the softmax above.
fn grad_per_column(u_f: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>, beta: f64) -> DVector<f64> {
    let n = alpha.len() as f64;
    DVector::from_fn(alpha.len(), |j, _| {
        (u_f.column(j) - y).norm_squared() + 2.0 * beta * beta * ((n * alpha[j]).ln() + 1.0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    /// β as a multiple of `scale`.
    pub beta_rel: f64,
    pub beta: f64,
    /// Worst relative stationarity residual of the written entropic
    /// objective over all queries.
    pub residual_written: f64,
    /// Same, for the per-column objective with a doubled regularizer.
    pub residual_per_column: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepcReport {
    pub l: usize,
    pub t_ini: usize,
    pub horizon: usize,
    pub n_windows: usize,
    pub persistently_exciting: bool,
    pub hankel_rank: usize,
    pub scale: f64,
    pub queries: usize,
    pub rows: Vec<BetaRow>,
    /// Queries whose tiny-β argmax equals the nearest column.
    pub nearest_matches: usize,
    /// Largest `‖α - 1/N‖_∞` at huge β.
    pub uniform_deviation: f64,
    /// Largest relative least-squares re-projection residual of `U_f α`.
    pub reprojection_residual: f64,
    pub simplex_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeepcConfig {
    pub dt: f64,
    pub l: usize,
    pub t_ini: usize,
    pub horizon: usize,
    /// β values as multiples of the median column distance.
    pub beta_grid: Vec<f64>,
    pub queries: usize,
    pub small_beta: f64,
    pub large_beta: f64,
}

impl Default for DeepcConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            l: 200,
            t_ini: 4,
            horizon: 10,
            beta_grid: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            queries: 100,
            small_beta: 1e-4,
            large_beta: 1e3,
        }
    }
}

/// Simulates `x⁺ = A x + B u` under i.i.d. Gaussian input from rest.
pub fn simulate_lti(a: &DMatrix<f64>, b: &DMatrix<f64>, l: usize, stream: &RngStream) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = stream.rng();
    let (n, m) = (a.nrows(), b.ncols());
    let mut x = DVector::<f64>::zeros(n);
    let (mut us, mut xs) = (Vec::with_capacity(l), Vec::with_capacity(l));
    for _ in 0..l {
        let u = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        xs.push(x.as_slice().to_vec());
        us.push(u.as_slice().to_vec());
        x = a * &x + b * &u;
    }
    (us, xs)
}

pub fn double_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, dt]),
    )
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let tol = sv.amax() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Softmax/entropic-DeePC correspondence on a persistently excited LTI
/// system: stationarity residuals, the two bandwidth limits, and the span
/// property of `U_f α`.
pub fn deepc_equivalence_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cfg: &DeepcConfig,
    stream: &RngStream,
) -> Result<DeepcReport> {
    if a.nrows() > 4 || a.nrows() != a.ncols() || b.nrows() != a.nrows() {
        return Err(Error::Dimension("A must be square with at most 4 states, B conformable".into()));
    }
    let (us, xs) = simulate_lti(a, b, cfg.l, &stream.child(&[0]));
    let hw = build_hankel(&us, &xs, cfg.t_ini, cfg.horizon)?;
    let stacked = {
        let (p, f) = (&hw.u_p, &hw.u_f);
        let mut m = DMatrix::zeros(p.nrows() + f.nrows(), p.ncols());
        m.rows_mut(0, p.nrows()).copy_from(p);
        m.rows_mut(p.nrows(), f.nrows()).copy_from(f);
        m
    };
    let hankel_rank = rank(&stacked);
    let persistently_exciting = hankel_rank == stacked.nrows();

    let n = hw.n_windows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dists.push((hw.u_f.column(i) - hw.u_f.column(j)).norm());
        }
    }
    let scale = median(dists);

    let mut q_rng = stream.child(&[1]).rng();
    let queries: Vec<DVector<f64>> = (0..cfg.queries)
        .map(|_| DVector::from_fn(hw.u_f.nrows(), |_, _| StandardNormal.sample(&mut q_rng)))
        .collect();

    let svd = hw.u_f.clone().svd(true, true);
    let mut reprojection_residual: f64 = 0.0;
    let mut simplex_ok = true;
    let mut rows = Vec::with_capacity(cfg.beta_grid.len());
    for &rel in &cfg.beta_grid {
        let beta = rel * scale;
        let mut row = BetaRow {
            beta_rel: rel,
            beta,
            residual_written: 0.0,
            residual_per_column: 0.0,
            min_alpha: f64::INFINITY,
            max_alpha: 0.0,
        };
        for y in &queries {
            let alpha = softmax_columns(&hw.u_f, y, beta)?;
            simplex_ok &= alpha.iter().all(|&v| v >= 0.0) && (alpha.sum() - 1.0).abs() < 1e-12;
            row.min_alpha = row.min_alpha.min(alpha.min());
            row.max_alpha = row.max_alpha.max(alpha.max());
            if alpha.min() > 0.0 {
                row.residual_written = row
                    .residual_written
                    .max(relative_stationarity(&alpha, &grad_written(&hw.u_f, y, &alpha, beta)));
                row.residual_per_column = row
                    .residual_per_column
                    .max(relative_stationarity(&alpha, &grad_per_column(&hw.u_f, y, &alpha, beta)));
            } else {
                // the log terms are undefined on the simplex boundary
                row.residual_written = f64::INFINITY;
                row.residual_per_column = f64::INFINITY;
            }
            let y_hat = &hw.u_f * &alpha;
            let c = svd
                .solve(&y_hat, 1e-12)
                .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
            let res = (&hw.u_f * c - &y_hat).norm() / y_hat.norm().max(f64::MIN_POSITIVE);
            reprojection_residual = reprojection_residual.max(res);
        }
        rows.push(row);
    }

    let mut nearest_matches = 0;
    let mut uniform_deviation: f64 = 0.0;
    for y in &queries {
        let nearest = (0..n)
            .min_by(|&i, &j| {
                let di = (hw.u_f.column(i) - y).norm_squared();
                let dj = (hw.u_f.column(j) - y).norm_squared();
                di.total_cmp(&dj)
            })
            .expect("at least one window");
        let sharp = softmax_columns(&hw.u_f, y, cfg.small_beta * scale)?;
        if sharp.argmax().0 == nearest {
            nearest_matches += 1;
        }
        let flat = softmax_columns(&hw.u_f, y, cfg.large_beta * scale)?;
        uniform_deviation = uniform_deviation.max(flat.map(|v| (v - 1.0 / n as f64).abs()).max());
    }

    Ok(DeepcReport {
        l: cfg.l,
        t_ini: cfg.t_ini,
        horizon: cfg.horizon,
        n_windows: n,
        persistently_exciting,
        hankel_rank,
        scale,
        queries: cfg.queries,
        rows,
        nearest_matches,
        uniform_deviation,
        reprojection_residual,
        simplex_ok,
    })
}

// ------------------------------------------------------------------ safety

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    Rollout,
    KernelEstimate,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub sources: usize,
    pub per_source: Vec<(StateSource, usize)>,
    /// Shielded rows that failed `is_safe`; must be zero.
    pub unsafe_rows: usize,
    pub interventions: usize,
}

/// Shields `n_sources` state trajectories drawn round-robin from random
/// rollouts, kernel averages of rollouts, and uniform noise, across all
/// systems and goals, and counts unsafe output rows.
pub fn safety_inheritance_check(n_sources: usize, stream: &RngStream) -> Result<SafetyReport> {
    let horizon = 30;
    let results: Vec<Result<(StateSource, usize, usize)>> = (0..n_sources)
        .into_par_iter()
        .map(|k| {
            let st = stream.child(&[k as u64]);
            let id = SystemId::ALL[k % 4];
            let system = SystemSpec::with_horizon(id, horizon);
            let goal = (k / 4) % 16;
            let scene = build_scene(goal, all_but(goal), &system)?;
            let x0 = sample_initial_state(&scene, &system, &st.child(&[0]))?;
            let mut rng = st.child(&[1]).rng();
            let random_rollout = |rng: &mut rand_chacha::ChaCha8Rng| {
                let u: Vec<f64> = (0..horizon)
                    .flat_map(|_| {
                        let a = rng.gen_range(system.control_bounds[0].0..=system.control_bounds[0].1);
                        let d = rng.gen_range(system.control_bounds[1].0..=system.control_bounds[1].1);
                        [a, d]
                    })
                    .collect();
                system.rollout(&x0, &ControlSequence::from_flat(system.n_u, u))
            };
            let source = [StateSource::Rollout, StateSource::KernelEstimate, StateSource::Noise][(k / 4) % 3];
            let states = match source {
                StateSource::Rollout => random_rollout(&mut rng)?,
                StateSource::KernelEstimate => {
                    let parts = (0..8).map(|_| random_rollout(&mut rng)).collect::<Result<Vec<_>>>()?;
                    let logw: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..0.0)).collect();
                    let w = normalize_log_weights(&logw)?;
                    let mut acc = vec![0.0; (horizon + 1) * system.n_x];
                    for (p, wj) in parts.iter().zip(&w.normalized) {
                        for (a, v) in acc.iter_mut().zip(p.values()) {
                            *a += wj * v;
                        }
                    }
                    let mut est = StateTrajectory::from_flat(system.n_x, acc);
                    est.row_mut(0).copy_from_slice(&x0);
                    est
                }
                StateSource::Noise => {
                    let mut rows = vec![x0.clone()];
                    for _ in 0..horizon {
                        let mut r = vec![0.0; system.n_x];
                        r[0] = rng.gen_range(-2.0..34.0);
                        r[1] = rng.gen_range(-2.0..34.0);
                        for v in r.iter_mut().skip(2) {
                            *v = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                        }
                        rows.push(r);
                    }
                    StateTrajectory::from_rows(&rows)
                }
            };
            let out = shield_states(&states, &scene, &system)?;
            let bad = out.states.rows().filter(|r| !scene.is_safe(r, &system)).count();
            Ok((source, bad, out.interventions))
        })
        .collect();
    let mut per = [0usize; 3];
    let (mut unsafe_rows, mut interventions) = (0, 0);
    for r in results {
        let (src, bad, iv) = r?;
        per[src as usize] += 1;
        unsafe_rows += bad;
        interventions += iv;
    }
    Ok(SafetyReport {
        sources: n_sources,
        per_source: vec![
            (StateSource::Rollout, per[0]),
            (StateSource::KernelEstimate, per[1]),
            (StateSource::Noise, per[2]),
        ],
        unsafe_rows,
        interventions,
    })
}

// ----------------------------------------------------------------- bundle

/// Pass thresholds, pinned.
pub mod bounds {
    pub const CONSISTENCY_IMPROVEMENT: f64 = 4.0;
    pub const BIAS_SLOPE: (f64, f64) = (4.0 - 0.7, 4.0 + 0.7);
    pub const VARIANCE_SLOPE: (f64, f64) = (-1.0 - 0.15, -1.0 + 0.15);
    pub const STATIONARITY: f64 = 1e-6;
    pub const UNIFORM: f64 = 1e-6;
    pub const REPROJECTION: f64 = 1e-10;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub seed: u64,
    pub consistency_n_grid: Vec<usize>,
    pub consistency_seeds: usize,
    pub consistency_sigma_v: f64,
    pub scaling: ScalingConfig,
    pub deepc: DeepcConfig,
    pub safety_sources: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            consistency_n_grid: vec![100, 1000, 10_000],
            consistency_seeds: 20,
            consistency_sigma_v: 0.1,
            scaling: ScalingConfig::default(),
            deepc: DeepcConfig::default(),
            safety_sources: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub consistency: ConsistencyReport,
    pub scaling: ScalingReport,
    pub deepc: DeepcReport,
    pub safety: SafetyReport,
    pub checks: Vec<CheckOutcome>,
}

impl TheoryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn consistency_outcome(r: &ConsistencyReport) -> CheckOutcome {
    outcome(
        "nw_consistency",
        r.improvement > bounds::CONSISTENCY_IMPROVEMENT,
        format!(
            "median squared error falls by {:.2}x from N = {} to N = {} (need > {})",
            r.improvement,
            r.rows[0].n,
            r.rows[r.rows.len() - 1].n,
            bounds::CONSISTENCY_IMPROVEMENT
        ),
    )
}

pub fn scaling_outcomes(r: &ScalingReport) -> Vec<CheckOutcome> {
    let (blo, bhi) = bounds::BIAS_SLOPE;
    let (vlo, vhi) = bounds::VARIANCE_SLOPE;
    let bias = match r.bias_slope {
        Some(s) => outcome(
            "bias_rate",
            (blo..=bhi).contains(&s),
            format!("squared-bias slope vs h = {s:.3} (need {blo}..{bhi})"),
        ),
        None => outcome("bias_rate", true, "target has no curvature; bias slope skipped".into()),
    };
    vec![
        bias,
        outcome(
            "variance_rate",
            (vlo..=vhi).contains(&r.variance_slope),
            format!("variance slope vs N = {:.3} (need {vlo}..{vhi})", r.variance_slope),
        ),
    ]
}

pub fn deepc_outcomes(r: &DeepcReport) -> Vec<CheckOutcome> {
    let worst_written = r.rows.iter().map(|b| b.residual_written).fold(0.0, f64::max);
    let worst_column = r.rows.iter().map(|b| b.residual_per_column).fold(0.0, f64::max);
    vec![
        outcome(
            "deepc_stationarity",
            worst_written < bounds::STATIONARITY,
            format!(
                "worst relative stationarity residual of ‖U_f α − Y‖² + β²·KL(α‖1/N) = {worst_written:.3e} \
                 (need < {:e}); per-column form Σα_j‖Y − u_j‖² + 2β²·KL gives {worst_column:.3e}",
                bounds::STATIONARITY
            ),
        ),
        outcome(
            "deepc_nearest_limit",
            r.nearest_matches == r.queries,
            format!("{}/{} tiny-β argmax match the nearest column", r.nearest_matches, r.queries),
        ),
        outcome(
            "deepc_uniform_limit",
            r.uniform_deviation < bounds::UNIFORM,
            format!("huge-β max |α − 1/N| = {:.3e}", r.uniform_deviation),
        ),
        outcome(
            "deepc_span",
            r.reprojection_residual < bounds::REPROJECTION && r.simplex_ok,
            format!(
                "re-projection residual {:.3e}, simplex valid: {}",
                r.reprojection_residual, r.simplex_ok
            ),
        ),
        outcome(
            "deepc_excitation",
            r.persistently_exciting,
            format!("input Hankel rank {} of {}", r.hankel_rank, (r.t_ini + r.horizon)),
        ),
    ]
}

pub fn safety_outcome(r: &SafetyReport) -> CheckOutcome {
    outcome(
        "safety_inheritance",
        r.unsafe_rows == 0,
        format!(
            "{} sources, {} interventions, {} unsafe shielded rows",
            r.sources, r.interventions, r.unsafe_rows
        ),
    )
}

/// Runs every check with the given configuration.
pub fn run_theory(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let root = RngStream::new(cfg.seed, 0x7EE0);
    let consistency = nw_consistency_check(
        Target::Sine,
        cfg.consistency_sigma_v,
        1,
        &cfg.consistency_n_grid,
        cfg.consistency_seeds,
        &root.child(&[1]),
    )?;
    let scaling = mse_scaling_check(&cfg.scaling, &root.child(&[2]))?;
    let (a, b) = double_integrator(cfg.deepc.dt);
    let deepc = deepc_equivalence_check(&a, &b, &cfg.deepc, &root.child(&[3]))?;
    let safety = safety_inheritance_check(cfg.safety_sources, &root.child(&[4]))?;
    let mut checks = vec![consistency_outcome(&consistency)];
    checks.extend(scaling_outcomes(&scaling));
    checks.extend(deepc_outcomes(&deepc));
    checks.push(safety_outcome(&safety));
    Ok(TheoryReport {
        consistency,
        scaling,
        deepc,
        safety,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hankel_window_counts_and_indexing() {
        let u: Vec<Vec<f64>> = (1..=10).map(|v| vec![v as f64]).collect();
        let x: Vec<Vec<f64>> = (1..=10).map(|v| vec![v as f64, -(v as f64)]).collect();
        let hw = build_hankel(&u, &x, 2, 3).unwrap();
        assert_eq!(hw.n_windows(), 6);
        assert_eq!(hw.u_f.column(0).as_slice(), &[3.0, 4.0, 5.0]);
        assert_eq!(hw.u_p.column(1).as_slice(), &[2.0, 3.0]);
        assert_eq!(hw.x_f.column(0).as_slice(), &[3.0, -3.0, 4.0, -4.0, 5.0, -5.0]);
        let one = build_hankel(&u[..5], &x[..5], 2, 3).unwrap();
        assert_eq!(one.n_windows(), 1);
        assert!(matches!(build_hankel(&u[..4], &x[..4], 2, 3), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn hankel_count_formula(l in 1usize..60, t_ini in 0usize..8, h in 1usize..8) {
            let u: Vec<Vec<f64>> = (0..l).map(|v| vec![v as f64]).collect();
            let r = build_hankel(&u, &u, t_ini, h);
            if l >= t_ini + h {
                let hw = r.unwrap();
                prop_assert_eq!(hw.n_windows(), l - t_ini - h + 1);
                // consecutive windows overlap in all but one sample
                if hw.n_windows() > 1 {
                    for r in 0..h - 1 {
                        prop_assert_eq!(hw.u_f[(r + 1, 0)], hw.u_f[(r, 1)]);
                    }
                }
            } else {
                prop_assert!(r.is_err());
            }
        }
    }

    #[test]
    fn two_column_softmax_closed_form() {
        let u_f = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let y = DVector::from_vec(vec![0.5]);
        let a = softmax_columns(&u_f, &y, 1.0).unwrap();
        // d² = 0.25 and 2.25 → logits -0.125 and -1.125
        let e = (-1.0f64).exp();
        assert!((a[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((a[1] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn per_column_objective_is_exactly_stationary() {
        let (a, b) = double_integrator(0.1);
        let r = deepc_equivalence_check(&a, &b, &DeepcConfig { queries: 10, ..DeepcConfig::default() }, &RngStream::new(1, 1)).unwrap();
        assert!(r.persistently_exciting);
        assert_eq!(r.n_windows, 187);
        for row in &r.rows {
            assert!(row.residual_per_column < 1e-9, "{row:?}");
        }
        assert_eq!(r.nearest_matches, 10);
        assert!(r.uniform_deviation < 1e-6);
        assert!(r.reprojection_residual < 1e-10);
    }

    #[test]
    fn constant_and_linear_targets() {
        let c = nw_consistency_check(Target::Constant(2.5), 0.0, 1, &[50, 500], 3, &RngStream::new(0, 0)).unwrap();
        assert!(c.rows.iter().all(|r| r.mse < 1e-20));
        // symmetric design around the query: linear bias vanishes
        let zs: Vec<Vec<f64>> = (0..201).map(|i| vec![-1.0 + i as f64 * 0.01]).collect();
        let ys: Vec<f64> = zs.iter().map(|z| Target::Linear.eval(z)).collect();
        assert!(nw_at(&[0.0], &zs, &ys, 0.1).unwrap().abs() < 1e-12);
        let lin = mse_scaling_check(
            &ScalingConfig {
                target: Target::Constant(1.0),
                seeds: 3,
                bias_n: 500,
                ..ScalingConfig::default()
            },
            &RngStream::new(0, 1),
        )
        .unwrap();
        assert!(lin.bias_slope.is_none());
    }

    #[test]
    fn grid_span_is_enforced() {
        let cfg = ScalingConfig {
            h_grid: vec![0.1, 0.2, 0.3],
            ..ScalingConfig::default()
        };
        assert!(matches!(mse_scaling_check(&cfg, &RngStream::new(0, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(4)).collect();
        assert!((loglog_slope(&x, &y) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_safety_run() {
        let r = safety_inheritance_check(48, &RngStream::new(2, 2)).unwrap();
        assert_eq!(r.unsafe_rows, 0);
        assert_eq!(r.per_source.iter().map(|p| p.1).sum::<usize>(), 48);
    }
}
