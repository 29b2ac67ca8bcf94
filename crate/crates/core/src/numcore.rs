//! Numeric primitives shared by every planner: log-domain weight
//! normalization, softmax selection, noise schedules and reproducible
//! random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Log-domain scores together with their normalized probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub log_weights: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Shannon entropy (nats) of the normalized weights.
    pub fn entropy(&self) -> f64 {
        self.normalized
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| -w * w.ln())
            .sum()
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.normalized.iter().enumerate() {
            if w > self.normalized[best] {
                best = i;
            }
        }
        best
    }
}

/// Normalizes log-weights with a max shift so that no finite input overflows.
///
/// Entries equal to `-inf` receive exactly zero mass.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<WeightVector> {
    if log_weights.is_empty() {
        return Err(param("empty weight list"));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::Numeric("log-weight is NaN or +inf".into()));
    }
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    let mut normalized: Vec<f64> = log_weights
        .iter()
        .map(|&w| if w == f64::NEG_INFINITY { 0.0 } else { (w - max).exp() })
        .collect();
    let total: f64 = normalized.iter().sum();
    for w in &mut normalized {
        *w /= total;
    }
    Ok(WeightVector {
        log_weights: log_weights.to_vec(),
        normalized,
    })
}

/// Softmax of `values / temperature`.
pub fn softmax_select(values: &[f64], temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(param(format!("temperature must be positive, got {temperature}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    let scaled: Vec<f64> = values.iter().map(|v| v / temperature).collect();
    normalize_log_weights(&scaled)
}

/// How candidate rewards are scaled before the selection softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardScaling {
    /// Rewards enter as they are: `softmax(r / τ)`.
    #[default]
    Raw,
    /// Rewards are centered and divided by their standard deviation first,
    /// which makes τ independent of the reward scale.
    Standardized,
}

impl RewardScaling {
    pub fn apply(self, rewards: &[f64]) -> Vec<f64> {
        match self {
            RewardScaling::Raw => rewards.to_vec(),
            RewardScaling::Standardized => {
                let n = rewards.len() as f64;
                let mean = rewards.iter().sum::<f64>() / n;
                let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 0.0 {
                    rewards.iter().map(|r| (r - mean) / sd).collect()
                } else {
                    vec![0.0; rewards.len()]
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    /// Geometric decay between the endpoints.
    #[default]
    LinearLog,
    /// Half-cosine interpolation between the endpoints.
    Cosine,
}

/// Noise levels indexed by denoising step.
///
/// `sigma(n_steps - 1)` is the largest level and `sigma(0)` the smallest, so a
/// reverse loop `i = N-1 ..= 1` walks the schedule from coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// Descending: `sigmas[0] = σ_max`, `sigmas[n-1] = σ_min`.
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn n_steps(&self) -> usize {
        self.sigmas.len()
    }

    /// Levels in descending order (σ_max first).
    pub fn descending(&self) -> &[f64] {
        &self.sigmas
    }

    /// Noise level of denoising index `i` (0 is the finest).
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[self.sigmas.len() - 1 - i]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.sigmas.last().expect("schedule is non-empty")
    }
}

pub fn make_schedule(
    n_steps: usize,
    sigma_max: f64,
    sigma_min: f64,
    shape: ScheduleShape,
) -> Result<NoiseSchedule> {
    if n_steps < 2 {
        return Err(param(format!("schedule needs at least 2 steps, got {n_steps}")));
    }
    if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
        return Err(param(format!(
            "schedule requires sigma_max > sigma_min > 0, got {sigma_max} / {sigma_min}"
        )));
    }
    let last = (n_steps - 1) as f64;
    let mut sigmas: Vec<f64> = (0..n_steps)
        .map(|k| {
            let t = k as f64 / last;
            match shape {
                ScheduleShape::LinearLog => {
                    (sigma_max.ln() + t * (sigma_min.ln() - sigma_max.ln())).exp()
                }
                ScheduleShape::Cosine => {
                    sigma_min
                        + (sigma_max - sigma_min) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
                }
            }
        })
        .collect();
    sigmas[0] = sigma_max;
    sigmas[n_steps - 1] = sigma_min;
    // exp/ln round-off can produce a one-ulp inversion next to an endpoint
    for k in 1..n_steps {
        if sigmas[k] > sigmas[k - 1] {
            sigmas[k] = sigmas[k - 1];
        }
    }
    Ok(NoiseSchedule { sigmas })
}

/// A reproducible random stream identified by `(base_seed, stream_id)`.
///
/// Streams map onto ChaCha8 key/stream pairs, so any stream can be
/// materialized independently of every other stream and of evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        Self {
            base_seed,
            stream_id,
        }
    }

    /// Derives a sub-stream for a tuple of tags, e.g. `(trial, step, purpose)`.
    pub fn child(&self, tags: &[u64]) -> RngStream {
        let mut id = splitmix64(self.stream_id ^ 0xA5A5_5A5A_0F0F_F0F0);
        for &tag in tags {
            id = splitmix64(id ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        RngStream::new(self.base_seed, id)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// I.i.d. standard normal draws; `shape` is flattened row-major.
pub fn draw_gaussian(shape: &[usize], stream: &RngStream) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let mut rng = stream.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
