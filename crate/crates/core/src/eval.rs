//! Paired-trial benchmark: every condition plans the same task for a given
//! `(system, trial)`, then the records are summarized with bootstrap
//! intervals, Wilson safety intervals, ratios against MBD, and per-figure
//! CSV tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bsd::{bsd_plan, nn_plan, BsdConfig, KernelParams};
use crate::dynamics::{oracle_calls, SystemId, SystemSpec};
use crate::error::{Error, Result};
use crate::library::TrajectoryLibrary;
use crate::mbd::{mbd_plan, MbdConfig};
use crate::numcore::RngStream;
use crate::parkenv::{reward, sample_task, StartRegion, Task};
use crate::plan::PlanResult;
use crate::shield::shielded_rollout;

const TASK_STREAM: u64 = 0x7A5C;
const PLAN_STREAM: u64 = 0x91A7;
const BOOT_STREAM: u64 = 0xB007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "MBD")]
    Mbd,
    #[serde(rename = "BSD_fix")]
    BsdFix,
    #[serde(rename = "BSD")]
    Bsd,
    #[serde(rename = "NN")]
    Nn,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::Mbd, Condition::BsdFix, Condition::Bsd, Condition::Nn];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Mbd => "MBD",
            Condition::BsdFix => "BSD_fix",
            Condition::Bsd => "BSD",
            Condition::Nn => "NN",
        }
    }

    pub fn index(&self) -> u64 {
        *self as u64
    }

    /// Uses the trajectory library instead of the dynamics.
    pub fn is_data_driven(&self) -> bool {
        !matches!(self, Condition::Mbd)
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mbd" => Ok(Condition::Mbd),
            "bsd_fix" => Ok(Condition::BsdFix),
            "bsd" => Ok(Condition::Bsd),
            "nn" => Ok(Condition::Nn),
            other => Err(Error::Config(format!("unknown condition '{other}'"))),
        }
    }
}

/// One planning call of one condition on one paired task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub system_id: SystemId,
    pub condition: Condition,
    pub trial: usize,
    /// Stream id of the trial's task; equal across conditions.
    pub seed: u64,
    /// Reward of the trajectory the planner reports.
    pub reward: f64,
    /// The shield never intervened on the reported trajectory.
    pub safe: bool,
    pub interventions: usize,
    pub plan_time_ms: f64,
    /// Dynamics steps evaluated inside the planning call.
    pub oracle_calls: u64,
    /// Reward of the returned controls driven from the start through the
    /// true dynamics with the interleaved shield.
    pub executed_reward: f64,
    pub executed_safe: bool,
    pub initial_state: Vec<f64>,
    pub goal_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub systems: Vec<SystemId>,
    pub conditions: Vec<Condition>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub start_region: StartRegion,
    pub mbd: MbdConfig,
    pub bsd_fix: BsdConfig,
    pub bsd: BsdConfig,
    pub nn: KernelParams,
    pub bootstrap: BootstrapConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            systems: SystemId::ALL.to_vec(),
            conditions: Condition::ALL.to_vec(),
            n_trials: 50,
            base_seed: 0,
            start_region: StartRegion::default(),
            mbd: MbdConfig::default(),
            bsd_fix: BsdConfig::default(),
            bsd: BsdConfig {
                kernel: KernelParams::adaptive(),
                ..BsdConfig::default()
            },
            nn: KernelParams::default(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.systems.is_empty() || self.conditions.is_empty() {
            return Err(Error::Config("eval needs at least one system and one condition".into()));
        }
        let uniq: BTreeSet<_> = self.systems.iter().collect();
        if uniq.len() != self.systems.len() {
            return Err(Error::Config("duplicate system in eval config".into()));
        }
        let uniq: BTreeSet<_> = self.conditions.iter().collect();
        if uniq.len() != self.conditions.len() {
            return Err(Error::Config("duplicate condition in eval config".into()));
        }
        self.mbd.validate()?;
        self.bsd_fix.validate()?;
        self.bsd.validate()?;
        self.nn.validate()?;
        self.bootstrap.validate()
    }
}

/// The shared task of trial `t` on `system`.
pub fn trial_task(system: &SystemSpec, region: &StartRegion, base_seed: u64, trial: usize) -> Result<(u64, Task)> {
    let stream = RngStream::new(base_seed, TASK_STREAM).child(&[system.id.index(), trial as u64]);
    Ok((stream.stream_id, sample_task(system, region, &stream)?))
}

fn planner_stream(base_seed: u64, system: SystemId, trial: usize, condition: Condition) -> RngStream {
    RngStream::new(base_seed, PLAN_STREAM).child(&[system.index(), trial as u64, condition.index()])
}

/// Runs one condition on one paired task.
pub fn run_condition(
    cfg: &EvalConfig,
    system: &SystemSpec,
    condition: Condition,
    trial: usize,
    library: Option<&TrajectoryLibrary>,
) -> Result<TrialRecord> {
    let (seed, task) = trial_task(system, &cfg.start_region, cfg.base_seed, trial)?;
    let stream = planner_stream(cfg.base_seed, system.id, trial, condition);
    let need_lib = || {
        library.ok_or_else(|| Error::Config(format!("no library for {} ({condition})", system.id)))
    };
    let before = oracle_calls();
    let plan: PlanResult = match condition {
        Condition::Mbd => mbd_plan(&task.x0, &task.scene, system, &cfg.mbd, &stream)?,
        Condition::BsdFix => bsd_plan(&task.x0, &task.scene, system, need_lib()?, &cfg.bsd_fix, &stream)?,
        Condition::Bsd => bsd_plan(&task.x0, &task.scene, system, need_lib()?, &cfg.bsd, &stream)?,
        Condition::Nn => nn_plan(&task.x0, &task.scene, system, need_lib()?, &cfg.nn)?,
    };
    let calls = oracle_calls() - before;
    let (executed_reward, executed_safe) = if condition.is_data_driven() {
        let ex = shielded_rollout(system, &task.x0, &plan.controls, &task.scene)?;
        (reward(&ex.states, &task.scene), ex.interventions == 0)
    } else {
        (plan.reward, plan.interventions == 0)
    };
    if !plan.reward.is_finite() {
        return Err(Error::Numeric(format!("{condition} reward is not finite")));
    }
    Ok(TrialRecord {
        system_id: system.id,
        condition,
        trial,
        seed,
        reward: plan.reward,
        safe: plan.interventions == 0,
        interventions: plan.interventions,
        plan_time_ms: plan.wall_time_ms,
        oracle_calls: calls,
        executed_reward,
        executed_safe,
        initial_state: task.x0,
        goal_index: task.scene.goal_space_index,
    })
}

/// Runs every `(system, trial)` group in order; all conditions of a group
/// are planned before the group is handed to `sink`, so a persisted log
/// never holds a partial group. Groups listed in `done` are skipped.
///
/// Trials run one after another; each planner parallelizes internally.
/// This keeps the per-call dynamics counter exact.
pub fn run_trials_with(
    cfg: &EvalConfig,
    libraries: &HashMap<SystemId, TrajectoryLibrary>,
    done: &BTreeSet<(SystemId, usize)>,
    mut sink: impl FnMut(&[TrialRecord]) -> Result<()>,
) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let data_driven = cfg.conditions.iter().any(|c| c.is_data_driven());
    let mut specs = Vec::with_capacity(cfg.systems.len());
    for &id in &cfg.systems {
        let spec = SystemSpec::new(id);
        if data_driven {
            let lib = libraries
                .get(&id)
                .ok_or_else(|| Error::Config(format!("missing trajectory library for {id}")))?;
            if lib.system != spec {
                return Err(Error::Config(format!("library for {id} was built for a different system spec")));
            }
        }
        specs.push(spec);
    }
    let mut out = Vec::new();
    for spec in &specs {
        for t in 0..cfg.n_trials {
            if done.contains(&(spec.id, t)) {
                continue;
            }
            let group = cfg
                .conditions
                .iter()
                .map(|&c| run_condition(cfg, spec, c, t, libraries.get(&spec.id)))
                .collect::<Result<Vec<_>>>()?;
            sink(&group)?;
            out.extend(group);
        }
    }
    Ok(out)
}

pub fn run_trials(cfg: &EvalConfig, libraries: &HashMap<SystemId, TrajectoryLibrary>) -> Result<Vec<TrialRecord>> {
    run_trials_with(cfg, libraries, &BTreeSet::new(), |_| Ok(()))
}

/// Appends one JSON line per record.
pub fn append_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    f.write_all(buf.as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// `(system, trial)` groups for which every listed condition is present.
pub fn completed_groups(records: &[TrialRecord], conditions: &[Condition]) -> BTreeSet<(SystemId, usize)> {
    let mut seen: BTreeMap<(SystemId, usize), BTreeSet<Condition>> = BTreeMap::new();
    for r in records {
        seen.entry((r.system_id, r.trial)).or_default().insert(r.condition);
    }
    seen.into_iter()
        .filter(|(_, c)| conditions.iter().all(|k| c.contains(k)))
        .map(|(k, _)| k)
        .collect()
}

// ---------------------------------------------------------------- statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 || !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("bootstrap needs resamples ≥ 1 and level in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Mean written as an offset from the first sample, so a constant sample
/// has a mean equal to that constant bit for bit.
fn offset_mean(xs: impl Iterator<Item = f64>, anchor: f64, n: usize) -> f64 {
    anchor + xs.map(|x| x - anchor).sum::<f64>() / n as f64
}

pub fn mean(samples: &[f64]) -> f64 {
    offset_mean(samples.iter().copied(), samples[0], samples.len())
}

/// Sample standard deviation; zero for a single sample.
pub fn std_dev(samples: &[f64]) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let m = mean(samples);
    (samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
}

/// Resample means in draw order: resample `b` takes `n` indices drawn
/// uniformly with replacement from the stream.
pub fn bootstrap_means(samples: &[f64], n_resamples: usize, stream: &RngStream) -> Vec<f64> {
    let n = samples.len();
    let mut rng = stream.rng();
    (0..n_resamples)
        .map(|_| offset_mean((0..n).map(|_| samples[rng.gen_range(0..n)]), samples[0], n))
        .collect()
}

/// Percentile bootstrap interval of the mean.
///
/// With the resample means sorted as `m_(0) ≤ … ≤ m_(B-1)` and `a = (1 -
/// level) / 2`, the interval is `(m_(⌊aB⌋), m_(⌈(1-a)B⌉ - 1))`.
pub fn bootstrap_ci(samples: &[f64], n_resamples: usize, level: f64, stream: &RngStream) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Undefined("bootstrap of an empty sample".into()));
    }
    if n_resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter("bootstrap needs resamples ≥ 1 and level in (0, 1)".into()));
    }
    let mut means = bootstrap_means(samples, n_resamples, stream);
    means.sort_by(|a, b| a.total_cmp(b));
    let a = (1.0 - level) / 2.0;
    let b = n_resamples as f64;
    let lo = ((a * b).floor() as usize).min(n_resamples - 1);
    let hi = (((1.0 - a) * b).ceil() as usize).clamp(1, n_resamples) - 1;
    Ok((means[lo], means[hi.max(lo)]))
}

/// Wilson score interval for `k` successes in `n` trials at 95%.
pub fn wilson(k: usize, n: usize) -> Result<(f64, f64)> {
    if n == 0 || k > n {
        return Err(Error::Undefined("Wilson interval needs 0 ≤ k ≤ n, n ≥ 1".into()));
    }
    let z = 1.959_963_984_540_054_f64;
    let (nf, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Undefined("pearson needs two equal-length samples of size ≥ 2".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("pearson of a zero-variance sample".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

// ------------------------------------------------------------------ summary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub system_id: SystemId,
    pub condition: Condition,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci: (f64, f64),
    pub safety_rate: f64,
    pub safety_ci: (f64, f64),
    pub mean_time_ms: f64,
    pub mean_oracle_calls: f64,
    pub executed_mean: f64,
    pub executed_safety_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system_id: SystemId,
    /// `mean(condition) / mean(MBD)` for every condition present.
    pub ratio_vs_mbd: Vec<(Condition, f64)>,
    /// Paired MBD vs BSD-fix reward correlation; `None` when undefined.
    pub pearson_mbd_bsd_fix: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub cells: Vec<CellSummary>,
    pub systems: Vec<SystemSummary>,
}

impl SummaryTable {
    pub fn cell(&self, system: SystemId, condition: Condition) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.system_id == system && c.condition == condition)
    }

    pub fn system(&self, system: SystemId) -> Option<&SystemSummary> {
        self.systems.iter().find(|s| s.system_id == system)
    }

    pub fn ratio(&self, system: SystemId, condition: Condition) -> Option<f64> {
        self.system(system)?
            .ratio_vs_mbd
            .iter()
            .find(|(c, _)| *c == condition)
            .map(|(_, r)| *r)
    }
}

type Groups<'a> = BTreeMap<(SystemId, Condition), Vec<&'a TrialRecord>>;

fn group(records: &[TrialRecord]) -> Groups<'_> {
    let mut g: Groups = BTreeMap::new();
    for r in records {
        g.entry((r.system_id, r.condition)).or_default().push(r);
    }
    for v in g.values_mut() {
        v.sort_by_key(|r| r.trial);
    }
    g
}

/// Aggregates records into per-cell statistics. Pure in `records`: the
/// bootstrap stream of each cell depends only on the bootstrap seed and
/// the cell key.
pub fn summarize(records: &[TrialRecord], boot: &BootstrapConfig) -> Result<SummaryTable> {
    boot.validate()?;
    let groups = group(records);
    let mut cells = Vec::with_capacity(groups.len());
    for (&(sys, cond), recs) in &groups {
        let rewards: Vec<f64> = recs.iter().map(|r| r.reward).collect();
        let executed: Vec<f64> = recs.iter().map(|r| r.executed_reward).collect();
        let n = recs.len();
        let n_safe = recs.iter().filter(|r| r.safe).count();
        let stream = RngStream::new(boot.seed, BOOT_STREAM).child(&[sys.index(), cond.index()]);
        cells.push(CellSummary {
            system_id: sys,
            condition: cond,
            n,
            mean: mean(&rewards),
            std: std_dev(&rewards),
            ci: bootstrap_ci(&rewards, boot.resamples, boot.level, &stream)?,
            safety_rate: n_safe as f64 / n as f64,
            safety_ci: wilson(n_safe, n)?,
            mean_time_ms: recs.iter().map(|r| r.plan_time_ms).sum::<f64>() / n as f64,
            mean_oracle_calls: recs.iter().map(|r| r.oracle_calls as f64).sum::<f64>() / n as f64,
            executed_mean: mean(&executed),
            executed_safety_rate: recs.iter().filter(|r| r.executed_safe).count() as f64 / n as f64,
        });
    }

    let systems_present: BTreeSet<SystemId> = groups.keys().map(|k| k.0).collect();
    let mut systems = Vec::new();
    for sys in systems_present {
        let mbd = cells.iter().find(|c| c.system_id == sys && c.condition == Condition::Mbd);
        let ratio_vs_mbd = match mbd {
            Some(m) if m.mean > 0.0 => cells
                .iter()
                .filter(|c| c.system_id == sys)
                .map(|c| (c.condition, c.mean / m.mean))
                .collect(),
            _ => Vec::new(),
        };
        let pearson_mbd_bsd_fix = match (groups.get(&(sys, Condition::Mbd)), groups.get(&(sys, Condition::BsdFix))) {
            (Some(a), Some(b)) => {
                let (xa, xb) = paired(a, b);
                pearson(&xa, &xb).ok()
            }
            _ => None,
        };
        systems.push(SystemSummary {
            system_id: sys,
            ratio_vs_mbd,
            pearson_mbd_bsd_fix,
        });
    }
    Ok(SummaryTable { cells, systems })
}

fn paired(a: &[&TrialRecord], b: &[&TrialRecord]) -> (Vec<f64>, Vec<f64>) {
    let bmap: BTreeMap<usize, f64> = b.iter().map(|r| (r.trial, r.reward)).collect();
    a.iter()
        .filter_map(|r| bmap.get(&r.trial).map(|&y| (r.reward, y)))
        .unzip()
}

// ---------------------------------------------------------------- CSV export

pub const FIGURE_FILES: [&str; 6] = [
    "table1.csv",
    "fig2_means.csv",
    "fig3_ratio_vs_dim.csv",
    "fig4_per_trial.csv",
    "fig5_paired.csv",
    "fig6_safety_time.csv",
];

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the six CSV tables into `outdir`.
///
/// Fails if a ratio against MBD is needed for a system with no MBD trials.
pub fn export_figures(records: &[TrialRecord], boot: &BootstrapConfig, outdir: &Path) -> Result<SummaryTable> {
    let table = summarize(records, boot)?;
    for s in &table.systems {
        if s.ratio_vs_mbd.is_empty() {
            return Err(Error::Undefined(format!("no MBD trials (or zero MBD mean) for {}", s.system_id)));
        }
    }
    fs::create_dir_all(outdir)?;

    let mut t1 = String::from(
        "system,condition,n,mean,std,ci_lo,ci_hi,safety_rate,safety_lo,safety_hi,mean_time_ms,\
         ratio_vs_mbd,mean_oracle_calls,executed_mean,executed_safety_rate\n",
    );
    let mut f2 = String::from("system,condition,mean,ci_lo,ci_hi\n");
    let mut f6 = String::from("system,condition,safety_rate,safety_lo,safety_hi,mean_time_ms\n");
    for c in &table.cells {
        let ratio = table.ratio(c.system_id, c.condition);
        writeln!(
            t1,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.system_id,
            c.condition,
            c.n,
            c.mean,
            c.std,
            c.ci.0,
            c.ci.1,
            c.safety_rate,
            c.safety_ci.0,
            c.safety_ci.1,
            c.mean_time_ms,
            csv_opt(ratio),
            c.mean_oracle_calls,
            c.executed_mean,
            c.executed_safety_rate
        )
        .expect("string write");
        writeln!(f2, "{},{},{},{},{}", c.system_id, c.condition, c.mean, c.ci.0, c.ci.1).expect("string write");
        writeln!(
            f6,
            "{},{},{},{},{},{}",
            c.system_id, c.condition, c.safety_rate, c.safety_ci.0, c.safety_ci.1, c.mean_time_ms
        )
        .expect("string write");
    }

    let mut f3 = String::from("system,state_dim,condition,ratio\n");
    for s in &table.systems {
        for (c, r) in &s.ratio_vs_mbd {
            writeln!(f3, "{},{},{},{}", s.system_id, s.system_id.state_dim(), c, r).expect("string write");
        }
    }

    let groups = group(records);
    let mut f4 = String::from("system,condition,trial,seed,reward,safe,executed_reward\n");
    for ((sys, cond), recs) in &groups {
        for r in recs {
            writeln!(
                f4,
                "{},{},{},{},{},{},{}",
                sys, cond, r.trial, r.seed, r.reward, r.safe, r.executed_reward
            )
            .expect("string write");
        }
    }

    let mut f5 = String::from("system,trial,mbd_reward,bsd_fix_reward\n");
    for s in &table.systems {
        if let (Some(a), Some(b)) = (
            groups.get(&(s.system_id, Condition::Mbd)),
            groups.get(&(s.system_id, Condition::BsdFix)),
        ) {
            let bmap: BTreeMap<usize, f64> = b.iter().map(|r| (r.trial, r.reward)).collect();
            for r in a.iter() {
                if let Some(y) = bmap.get(&r.trial) {
                    writeln!(f5, "{},{},{},{}", s.system_id, r.trial, r.reward, y).expect("string write");
                }
            }
        }
    }

    for (name, body) in FIGURE_FILES.iter().zip([t1, f2, f3, f4, f5, f6]) {
        fs::write(outdir.join(name), body)?;
    }
    fs::write(outdir.join("summary.json"), serde_json::to_string_pretty(&table)? + "\n")?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(sys: SystemId, cond: Condition, trial: usize, reward: f64, safe: bool) -> TrialRecord {
        TrialRecord {
            system_id: sys,
            condition: cond,
            trial,
            seed: trial as u64,
            reward,
            safe,
            interventions: usize::from(!safe),
            plan_time_ms: 1.0,
            oracle_calls: 0,
            executed_reward: reward,
            executed_safe: safe,
            initial_state: vec![0.0; 3],
            goal_index: 0,
        }
    }

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        // 3 / sqrt(2 · 14/3)
        assert!((r - 3.0 / (2.0f64 * 14.0 / 3.0).sqrt()).abs() < 1e-14);
        assert!((r - 0.981_980_506).abs() < 1e-9);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_bootstrap_is_degenerate() {
        for c in [0.1, 4.2, -3.7, 1e-300] {
            let (lo, hi) = bootstrap_ci(&[c; 7], 1000, 0.95, &RngStream::new(1, 2)).unwrap();
            assert_eq!((lo, hi), (c, c));
        }
    }

    #[test]
    fn bootstrap_two_point_matches_independent_oracle() {
        // Oracle: for {0, 1} the resample mean is (#ones)/2, so count the
        // ones in each resample with the same index draws and read off the
        // order statistics directly.
        let samples = [0.0, 1.0];
        let stream = RngStream::new(5, 9);
        let b = 10_000;
        let mut rng = stream.rng();
        let mut counts = [0usize; 3];
        for _ in 0..b {
            let ones = (0..2).filter(|_| rng.gen_range(0..2usize) == 1).count();
            counts[ones] += 1;
        }
        let order_stat = |k: usize| -> f64 {
            if k < counts[0] {
                0.0
            } else if k < counts[0] + counts[1] {
                0.5
            } else {
                1.0
            }
        };
        let lo_idx = (0.025f64 * b as f64).floor() as usize;
        let hi_idx = (0.975f64 * b as f64).ceil() as usize - 1;
        let ci = bootstrap_ci(&samples, b, 0.95, &stream).unwrap();
        assert_eq!(ci, (order_stat(lo_idx), order_stat(hi_idx)));
        assert_eq!(ci, (0.0, 1.0));
    }

    #[test]
    fn bootstrap_covers_sample_mean() {
        use rand_distr::{Distribution, StandardNormal};
        let mut hits = 0;
        for s in 0..1000u64 {
            let mut rng = RngStream::new(s, 1).rng();
            let xs: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (lo, hi) = bootstrap_ci(&xs, 500, 0.95, &RngStream::new(s, 2)).unwrap();
            let m = mean(&xs);
            if lo <= m && m <= hi {
                hits += 1;
            }
        }
        assert!(hits >= 999, "{hits}");
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson(5, 5).unwrap();
        assert!(hi == 1.0 && lo > 0.5 && lo < 0.6);
        let (lo, hi) = wilson(0, 10).unwrap();
        assert!(lo == 0.0 && hi > 0.0 && hi < 0.35);
        assert!(wilson(1, 0).is_err());
    }

    #[test]
    fn single_trial_table() {
        let rs = vec![rec(SystemId::Bicycle, Condition::Mbd, 0, 3.25, true)];
        let t = summarize(&rs, &BootstrapConfig::default()).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert_eq!(t.cells[0].ci, (3.25, 3.25));
        assert_eq!(t.cells[0].std, 0.0);
        assert_eq!(t.ratio(SystemId::Bicycle, Condition::Mbd), Some(1.0));
        assert_eq!(t.system(SystemId::Bicycle).unwrap().pearson_mbd_bsd_fix, None);
    }

    #[test]
    fn ratios_match_hand_arithmetic() {
        let mut rs = Vec::new();
        for t in 0..4 {
            rs.push(rec(SystemId::Tt2d, Condition::Mbd, t, 4.0 + t as f64, true));
            rs.push(rec(SystemId::Tt2d, Condition::BsdFix, t, 2.0 + t as f64, t % 2 == 0));
            rs.push(rec(SystemId::Tt2d, Condition::Nn, t, 1.0, false));
        }
        let t = summarize(&rs, &BootstrapConfig::default()).unwrap();
        // MBD mean 5.5, BSD-fix 3.5, NN 1
        assert!((t.ratio(SystemId::Tt2d, Condition::BsdFix).unwrap() - 3.5 / 5.5).abs() < 1e-15);
        assert!((t.ratio(SystemId::Tt2d, Condition::Nn).unwrap() - 1.0 / 5.5).abs() < 1e-15);
        assert_eq!(t.cell(SystemId::Tt2d, Condition::BsdFix).unwrap().safety_rate, 0.5);
        assert_eq!(t.system(SystemId::Tt2d).unwrap().pearson_mbd_bsd_fix, Some(1.0));
    }

    #[test]
    fn export_requires_mbd() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![rec(SystemId::Bicycle, Condition::Nn, 0, 1.0, true)];
        assert!(matches!(
            export_figures(&rs, &BootstrapConfig::default(), dir.path()),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn export_writes_all_files_and_paired_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut rs = Vec::new();
        for sys in [SystemId::Bicycle, SystemId::AccTt2d] {
            for t in 0..3 {
                for c in Condition::ALL {
                    rs.push(rec(sys, c, t, 1.0 + t as f64 + c.index() as f64, true));
                }
            }
        }
        export_figures(&rs, &BootstrapConfig::default(), dir.path()).unwrap();
        for f in FIGURE_FILES {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let paired = fs::read_to_string(dir.path().join("fig5_paired.csv")).unwrap();
        assert_eq!(paired.lines().count(), 1 + 2 * 3);
        let again = tempfile::tempdir().unwrap();
        export_figures(&rs, &BootstrapConfig::default(), again.path()).unwrap();
        for f in FIGURE_FILES {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(again.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn zero_trials_is_empty() {
        let cfg = EvalConfig {
            n_trials: 0,
            systems: vec![SystemId::Bicycle],
            conditions: vec![Condition::Mbd],
            ..EvalConfig::default()
        };
        assert!(run_trials(&cfg, &HashMap::new()).unwrap().is_empty());
    }

    #[test]
    fn missing_library_fails_before_trials() {
        let cfg = EvalConfig {
            n_trials: 3,
            systems: vec![SystemId::Bicycle],
            ..EvalConfig::default()
        };
        let mut ran = 0;
        let r = run_trials_with(&cfg, &HashMap::new(), &BTreeSet::new(), |_| {
            ran += 1;
            Ok(())
        });
        assert!(matches!(r, Err(Error::Config(_))));
        assert_eq!(ran, 0);
    }

    #[test]
    fn paired_tasks_match_across_conditions() {
        let cfg = EvalConfig {
            n_trials: 2,
            systems: vec![SystemId::Bicycle],
            conditions: vec![Condition::Mbd],
            mbd: MbdConfig {
                n_diffuse: 5,
                candidates: 16,
                ..MbdConfig::default()
            },
            ..EvalConfig::default()
        };
        let a = run_trials(&cfg, &HashMap::new()).unwrap();
        let b = run_trials(&cfg, &HashMap::new()).unwrap();
        let strip = |v: &[TrialRecord]| {
            v.iter()
                .map(|r| TrialRecord {
                    plan_time_ms: 0.0,
                    ..r.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        let s = SystemSpec::new(SystemId::Bicycle);
        for r in &a {
            let (seed, task) = trial_task(&s, &cfg.start_region, cfg.base_seed, r.trial).unwrap();
            assert_eq!(r.seed, seed);
            assert_eq!(r.initial_state, task.x0);
            assert_eq!(r.goal_index, task.scene.goal_space_index);
        }
    }

    #[test]
    fn completed_groups_need_every_condition() {
        let rs = vec![
            rec(SystemId::Bicycle, Condition::Mbd, 0, 1.0, true),
            rec(SystemId::Bicycle, Condition::Nn, 0, 1.0, true),
            rec(SystemId::Bicycle, Condition::Mbd, 1, 1.0, true),
        ];
        let done = completed_groups(&rs, &[Condition::Mbd, Condition::Nn]);
        assert_eq!(done.into_iter().collect::<Vec<_>>(), vec![(SystemId::Bicycle, 0)]);
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.name().parse::<Condition>().unwrap(), c);
            let j = serde_json::to_string(&c).unwrap();
            assert_eq!(j, format!("\"{}\"", c.name()));
        }
        assert!("bogus".parse::<Condition>().is_err());
    }

    proptest! {
        #[test]
        fn summary_is_pure(rewards in proptest::collection::vec(0.0f64..6.0, 2..12)) {
            let rs: Vec<TrialRecord> = rewards
                .iter()
                .enumerate()
                .flat_map(|(t, &r)| {
                    [
                        rec(SystemId::Bicycle, Condition::Mbd, t, r + 0.5, true),
                        rec(SystemId::Bicycle, Condition::BsdFix, t, r, t % 3 == 0),
                    ]
                })
                .collect();
            let boot = BootstrapConfig { resamples: 200, ..BootstrapConfig::default() };
            let a = summarize(&rs, &boot).unwrap();
            let mut shuffled = rs.clone();
            shuffled.reverse();
            let b = summarize(&shuffled, &boot).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
