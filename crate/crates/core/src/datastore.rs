//! Trajectory-library generation with the model-based oracle, and the
//! checksummed NDJSON file format used to persist libraries.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ControlSequence, StateTrajectory, SystemId, SystemSpec};
use crate::error::{param, Error, LoadError, Result};
use crate::library::{Provenance, RewardStats, TrajectoryLibrary, TrajectoryRecord};
use crate::mbd::{mbd_plan, MbdConfig};
use crate::numcore::RngStream;
use crate::parkenv::{sample_task, StartRegion};

pub const FORMAT_NAME: &str = "bsd-trajectory-library";
pub const FORMAT_VERSION: u32 = 1;
const ZERO_DIGEST: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub n_target: usize,
    /// Records below this reward are discarded.
    pub min_reward: f64,
    pub start_region: StartRegion,
    pub oracle: MbdConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_target: 1000,
            min_reward: 0.0,
            start_region: StartRegion::default(),
            oracle: MbdConfig::default(),
        }
    }
}

/// Runs the oracle from randomized tasks until `n_target` records pass the
/// reward filter.
///
/// Attempt `a` uses the task and planner streams derived from
/// `(base_seed, a)`, so the library depends only on the seed and the oracle
/// configuration.
pub fn collect_library(system: &SystemSpec, cfg: &CollectConfig, base_seed: u64) -> Result<TrajectoryLibrary> {
    collect_library_with(system, cfg, base_seed, |_, _| {})
}

/// As [`collect_library`], reporting `(kept, attempts)` after every attempt.
pub fn collect_library_with(
    system: &SystemSpec,
    cfg: &CollectConfig,
    base_seed: u64,
    mut progress: impl FnMut(usize, usize),
) -> Result<TrajectoryLibrary> {
    if cfg.n_target == 0 {
        return Err(param("n_target must be at least 1"));
    }
    cfg.oracle.validate()?;
    let root = RngStream::new(base_seed, system.id.index());
    let check_at = 10 * cfg.n_target;
    let give_up = 100 * cfg.n_target;
    let mut records = Vec::with_capacity(cfg.n_target);
    let mut attempts = 0;
    while records.len() < cfg.n_target {
        if attempts == check_at && records.len() * 100 < attempts {
            return Err(Error::OracleTooWeak {
                kept: records.len(),
                attempts,
                target: cfg.n_target,
            });
        }
        if attempts == give_up {
            return Err(Error::OracleTooWeak {
                kept: records.len(),
                attempts,
                target: cfg.n_target,
            });
        }
        let stream = root.child(&[attempts as u64]);
        attempts += 1;
        let task = sample_task(system, &cfg.start_region, &stream.child(&[0]))?;
        let plan = mbd_plan(&task.x0, &task.scene, system, &cfg.oracle, &stream.child(&[1]))?;
        if plan.reward >= cfg.min_reward {
            records.push(TrajectoryRecord {
                controls: plan.controls,
                states: plan.states,
                reward: plan.reward,
            });
        }
        progress(records.len(), attempts);
    }
    let o = &cfg.oracle;
    let provenance = Provenance {
        generator: format!(
            "mbd(n_diffuse={}, candidates={}, temperature={}, shielded={})",
            o.n_diffuse, o.candidates, o.temperature, o.shielded
        ),
        base_seed,
        attempts,
    };
    TrajectoryLibrary::new(system.clone(), records, provenance)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    system: SystemSpec,
    n_records: usize,
    horizon: usize,
    n_x: usize,
    n_u: usize,
    reward_stats: RewardStats,
    provenance: Provenance,
    checksum: String,
}

/// Minimal view used to check the version before anything else.
#[derive(Deserialize)]
struct VersionProbe {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    controls: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    reward: f64,
}

fn rows<'a>(values: &'a [f64], width: usize) -> Vec<&'a [f64]> {
    values.chunks(width).collect()
}

/// Serializes a library to its file representation.
pub fn encode_library(library: &TrajectoryLibrary) -> Result<Vec<u8>> {
    let s = &library.system;
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        system: s.clone(),
        n_records: library.len(),
        horizon: s.horizon,
        n_x: s.n_x,
        n_u: s.n_u,
        reward_stats: library.reward_stats(),
        provenance: library.provenance.clone(),
        checksum: ZERO_DIGEST.into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for r in library.records() {
        #[derive(Serialize)]
        struct Borrowed<'a> {
            controls: Vec<&'a [f64]>,
            states: Vec<&'a [f64]>,
            reward: f64,
        }
        serde_json::to_writer(
            &mut out,
            &Borrowed {
                controls: rows(r.controls.values(), r.controls.n_u()),
                states: rows(r.states.values(), r.states.n_x()),
                reward: r.reward,
            },
        )?;
        out.push(b'\n');
    }
    let digest = hex::encode(Sha256::digest(&out));
    let pos = find_checksum(&out).expect("header carries a checksum field");
    out[pos..pos + 64].copy_from_slice(digest.as_bytes());
    Ok(out)
}

/// Byte offset of the 64 hex digits of the header checksum.
fn find_checksum(bytes: &[u8]) -> Option<usize> {
    let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let key = b"\"checksum\":\"";
    let line = &bytes[..end];
    let at = line.windows(key.len()).position(|w| w == key)? + key.len();
    (at + 64 <= end).then_some(at)
}

/// Writes the library atomically (temporary file plus rename).
pub fn save_library(library: &TrajectoryLibrary, path: &Path) -> Result<()> {
    let bytes = encode_library(library)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads and verifies a library file. `requested`, when given, must match
/// the system recorded in the header.
pub fn load_library(path: &Path, requested: Option<SystemId>) -> Result<TrajectoryLibrary> {
    let bytes = fs::read(path)?;
    decode_library(&bytes, requested).map_err(|reason| Error::Load {
        path: path.to_path_buf(),
        reason,
    })
}

/// Parses and verifies file bytes; see [`load_library`].
pub fn decode_library(bytes: &[u8], requested: Option<SystemId>) -> std::result::Result<TrajectoryLibrary, LoadError> {
    let malformed = |m: String| LoadError::Malformed(m);
    let text = std::str::from_utf8(bytes).map_err(|e| malformed(format!("not UTF-8: {e}")))?;
    let mut lines = text.split_terminator('\n');
    let first = lines.next().ok_or_else(|| malformed("empty file".into()))?;

    let probe: VersionProbe = serde_json::from_str(first).map_err(|e| malformed(format!("header: {e}")))?;
    if probe.format != FORMAT_NAME {
        return Err(malformed(format!("unknown format '{}'", probe.format)));
    }
    if probe.version != FORMAT_VERSION {
        return Err(LoadError::Version {
            found: probe.version,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_str(first).map_err(|e| malformed(format!("header: {e}")))?;

    let pos = find_checksum(bytes).ok_or_else(|| malformed("header has no checksum".into()))?;
    let mut zeroed = bytes.to_vec();
    zeroed[pos..pos + 64].copy_from_slice(ZERO_DIGEST.as_bytes());
    if hex::encode(Sha256::digest(&zeroed)) != header.checksum {
        return Err(LoadError::Checksum);
    }

    if let Some(id) = requested {
        if id != header.system.id {
            return Err(LoadError::SystemMismatch {
                found: header.system.id.to_string(),
                requested: id.to_string(),
            });
        }
    }
    let s = &header.system;
    if header.horizon != s.horizon || header.n_x != s.n_x || header.n_u != s.n_u {
        return Err(LoadError::Dimension("header dimensions disagree with the system".into()));
    }

    let mut records = Vec::with_capacity(header.n_records);
    for (j, line) in lines.enumerate() {
        let r: RecordLine = serde_json::from_str(line).map_err(|e| malformed(format!("record {j}: {e}")))?;
        let dims_ok = r.controls.len() == s.horizon
            && r.controls.iter().all(|row| row.len() == s.n_u)
            && r.states.len() == s.horizon + 1
            && r.states.iter().all(|row| row.len() == s.n_x);
        if !dims_ok {
            return Err(LoadError::Dimension(format!("record {j} is not H × n_u / (H+1) × n_x")));
        }
        records.push(TrajectoryRecord {
            controls: ControlSequence::from_rows(&r.controls),
            states: StateTrajectory::from_rows(&r.states),
            reward: r.reward,
        });
    }
    if records.len() != header.n_records {
        return Err(LoadError::Dimension(format!(
            "header announces {} records, file holds {}",
            header.n_records,
            records.len()
        )));
    }
    let library = TrajectoryLibrary::new(header.system, records, header.provenance)
        .map_err(|e| LoadError::Dimension(e.to_string()))?;
    if library.reward_stats() != header.reward_stats {
        return Err(malformed("reward statistics disagree with the records".into()));
    }
    Ok(library)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_oracle() -> MbdConfig {
        MbdConfig {
            n_diffuse: 5,
            candidates: 16,
            ..MbdConfig::default()
        }
    }

    fn small_library(seed: u64, n: usize) -> TrajectoryLibrary {
        let cfg = CollectConfig {
            n_target: n,
            min_reward: 0.0,
            oracle: tiny_oracle(),
            ..CollectConfig::default()
        };
        collect_library(&SystemSpec::new(SystemId::Tt2d), &cfg, seed).unwrap()
    }

    #[test]
    fn collects_safe_records_and_vacuous_filter() {
        let lib = small_library(3, 6);
        assert_eq!(lib.len(), 6);
        // decided reward is strictly positive, so a zero floor drops nothing
        assert_eq!(lib.provenance.attempts, 6);
        for r in lib.records() {
            assert!(r.reward > 0.0);
            assert_eq!(r.states.n_rows(), lib.system.horizon + 1);
            assert_eq!(r.controls.horizon(), lib.system.horizon);
        }
    }

    #[test]
    fn records_pass_is_safe_in_their_scene() {
        let s = SystemSpec::new(SystemId::Bicycle);
        let cfg = CollectConfig {
            n_target: 3,
            min_reward: 0.0,
            oracle: tiny_oracle(),
            ..CollectConfig::default()
        };
        let lib = collect_library(&s, &cfg, 11).unwrap();
        let root = RngStream::new(11, s.id.index());
        for (a, r) in lib.records().iter().enumerate() {
            let task = sample_task(&s, &StartRegion::default(), &root.child(&[a as u64]).child(&[0])).unwrap();
            assert!(r.states.rows().all(|x| task.scene.is_safe(x, &s)));
            assert_eq!(r.initial_state(), task.x0.as_slice());
        }
    }

    #[test]
    fn unreachable_floor_reports_weak_oracle() {
        let cfg = CollectConfig {
            n_target: 1,
            min_reward: 7.0,
            oracle: tiny_oracle(),
            ..CollectConfig::default()
        };
        let r = collect_library(&SystemSpec::new(SystemId::Bicycle), &cfg, 0);
        assert!(matches!(r, Err(Error::OracleTooWeak { kept: 0, attempts: 10, target: 1 })));
    }

    #[test]
    fn round_trip_and_determinism() {
        let a = small_library(5, 4);
        let b = small_library(5, 4);
        let (ea, eb) = (encode_library(&a).unwrap(), encode_library(&b).unwrap());
        assert_eq!(ea, eb);
        let back = decode_library(&ea, Some(SystemId::Tt2d)).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn corruption_is_detected() {
        let lib = small_library(6, 3);
        let bytes = encode_library(&lib).unwrap();
        let cut = &bytes[..bytes.len() - 40];
        assert_eq!(decode_library(cut, None).unwrap_err(), LoadError::Checksum);
        let mut flipped = bytes.clone();
        let k = bytes.len() - 100;
        flipped[k] = if flipped[k] == b'1' { b'2' } else { b'1' };
        assert_eq!(decode_library(&flipped, None).unwrap_err(), LoadError::Checksum);
    }

    #[test]
    fn version_and_system_mismatch() {
        let lib = small_library(7, 2);
        let bytes = encode_library(&lib).unwrap();
        let err = decode_library(&bytes, Some(SystemId::Bicycle)).unwrap_err();
        assert!(matches!(err, LoadError::SystemMismatch { .. }));
        let text = String::from_utf8(bytes).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert_eq!(
            decode_library(text.as_bytes(), None).unwrap_err(),
            LoadError::Version { found: 2, expected: 1 }
        );
    }

    #[test]
    fn save_load_on_disk() {
        let lib = small_library(8, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/lib.ndjson");
        save_library(&lib, &path).unwrap();
        assert_eq!(load_library(&path, None).unwrap(), lib);
        let bad = dir.path().join("missing.ndjson");
        assert!(matches!(load_library(&bad, None), Err(Error::Io(_))));
    }
}
