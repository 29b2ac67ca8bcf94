//! Declarative run configuration: one TOML or JSON file overlaid on the
//! defaults of a profile, validated before anything runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datastore::CollectConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::mbd::MbdConfig;
use crate::theory::TheoryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full reproduction scale.
    #[default]
    Paper,
    /// Four systems, five trials, 2000 candidates, cheaper oracle.
    Smoke,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "smoke" => Ok(Profile::Smoke),
            other => Err(Error::Config(format!("unknown profile '{other}' (expected smoke or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub profile: Profile,
    /// Seed for library collection; eval and theory carry their own.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Where `datagen` writes and `plan` / `eval` read `<System>.ndjson`.
    pub library_dir: PathBuf,
    pub datagen: CollectConfig,
    pub eval: EvalConfig,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self {
            profile,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            library_dir: PathBuf::from("libraries"),
            datagen: CollectConfig::default(),
            eval: EvalConfig::default(),
            theory: TheoryConfig::default(),
        };
        if profile == Profile::Smoke {
            cfg.eval.n_trials = 5;
            cfg.eval.mbd.candidates = 2000;
            cfg.eval.bsd_fix.candidates = 2000;
            cfg.eval.bsd.candidates = 2000;
            cfg.datagen.oracle = MbdConfig {
                n_diffuse: 40,
                candidates: 256,
                ..MbdConfig::default()
            };
        }
        cfg
    }

    /// Profile defaults overlaid with `overlay`; unknown keys are rejected.
    pub fn from_overlay(profile: Option<Profile>, overlay: Value) -> Result<Self> {
        let from_file = overlay
            .get("profile")
            .map(|p| serde_json::from_value::<Profile>(p.clone()))
            .transpose()
            .map_err(|e| Error::Config(format!("profile: {e}")))?;
        let profile = profile.or(from_file).unwrap_or_default();
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut base, overlay);
        base["profile"] = serde_json::to_value(profile)?;
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a `.toml` or `.json` file.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let overlay: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            Some("toml") => {
                let t: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                serde_json::to_value(t)?
            }
            _ => return Err(Error::Config(format!("{}: expected a .toml or .json file", path.display()))),
        };
        Self::from_overlay(profile, overlay)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datagen.n_target == 0 {
            return Err(Error::Config("datagen.n_target must be at least 1".into()));
        }
        self.datagen.oracle.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (keys sorted).
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn library_path(&self, system: crate::dynamics::SystemId) -> PathBuf {
        self.library_dir.join(format!("{}.ndjson", system.name()))
    }

    /// Every leaf parameter with its value and whether that value is the
    /// published one (`paper`), a published parameter changed by profile or
    /// file (`override`), or a value chosen here (`decided`).
    pub fn tagged_parameters(&self) -> BTreeMap<String, (Value, &'static str)> {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut flat);
        flat.into_iter()
            .map(|(k, v)| {
                let tag = match published_value(&k) {
                    Some(p) if p == v => "paper",
                    Some(_) => "override",
                    None => "decided",
                };
                (k, (v, tag))
            })
            .collect()
    }
}

fn published_value(key: &str) -> Option<Value> {
    let leaf = key.rsplit('.').next()?;
    let v = match (key, leaf) {
        (_, "n_diffuse") if key.starts_with("eval.") || key.starts_with("datagen.oracle") => 100.into(),
        (_, "candidates") if key.starts_with("eval.") || key.starts_with("datagen.oracle") => 20_000.into(),
        ("datagen.n_target", _) => 1000.into(),
        ("datagen.min_reward", _) => 0.0.into(),
        (_, "nu_x") => 2.0.into(),
        (_, "nu_g") => 3.0.into(),
        (_, "eta") => 10.0.into(),
        (_, "gamma") => 0.5.into(),
        ("eval.n_trials", _) => 50.into(),
        ("eval.bootstrap.resamples", _) => 10_000.into(),
        ("eval.bootstrap.level", _) => 0.95.into(),
        _ => return None,
    };
    Some(v)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

/// Recursive object merge; non-object values in `overlay` replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // unknown keys are kept so deserialization rejects them
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_carry_published_values() {
        let c = RunConfig::default();
        assert_eq!(c.eval.mbd.n_diffuse, 100);
        assert_eq!(c.eval.mbd.candidates, 20_000);
        assert_eq!(c.datagen.n_target, 1000);
        assert_eq!(c.eval.n_trials, 50);
        assert_eq!(c.eval.bootstrap.resamples, 10_000);
        assert_eq!(c.eval.bsd.kernel.nu_x, 2.0);
        let tags = c.tagged_parameters();
        assert_eq!(tags["eval.mbd.candidates"].1, "paper");
        assert_eq!(tags["eval.bsd.kernel.eta"].1, "paper");
        assert_eq!(tags["eval.mbd.temperature"].1, "decided");
    }

    #[test]
    fn smoke_profile_scales_down() {
        let c = RunConfig::for_profile(Profile::Smoke);
        assert_eq!(c.eval.n_trials, 5);
        assert_eq!(c.eval.mbd.candidates, 2000);
        assert_eq!(c.tagged_parameters()["eval.n_trials"].1, "override");
    }

    #[test]
    fn overlay_precedence_and_unknown_keys() {
        let c = RunConfig::from_overlay(Some(Profile::Smoke), json!({"eval": {"n_trials": 7}})).unwrap();
        assert_eq!(c.eval.n_trials, 7);
        assert_eq!(c.eval.mbd.candidates, 2000);
        let e = RunConfig::from_overlay(None, json!({"eval": {"n_trails": 7}}));
        assert!(matches!(e, Err(Error::Config(_))));
        let e = RunConfig::from_overlay(None, json!({"bogus": 1}));
        assert!(matches!(e, Err(Error::Config(_))));
        let p = RunConfig::from_overlay(None, json!({"profile": "smoke"})).unwrap();
        assert_eq!(p.profile, Profile::Smoke);
    }

    #[test]
    fn validation_runs_before_use() {
        let e = RunConfig::from_overlay(None, json!({"eval": {"mbd": {"temperature": 0.0}}}));
        assert!(e.is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "seed = 4\n[eval]\nn_trials = 3\n").unwrap();
        std::fs::write(&j, r#"{"seed": 4, "eval": {"n_trials": 3}}"#).unwrap();
        let a = RunConfig::load(&t, None).unwrap();
        let b = RunConfig::load(&j, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }
}
