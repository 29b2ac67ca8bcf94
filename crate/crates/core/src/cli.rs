//! The `bsd` command line: `datagen`, `plan`, `eval`, `theory`.
//!
//! Exit codes: 0 success, 1 a theory check failed, 2 usage or
//! configuration error (including I/O failures on the named paths).

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{Profile, RunConfig};
use crate::datastore::{collect_library_with, load_library, save_library};
use crate::dynamics::{SystemId, SystemSpec};
use crate::error::{Error, Result};
use crate::eval::{
    append_records, completed_groups, export_figures, read_records, run_condition, run_trials_with, Condition,
};
use crate::theory::run_theory;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "BSD_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bsd", version, about = "Diffusion planning over trajectory libraries")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Scale preset applied before the config file.
    #[arg(long, global = true, value_parser = ["smoke", "paper"])]
    pub profile: Option<String>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate the configuration and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect trajectory libraries with the model-based oracle.
    Datagen {
        /// Systems to collect (default: all of eval.systems).
        #[arg(long = "system", value_name = "SYSTEM")]
        systems: Vec<String>,
        /// Output directory for `<System>.ndjson` (default: library_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Plan one paired task and print the result as JSON.
    Plan {
        #[arg(long)]
        system: String,
        /// MBD, BSD_fix, BSD or NN.
        #[arg(long)]
        condition: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Library file (default: `<library_dir>/<System>.ndjson`).
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Run the paired benchmark and write the trial log and CSV tables.
    Eval {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip trials already present in the output's trial log.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "system", value_name = "SYSTEM")]
        systems: Vec<String>,
    },
    /// Run the estimator-theory checks; exits 1 if any bound fails.
    Theory {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn parse_systems(names: &[String], default: &[SystemId]) -> Result<Vec<SystemId>> {
    if names.is_empty() {
        return Ok(default.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        for part in n.split(',') {
            if part.eq_ignore_ascii_case("all") {
                out.extend(SystemId::ALL);
            } else {
                out.push(part.parse()?);
            }
        }
    }
    out.dedup();
    Ok(out)
}

fn resolve_out(flag: Option<PathBuf>, cfg: &RunConfig, sub: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.join(sub))
}

fn write_meta(dir: &Path, command: &str, cfg: &RunConfig, seed: u64, threads: usize) -> Result<()> {
    let params: serde_json::Map<String, serde_json::Value> = cfg
        .tagged_parameters()
        .into_iter()
        .map(|(k, (v, tag))| (k, json!({"value": v, "source": tag})))
        .collect();
    let meta = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "seed": seed,
        "profile": cfg.profile,
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "threads": threads,
        "config": cfg,
        "parameters": params,
    });
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let profile = g.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    match &g.config {
        Some(p) => RunConfig::load(p, profile),
        None => RunConfig::from_overlay(profile, json!({})),
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli.global)?;
    let threads = cli.global.threads.unwrap_or_else(rayon::current_num_threads);
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    // a second call (e.g. from tests) finds the pool already built
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();

    match cli.command {
        Command::Datagen { systems, out, seed, n } => {
            let systems = parse_systems(&systems, &cfg.eval.systems)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = n {
                cfg.datagen.n_target = n;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.library_dir.clone());
            if cli.global.dry_run {
                println!("config ok ({}); would write {} libraries to {}", cfg.hash(), systems.len(), dir.display());
                return Ok(EXIT_OK);
            }
            std::fs::create_dir_all(&dir)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
            for id in systems {
                let spec = SystemSpec::new(id);
                let start = Instant::now();
                let n_target = cfg.datagen.n_target;
                let lib = collect_library_with(&spec, &cfg.datagen, cfg.seed, |kept, attempts| {
                    if attempts % 100 == 0 {
                        eprintln!("[{id}] kept {kept}/{n_target} after {attempts} attempts");
                    }
                })?;
                let path = dir.join(format!("{}.ndjson", id.name()));
                save_library(&lib, &path)?;
                eprintln!(
                    "[{id}] wrote {} records to {} in {:.1}s",
                    lib.len(),
                    path.display(),
                    start.elapsed().as_secs_f64()
                );
            }
            write_meta(&dir, "datagen", &cfg, cfg.seed, threads)?;
            Ok(EXIT_OK)
        }
        Command::Plan {
            system,
            condition,
            seed,
            trial,
            library,
        } => {
            let id: SystemId = system.parse()?;
            let condition: Condition = condition.parse()?;
            cfg.eval.base_seed = seed;
            cfg.validate()?;
            let lib_path = library.unwrap_or_else(|| cfg.library_path(id));
            if cli.global.dry_run {
                println!("config ok ({})", cfg.hash());
                return Ok(EXIT_OK);
            }
            let lib = if condition.is_data_driven() {
                Some(load_library(&lib_path, Some(id))?)
            } else {
                None
            };
            let spec = SystemSpec::new(id);
            let rec = run_condition(&cfg.eval, &spec, condition, trial, lib.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
            Ok(EXIT_OK)
        }
        Command::Eval {
            out,
            resume,
            trials,
            seed,
            systems,
        } => {
            cfg.eval.systems = parse_systems(&systems, &cfg.eval.systems)?;
            if let Some(t) = trials {
                cfg.eval.n_trials = t;
            }
            if let Some(s) = seed {
                cfg.eval.base_seed = s;
            }
            cfg.validate()?;
            let dir = resolve_out(out, &cfg, "eval");
            let mut libraries = HashMap::new();
            if cfg.eval.conditions.iter().any(|c| c.is_data_driven()) {
                for &id in &cfg.eval.systems {
                    let p = cfg.library_path(id);
                    if !p.exists() {
                        return Err(Error::Config(format!(
                            "missing library {} (run `bsd datagen` first)",
                            p.display()
                        )));
                    }
                    if !cli.global.dry_run {
                        libraries.insert(id, load_library(&p, Some(id))?);
                    }
                }
            }
            if cli.global.dry_run {
                println!("config ok ({}); output {}", cfg.hash(), dir.display());
                return Ok(EXIT_OK);
            }
            std::fs::create_dir_all(&dir)?;
            let log = dir.join("trials.jsonl");
            let mut previous = Vec::new();
            if resume && log.exists() {
                previous = read_records(&log)?;
                // drop any group the log holds only partially
                let done = completed_groups(&previous, &cfg.eval.conditions);
                previous.retain(|r| done.contains(&(r.system_id, r.trial)));
            }
            let done = completed_groups(&previous, &cfg.eval.conditions);
            // rewrite the log so it holds exactly the kept groups
            std::fs::write(&log, "")?;
            append_records(&log, &previous)?;
            let start = Instant::now();
            let fresh = run_trials_with(&cfg.eval, &libraries, &done, |group| {
                let r = &group[0];
                eprintln!(
                    "[{}] trial {} done ({:.0}s): {}",
                    r.system_id,
                    r.trial,
                    start.elapsed().as_secs_f64(),
                    group
                        .iter()
                        .map(|g| format!("{}={:.3}", g.condition, g.reward))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
                append_records(&log, group)
            })?;
            let mut all = previous;
            all.extend(fresh);
            let table = export_figures(&all, &cfg.eval.bootstrap, &dir)?;
            for c in &table.cells {
                println!(
                    "{:<8} {:<7} mean {:.3} [{:.3}, {:.3}] safety {:.2} time {:.1} ms",
                    c.system_id.name(),
                    c.condition.name(),
                    c.mean,
                    c.ci.0,
                    c.ci.1,
                    c.safety_rate,
                    c.mean_time_ms
                );
            }
            write_meta(&dir, "eval", &cfg, cfg.eval.base_seed, threads)?;
            Ok(EXIT_OK)
        }
        Command::Theory { out, seed } => {
            if let Some(s) = seed {
                cfg.theory.seed = s;
            }
            cfg.validate()?;
            let dir = resolve_out(out, &cfg, "theory");
            if cli.global.dry_run {
                println!("config ok ({}); output {}", cfg.hash(), dir.display());
                return Ok(EXIT_OK);
            }
            let report = run_theory(&cfg.theory)?;
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("theory_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            let mut csv = String::from("check,passed,detail\n");
            for c in &report.checks {
                csv.push_str(&format!("{},{},\"{}\"\n", c.name, c.passed, c.detail.replace('"', "'")));
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            std::fs::write(dir.join("theory_checks.csv"), csv)?;
            let mut scaling = String::from("kind,x,value\n");
            for (h, b) in report.scaling.h_grid.iter().zip(&report.scaling.bias_sq) {
                scaling.push_str(&format!("bias_sq_vs_h,{h},{b}\n"));
            }
            for (n, v) in report.scaling.n_grid.iter().zip(&report.scaling.variance) {
                scaling.push_str(&format!("variance_vs_n,{n},{v}\n"));
            }
            std::fs::write(dir.join("theory_scaling.csv"), scaling)?;
            write_meta(&dir, "theory", &cfg, cfg.theory.seed, threads)?;
            Ok(if report.all_passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
    }
}
