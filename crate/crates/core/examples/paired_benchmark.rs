//! A miniature paired benchmark: every condition plans the same tasks, then
//! the records become a summary table and CSV files.

use std::collections::HashMap;

use bsd_planner::datastore::{collect_library, CollectConfig};
use bsd_planner::dynamics::{SystemId, SystemSpec};
use bsd_planner::eval::{export_figures, run_trials, EvalConfig};
use bsd_planner::mbd::MbdConfig;

fn main() -> bsd_planner::Result<()> {
    let id = SystemId::Bicycle;
    let small = MbdConfig {
        n_diffuse: 20,
        candidates: 128,
        ..MbdConfig::default()
    };
    let lib = collect_library(
        &SystemSpec::new(id),
        &CollectConfig {
            n_target: 60,
            oracle: small.clone(),
            ..CollectConfig::default()
        },
        1,
    )?;
    let mut cfg = EvalConfig {
        systems: vec![id],
        n_trials: 3,
        mbd: MbdConfig {
            candidates: 500,
            ..small
        },
        ..EvalConfig::default()
    };
    cfg.bsd_fix.candidates = 500;
    cfg.bsd.candidates = 500;
    cfg.bootstrap.resamples = 2000;

    let records = run_trials(&cfg, &HashMap::from([(id, lib)]))?;
    let out = std::env::temp_dir().join("bsd-paired-example");
    let table = export_figures(&records, &cfg.bootstrap, &out)?;
    for c in &table.cells {
        println!(
            "{:<7} mean {:.3} [{:.3}, {:.3}] safe {:.2}",
            c.condition.name(),
            c.mean,
            c.ci.0,
            c.ci.1,
            c.safety_rate
        );
    }
    println!("CSV tables in {}", out.display());
    Ok(())
}
