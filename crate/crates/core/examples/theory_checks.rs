//! Runs the estimator-theory checks at reduced size and prints each verdict.

use bsd_planner::theory::{run_theory, TheoryConfig};

fn main() -> bsd_planner::Result<()> {
    let cfg = TheoryConfig {
        consistency_seeds: 10,
        safety_sources: 200,
        ..TheoryConfig::default()
    };
    let report = run_theory(&cfg)?;
    for c in &report.checks {
        println!("{} {:<22} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for row in &report.deepc.rows {
        println!(
            "beta = {:>5} x scale: written-objective residual {:.2e}, per-column residual {:.2e}",
            row.beta_rel, row.residual_written, row.residual_per_column
        );
    }
    Ok(())
}
