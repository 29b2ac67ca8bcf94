//! Plans from a trajectory library without touching the dynamics: BSD with
//! fixed and adaptive bandwidths, and nearest-neighbor retrieval.

use bsd_planner::bsd::{bsd_plan, nn_plan, BsdConfig, KernelParams};
use bsd_planner::datastore::{collect_library, CollectConfig};
use bsd_planner::dynamics::{oracle_calls, SystemId, SystemSpec};
use bsd_planner::mbd::MbdConfig;
use bsd_planner::numcore::RngStream;
use bsd_planner::parkenv::{sample_task, StartRegion};

fn main() -> bsd_planner::Result<()> {
    let s = SystemSpec::new(SystemId::Bicycle);
    let cfg = CollectConfig {
        n_target: 60,
        oracle: MbdConfig {
            n_diffuse: 20,
            candidates: 128,
            ..MbdConfig::default()
        },
        ..CollectConfig::default()
    };
    let lib = collect_library(&s, &cfg, 3)?;
    let task = sample_task(&s, &StartRegion::default(), &RngStream::new(9, 0))?;

    let before = oracle_calls();
    let fixed = BsdConfig {
        candidates: 2000,
        ..BsdConfig::default()
    };
    let adaptive = BsdConfig {
        kernel: KernelParams::adaptive(),
        ..fixed.clone()
    };
    for (name, c) in [("BSD_fix", &fixed), ("BSD", &adaptive)] {
        let out = bsd_plan(&task.x0, &task.scene, &s, &lib, c, &RngStream::new(9, 1))?;
        println!("{name:<8} reward {:.3} interventions {} {:.1} ms", out.reward, out.interventions, out.wall_time_ms);
    }
    let nn = nn_plan(&task.x0, &task.scene, &s, &lib, &KernelParams::default())?;
    println!("{:<8} reward {:.3} interventions {}", "NN", nn.reward, nn.interventions);
    println!("dynamics steps evaluated while planning: {}", oracle_calls() - before);
    Ok(())
}
