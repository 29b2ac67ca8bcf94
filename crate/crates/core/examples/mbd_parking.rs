//! Model-based diffusion on one sampled parking task.

use bsd_planner::dynamics::{SystemId, SystemSpec};
use bsd_planner::mbd::{mbd_plan, MbdConfig};
use bsd_planner::numcore::RngStream;
use bsd_planner::parkenv::{sample_task, StartRegion};

fn main() -> bsd_planner::Result<()> {
    let s = SystemSpec::new(SystemId::Bicycle);
    let task = sample_task(&s, &StartRegion::default(), &RngStream::new(1, 0))?;
    let cfg = MbdConfig {
        candidates: 1000,
        ..MbdConfig::default()
    };
    let out = mbd_plan(&task.x0, &task.scene, &s, &cfg, &RngStream::new(1, 1))?;
    println!("start {:.2?} -> goal {:.2?}", task.x0, task.scene.goal_pose);
    println!(
        "reward {:.3}, interventions {}, {:.0} ms, terminal {:.2?}",
        out.reward,
        out.interventions,
        out.wall_time_ms,
        out.states.terminal()
    );
    let t = &out.reward_trace;
    println!("best candidate reward: first step {:.3}, last step {:.3}", t[0], t[t.len() - 1]);
    Ok(())
}
