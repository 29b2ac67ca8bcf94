//! Builds a parking scene, probes the safe set, and shows the shield
//! stopping a trajectory at the wall.

use bsd_planner::dynamics::{ControlSequence, SystemId, SystemSpec};
use bsd_planner::parkenv::{all_but, build_scene, reward};
use bsd_planner::shield::shielded_rollout;

fn main() -> bsd_planner::Result<()> {
    let s = SystemSpec::new(SystemId::Tt2d);
    let scene = build_scene(5, all_but(5), &s)?;
    println!(
        "goal space {} at {:?}, {} obstacles",
        scene.goal_space_index,
        scene.goal_pose,
        scene.obstacles.len()
    );
    println!("goal pose safe: {}", scene.is_safe(&scene.goal_pose, &s));
    println!("lot corner safe: {}", scene.is_safe(&[0.5, 0.5, 0.0, 0.0], &s));

    // drive straight at the right wall
    let x0 = [20.0, 16.0, 0.0, 0.0];
    let u = ControlSequence::from_flat(2, [3.0, 0.0].repeat(s.horizon));
    let out = shielded_rollout(&s, &x0, &u, &scene)?;
    println!(
        "wall run: {} interventions, stopped at {:.2?}, reward {:.3}",
        out.interventions,
        out.states.terminal(),
        reward(&out.states, &scene)
    );
    Ok(())
}
