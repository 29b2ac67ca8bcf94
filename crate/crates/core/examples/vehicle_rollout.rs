//! Rolls the four vehicle models forward under the same steering command.

use bsd_planner::dynamics::{ControlSequence, SystemId, SystemSpec};

fn main() -> bsd_planner::Result<()> {
    for id in SystemId::ALL {
        let s = SystemSpec::new(id);
        let mut x0 = vec![0.0; s.n_x];
        x0[0] = 10.0;
        x0[1] = 16.0;
        // half speed forward with a gentle left turn for the whole horizon
        let u = ControlSequence::from_flat(s.n_u, [1.0, 0.2].repeat(s.horizon));
        let traj = s.rollout(&x0, &u)?;
        println!(
            "{:<8} n_x={} angles={:?} terminal={:.3?}",
            id.name(),
            s.n_x,
            s.angle_channels(),
            traj.terminal()
        );
    }
    Ok(())
}
