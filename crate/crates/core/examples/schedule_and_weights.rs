//! Noise schedules and the log-domain weight primitives every planner uses.

use bsd_planner::numcore::{draw_gaussian, make_schedule, normalize_log_weights, softmax_select, RngStream, ScheduleShape};

fn main() -> bsd_planner::Result<()> {
    for shape in [ScheduleShape::LinearLog, ScheduleShape::Cosine] {
        let s = make_schedule(6, 1.0, 0.02, shape)?;
        println!("{shape:?}: {:?}", s.descending());
    }

    // huge log-weights normalize without overflow
    let w = normalize_log_weights(&[1000.0, 1000.0 + 3f64.ln(), f64::NEG_INFINITY])?;
    println!("normalized {:?} entropy {:.4}", w.normalized, w.entropy());

    let rewards = [4.1, 4.3, 5.0, 2.2];
    for tau in [1.0, 0.1, 0.01] {
        let p = softmax_select(&rewards, tau)?;
        println!("tau {tau:<5} -> {:.3?}", p.normalized);
    }

    let stream = RngStream::new(7, 1);
    let a = draw_gaussian(&[2, 3], &stream);
    let b = draw_gaussian(&[2, 3], &stream);
    assert_eq!(a, b);
    println!("same stream, same draws: {:.3?}", a);
    println!("child stream: {:.3?}", draw_gaussian(&[3], &stream.child(&[1, 2])));
    Ok(())
}
