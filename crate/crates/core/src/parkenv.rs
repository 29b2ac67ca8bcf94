//! Parking scenario: lot layout, vehicle footprints, the safe-set predicate,
//! initial-state sampling and the trajectory reward.
//!
//! Layout: a 32 m × 32 m lot bounded by 1 m thick walls. Sixteen 3 m × 6 m
//! spaces form two facing rows of eight, separated by a 12 m aisle. Vehicles
//! park nose-in: row 0 (bottom) faces −y, row 1 (top) faces +y.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, StateTrajectory, SystemId, SystemSpec};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Obb, Polygon};
use crate::numcore::RngStream;

pub const LOT_SIZE: f64 = 32.0;
pub const WALL_THICKNESS: f64 = 1.0;
pub const SPACE_WIDTH: f64 = 3.0;
pub const SPACE_DEPTH: f64 = 6.0;
pub const AISLE_WIDTH: f64 = 12.0;
pub const N_COLUMNS: usize = 8;
pub const N_SPACES: usize = 16;
pub const DEFAULT_MARGIN: f64 = 0.1;

/// Reward scale: the maximum attainable reward.
pub const REWARD_SCALE: f64 = 6.0;
pub const REWARD_RUNNING_WEIGHT: f64 = 0.3;
pub const REWARD_TERMINAL_WEIGHT: f64 = 0.7;
/// Length scale of the goal-distance term (m).
pub const REWARD_DISTANCE_SCALE: f64 = 4.0;
/// Angular scale of the heading term (rad).
pub const REWARD_HEADING_SCALE: f64 = 1.0;

const MAX_REJECTIONS: usize = 10_000;

/// One rigid body of a vehicle, relative to its reference point (the rear
/// axle for the tractor, the axle for each trailer).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyRect {
    pub length: f64,
    pub width: f64,
    /// Longitudinal offset of the rectangle center ahead of the reference point.
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleGeometry {
    pub bodies: Vec<BodyRect>,
}

impl VehicleGeometry {
    pub fn for_system(id: SystemId) -> Self {
        let tractor = BodyRect {
            length: 3.5,
            width: 1.6,
            offset: 1.25,
        };
        let trailer = BodyRect {
            length: 2.5,
            width: 1.6,
            offset: 0.0,
        };
        let mut bodies = vec![tractor];
        bodies.extend(std::iter::repeat(trailer).take(id.body_count() - 1));
        Self { bodies }
    }
}

/// Oriented rectangles for every body posed from the state's pose chain.
pub fn body_boxes(state: &[f64], system: &SystemSpec) -> Vec<Obb> {
    let mut out = Vec::with_capacity(system.geometry.bodies.len());
    for_each_body(state, system, |obb| {
        out.push(obb);
        true
    });
    out
}

/// Calls `f` per body until it returns false; returns whether all calls passed.
fn for_each_body(state: &[f64], system: &SystemSpec, mut f: impl FnMut(Obb) -> bool) -> bool {
    let headings = system.body_headings(state);
    let mut reference = [state[0], state[1]];
    for (k, body) in system.geometry.bodies.iter().enumerate() {
        let th = headings[k];
        if k > 0 {
            let d = system.params.hitch_lengths[k - 1];
            reference = [reference[0] - d * th.cos(), reference[1] - d * th.sin()];
        }
        let center = [
            reference[0] + body.offset * th.cos(),
            reference[1] + body.offset * th.sin(),
        ];
        if !f(Obb::new(center, body.length, body.width, th)) {
            return false;
        }
    }
    true
}

pub fn footprints(state: &[f64], system: &SystemSpec) -> Vec<Polygon> {
    body_boxes(state, system).iter().map(Obb::polygon).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleKind {
    Wall,
    Space(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub kind: ObstacleKind,
    pub bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingSpace {
    pub index: usize,
    pub row: usize,
    pub column: usize,
    pub bounds: Aabb,
    /// Heading of a vehicle parked nose-in.
    pub heading: f64,
}

impl ParkingSpace {
    pub fn center(&self) -> [f64; 2] {
        self.bounds.center()
    }
}

/// The fixed space layout shared by every scene.
pub fn space_layout() -> Vec<ParkingSpace> {
    let x0 = 0.5 * (LOT_SIZE - N_COLUMNS as f64 * SPACE_WIDTH);
    let y_row0 = 0.5 * (LOT_SIZE - 2.0 * SPACE_DEPTH - AISLE_WIDTH);
    let y_row1 = y_row0 + SPACE_DEPTH + AISLE_WIDTH;
    (0..N_SPACES)
        .map(|index| {
            let row = index / N_COLUMNS;
            let column = index % N_COLUMNS;
            let xl = x0 + column as f64 * SPACE_WIDTH;
            let yb = if row == 0 { y_row0 } else { y_row1 };
            ParkingSpace {
                index,
                row,
                column,
                bounds: Aabb::new([xl, yb], [xl + SPACE_WIDTH, yb + SPACE_DEPTH]),
                heading: if row == 0 { -FRAC_PI_2 } else { FRAC_PI_2 },
            }
        })
        .collect()
}

fn walls() -> [Aabb; 4] {
    let (l, t) = (LOT_SIZE, WALL_THICKNESS);
    [
        Aabb::new([0.0, 0.0], [l, t]),
        Aabb::new([0.0, l - t], [l, l]),
        Aabb::new([0.0, 0.0], [t, l]),
        Aabb::new([l - t, 0.0], [l, l]),
    ]
}

/// Bitmask with every space except `goal` occupied.
pub fn all_but(goal: usize) -> u16 {
    !(1u16 << goal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingScene {
    pub system: SystemId,
    pub lot: Aabb,
    pub spaces: Vec<ParkingSpace>,
    pub goal_space_index: usize,
    pub occupied: u16,
    pub obstacles: Vec<Obstacle>,
    pub goal_pose: Vec<f64>,
    pub margin: f64,
}

pub fn build_scene(goal_space_index: usize, occupied: u16, system: &SystemSpec) -> Result<ParkingScene> {
    if goal_space_index >= N_SPACES {
        return Err(Error::Config(format!("goal space {goal_space_index} out of range")));
    }
    if occupied & (1 << goal_space_index) != 0 {
        return Err(Error::Config(format!("goal space {goal_space_index} is occupied")));
    }
    let spaces = space_layout();
    let mut obstacles: Vec<Obstacle> = walls()
        .into_iter()
        .map(|bounds| Obstacle {
            kind: ObstacleKind::Wall,
            bounds,
        })
        .collect();
    for s in &spaces {
        if occupied & (1 << s.index) != 0 {
            obstacles.push(Obstacle {
                kind: ObstacleKind::Space(s.index),
                bounds: s.bounds,
            });
        }
    }
    let goal = &spaces[goal_space_index];
    let mut goal_pose = vec![0.0; system.n_x];
    let c = goal.center();
    goal_pose[0] = c[0];
    goal_pose[1] = c[1];
    for k in 0..system.id.body_count() {
        goal_pose[2 + k] = goal.heading;
    }
    Ok(ParkingScene {
        system: system.id,
        lot: Aabb::new([0.0, 0.0], [LOT_SIZE, LOT_SIZE]),
        spaces,
        goal_space_index,
        occupied,
        obstacles,
        goal_pose,
        margin: DEFAULT_MARGIN,
    })
}

impl ParkingScene {
    /// Per-state goal score `g(x) ∈ (0, 1]`: position distance and lead heading.
    pub fn goal_score(&self, x: &[f64]) -> f64 {
        let g = &self.goal_pose;
        let dist = ((x[0] - g[0]).powi(2) + (x[1] - g[1]).powi(2)).sqrt();
        let dth = wrap_angle(x[2] - g[2]).abs();
        (-dist / REWARD_DISTANCE_SCALE).exp() * (-dth / REWARD_HEADING_SCALE).exp()
    }

    pub fn is_safe(&self, x: &[f64], system: &SystemSpec) -> bool {
        is_safe(x, self, system, self.margin)
    }

    pub fn goal_position(&self) -> [f64; 2] {
        [self.goal_pose[0], self.goal_pose[1]]
    }
}

/// Membership in the safe set at the given collision margin.
pub fn is_safe(x: &[f64], scene: &ParkingScene, system: &SystemSpec, margin: f64) -> bool {
    if x.len() != system.n_x || x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let headings = system.body_headings(x);
    for pair in headings.windows(2) {
        if wrap_angle(pair[0] - pair[1]).abs() > system.params.hitch_limit {
            return false;
        }
    }
    for_each_body(x, system, |body| {
        let inflated = body.inflated(margin);
        if !scene.lot.contains(&inflated.bounding_box()) {
            // the box is conservative; check the exact corners
            let inside = inflated.corners().iter().all(|p| {
                p[0] >= scene.lot.min[0]
                    && p[0] <= scene.lot.max[0]
                    && p[1] >= scene.lot.min[1]
                    && p[1] <= scene.lot.max[1]
            });
            if !inside {
                return false;
            }
        }
        !scene.obstacles.iter().any(|o| inflated.overlaps_aabb(&o.bounds))
    })
}

/// Trajectory reward in `(0, REWARD_SCALE]`.
///
/// `R = 6 · [0.3 · mean_{t=1..H} g(x_t) + 0.7 · g(x_H)]`.
pub fn reward(states: &StateTrajectory, scene: &ParkingScene) -> f64 {
    reward_rows(states.rows().skip(1), scene)
}

pub(crate) fn reward_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, scene: &ParkingScene) -> f64 {
    let mut acc = RewardAccumulator::default();
    for row in rows {
        acc.push(scene.goal_score(row));
    }
    acc.finish()
}

/// Incremental form of [`reward`] shared by fused rollout loops.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct RewardAccumulator {
    sum: f64,
    last: f64,
    count: usize,
}

impl RewardAccumulator {
    pub fn push(&mut self, g: f64) {
        self.sum += g;
        self.last = g;
        self.count += 1;
    }

    pub fn finish(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        REWARD_SCALE
            * (REWARD_RUNNING_WEIGHT * (self.sum / self.count as f64)
                + REWARD_TERMINAL_WEIGHT * self.last)
    }
}

/// Rejection-samples a safe initial state: uniform position over the lot,
/// uniform heading, trailers aligned, zero velocity.
pub fn sample_initial_state(scene: &ParkingScene, system: &SystemSpec, stream: &RngStream) -> Result<Vec<f64>> {
    let mut rng = stream.rng();
    for _ in 0..MAX_REJECTIONS {
        let mut x = vec![0.0; system.n_x];
        x[0] = rng.gen_range(scene.lot.min[0]..scene.lot.max[0]);
        x[1] = rng.gen_range(scene.lot.min[1]..scene.lot.max[1]);
        let th = wrap_angle(rng.gen_range(-PI..PI));
        for k in 0..system.id.body_count() {
            x[2 + k] = th;
        }
        if scene.is_safe(&x, system) {
            return Ok(x);
        }
    }
    Err(Error::NoFreeSpace(MAX_REJECTIONS))
}

/// Where benchmark tasks start: a window of the aisle in front of the goal
/// space, with the lead heading jittered around the goal heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartRegion {
    /// Half-width of the window along the aisle, centered on the goal space (m).
    pub along: f64,
    /// Range of distances from the goal space's aisle edge into the aisle (m).
    pub depth: (f64, f64),
    /// Lead heading is the goal heading plus a uniform offset within ±this (rad).
    pub heading_spread: f64,
}

impl Default for StartRegion {
    fn default() -> Self {
        Self {
            along: 2.0,
            depth: (3.0, 6.0),
            heading_spread: PI / 8.0,
        }
    }
}

/// Rejection-samples a safe start from `region` for the scene's goal space.
pub fn sample_start_in(
    region: &StartRegion,
    scene: &ParkingScene,
    system: &SystemSpec,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    let goal = &scene.spaces[scene.goal_space_index];
    let c = goal.center();
    // the aisle side of a row-0 space is its top edge, of a row-1 space its bottom edge
    let (edge, dir) = if goal.row == 0 {
        (goal.bounds.max[1], 1.0)
    } else {
        (goal.bounds.min[1], -1.0)
    };
    let mut rng = stream.rng();
    for _ in 0..MAX_REJECTIONS {
        let mut x = vec![0.0; system.n_x];
        x[0] = c[0] + rng.gen_range(-region.along..=region.along);
        x[1] = edge + dir * rng.gen_range(region.depth.0..=region.depth.1);
        let th = wrap_angle(goal.heading + rng.gen_range(-region.heading_spread..=region.heading_spread));
        for k in 0..system.id.body_count() {
            x[2 + k] = th;
        }
        if scene.is_safe(&x, system) {
            return Ok(x);
        }
    }
    Err(Error::NoFreeSpace(MAX_REJECTIONS))
}

/// A parking task: a scene and a safe start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub scene: ParkingScene,
    pub x0: Vec<f64>,
}

/// Goal space uniform over all 16, every other space occupied, start drawn
/// from `region`.
pub fn sample_task(system: &SystemSpec, region: &StartRegion, stream: &RngStream) -> Result<Task> {
    let goal = stream.child(&[1]).rng().gen_range(0..N_SPACES);
    let scene = build_scene(goal, all_but(goal), system)?;
    let x0 = sample_start_in(region, &scene, system, &stream.child(&[2]))?;
    Ok(Task { scene, x0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bike() -> SystemSpec {
        SystemSpec::new(SystemId::Bicycle)
    }

    #[test]
    fn scene_counts() {
        let s = bike();
        let empty = build_scene(0, 0, &s).unwrap();
        assert_eq!(empty.obstacles.len(), 4);
        assert!(empty.obstacles.iter().all(|o| o.kind == ObstacleKind::Wall));
        let full = build_scene(5, all_but(5), &s).unwrap();
        assert_eq!(full.obstacles.len(), 19);
        assert!(build_scene(5, 1 << 5, &s).is_err());
        assert!(build_scene(16, 0, &s).is_err());
    }

    #[test]
    fn goal_pose_space_three() {
        let s = SystemSpec::new(SystemId::AccTt2d);
        let scene = build_scene(3, all_but(3), &s).unwrap();
        // columns start at x = 4, rows at y = 4 and y = 22
        assert_eq!(scene.goal_pose, vec![14.5, 7.0, -FRAC_PI_2, -FRAC_PI_2, 0.0, 0.0]);
        let top = build_scene(11, 0, &s).unwrap();
        assert_eq!(&top.goal_pose[..3], &[14.5, 25.0, FRAC_PI_2]);
    }

    #[test]
    fn layout_invariants() {
        let spaces = space_layout();
        for a in &spaces {
            for b in &spaces {
                if a.index != b.index {
                    assert!(!a.bounds.overlaps(&b.bounds));
                }
            }
        }
        let scene = build_scene(0, all_but(0), &bike()).unwrap();
        for o in &scene.obstacles {
            assert!(scene.lot.contains(&o.bounds));
        }
    }

    #[test]
    fn footprint_axis_aligned_and_rotated() {
        let s = bike();
        let f = footprints(&[0.0, 0.0, 0.0], &s);
        assert_eq!(f.len(), 1);
        let c = f[0].centroid();
        assert!((c[0] - 1.25).abs() < 1e-12 && c[1].abs() < 1e-12);
        let xs: Vec<f64> = f[0].vertices.iter().map(|v| v[0]).collect();
        assert!((xs.iter().cloned().fold(f64::MIN, f64::max) - 3.0).abs() < 1e-12);
        assert!((xs.iter().cloned().fold(f64::MAX, f64::min) + 0.5).abs() < 1e-12);

        let r = footprints(&[0.0, 0.0, FRAC_PI_2], &s);
        let c = r[0].centroid();
        assert!(c[0].abs() < 1e-12 && (c[1] - 1.25).abs() < 1e-12);
        for (a, b) in f[0].vertices.iter().zip(&r[0].vertices) {
            // rotation by +90°: (x, y) -> (-y, x)
            assert!((b[0] + a[1]).abs() < 1e-12 && (b[1] - a[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn trailer_behind_tractor() {
        let s = SystemSpec::new(SystemId::Tt2d);
        let f = footprints(&[10.0, 10.0, 0.0, 0.0], &s);
        assert_eq!(f.len(), 2);
        let c = f[1].centroid();
        assert!((c[0] - 7.0).abs() < 1e-12 && (c[1] - 10.0).abs() < 1e-12);
        let n = SystemSpec::new(SystemId::NTrailer);
        let f = footprints(&[10.0, 10.0, 0.0, 0.0, 0.0], &n);
        assert!((f[2].centroid()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn safety_cases() {
        let s = bike();
        let empty = build_scene(0, 0, &s).unwrap();
        assert!(empty.is_safe(&[16.0, 16.0, 0.3], &s));
        let full = build_scene(0, all_but(0), &s).unwrap();
        let c = full.spaces[4].center();
        assert!(!full.is_safe(&[c[0], c[1], -FRAC_PI_2], &s));
        assert!(!full.is_safe(&[f64::NAN, 16.0, 0.0], &s));
        // parked in the free goal space is safe
        let g = full.goal_pose.clone();
        assert!(full.is_safe(&g, &s));
    }

    #[test]
    fn margin_grazing() {
        // Vehicle heading +x in the aisle, sliding toward the bottom row's top
        // edge (y = 10). Its right side sits at y - 0.8.
        let s = bike();
        let scene = build_scene(0, all_but(0), &s).unwrap();
        let eps = 1e-6;
        let m = DEFAULT_MARGIN;
        let x_mid = 17.0;
        let at_gap = |gap: f64| [x_mid, 10.0 + 0.8 + gap, 0.0];
        assert!(!scene.is_safe(&at_gap(m - eps), &s));
        assert!(scene.is_safe(&at_gap(m + eps), &s));
    }

    #[test]
    fn hitch_limit() {
        let s = SystemSpec::new(SystemId::Tt2d);
        let scene = build_scene(0, 0, &s).unwrap();
        assert!(scene.is_safe(&[16.0, 16.0, 0.0, 1.1], &s));
        assert!(!scene.is_safe(&[16.0, 16.0, 0.0, 1.3], &s));
    }

    #[test]
    fn reward_examples() {
        let s = bike();
        let scene = build_scene(2, all_but(2), &s).unwrap();
        let at_goal = StateTrajectory::constant(&scene.goal_pose, 51);
        assert_eq!(reward(&at_goal, &scene), 6.0);
        let mut off = scene.goal_pose.clone();
        off[1] += 4.0;
        let r = reward(&StateTrajectory::constant(&off, 51), &scene);
        assert!((r - 6.0 * (-1f64).exp()).abs() < 1e-12);
        assert!((r - 2.207).abs() < 1e-3);

        let mut prev = f64::INFINITY;
        for d in [0.0, 0.5, 1.0, 3.0, 10.0] {
            let mut rows = vec![scene.goal_pose.clone(); 51];
            rows[50][0] += d;
            let r = reward(&StateTrajectory::from_rows(&rows), &scene);
            assert!(r < prev && r > 0.0);
            prev = r;
        }
    }

    #[test]
    fn sampling_invariants() {
        let s = SystemSpec::new(SystemId::Tt2d);
        let scene = build_scene(6, all_but(6), &s).unwrap();
        let root = RngStream::new(5, 0);
        let a = sample_initial_state(&scene, &s, &root.child(&[1])).unwrap();
        let b = sample_initial_state(&scene, &s, &root.child(&[1])).unwrap();
        assert_eq!(a, b);
        assert!(scene.is_safe(&a, &s));
        assert_eq!(a[2], a[3]);

        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for i in 0..1000 {
            let x = sample_initial_state(&scene, &s, &root.child(&[100 + i])).unwrap();
            assert!(scene.is_safe(&x, &s));
            for c in 0..2 {
                lo[c] = lo[c].min(x[c]);
                hi[c] = hi[c].max(x[c]);
            }
        }
        let free = (LOT_SIZE - 2.0 * WALL_THICKNESS).powi(2);
        let covered = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        assert!(covered / free >= 0.5, "coverage {}", covered / free);
    }
}
