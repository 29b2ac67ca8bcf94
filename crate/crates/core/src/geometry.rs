//! Planar convex geometry: oriented and axis-aligned rectangles and a
//! separating-axis overlap test.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn half_extents(&self) -> Point {
        [
            0.5 * (self.max[0] - self.min[0]),
            0.5 * (self.max[1] - self.min[1]),
        ]
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min[0] < other.max[0]
            && other.min[0] < self.max[0]
            && self.min[1] < other.max[1]
            && other.min[1] < self.max[1]
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        other.min[0] >= self.min[0]
            && other.max[0] <= self.max[0]
            && other.min[1] >= self.min[1]
            && other.max[1] <= self.max[1]
    }

    pub fn polygon(&self) -> Polygon {
        Polygon::new(vec![
            [self.min[0], self.min[1]],
            [self.max[0], self.min[1]],
            [self.max[0], self.max[1]],
            [self.min[0], self.max[1]],
        ])
    }
}

/// Rectangle with arbitrary heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obb {
    pub center: Point,
    /// Half length along the heading axis and half width across it.
    pub half: Point,
    pub cos: f64,
    pub sin: f64,
}

impl Obb {
    pub fn new(center: Point, length: f64, width: f64, heading: f64) -> Self {
        Self {
            center,
            half: [0.5 * length, 0.5 * width],
            cos: heading.cos(),
            sin: heading.sin(),
        }
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            half: [self.half[0] + margin, self.half[1] + margin],
            ..*self
        }
    }

    /// Corners in counter-clockwise order starting at rear-right.
    pub fn corners(&self) -> [Point; 4] {
        let [c0, c1] = self.center;
        let (ux, uy) = (self.cos * self.half[0], self.sin * self.half[0]);
        let (vx, vy) = (-self.sin * self.half[1], self.cos * self.half[1]);
        [
            [c0 - ux - vx, c1 - uy - vy],
            [c0 + ux - vx, c1 + uy - vy],
            [c0 + ux + vx, c1 + uy + vy],
            [c0 - ux + vx, c1 - uy + vy],
        ]
    }

    pub fn bounding_box(&self) -> Aabb {
        let ex = (self.cos * self.half[0]).abs() + (self.sin * self.half[1]).abs();
        let ey = (self.sin * self.half[0]).abs() + (self.cos * self.half[1]).abs();
        Aabb::new(
            [self.center[0] - ex, self.center[1] - ey],
            [self.center[0] + ex, self.center[1] + ey],
        )
    }

    /// Separating-axis test specialized to an axis-aligned partner.
    pub fn overlaps_aabb(&self, other: &Aabb) -> bool {
        if !self.bounding_box().overlaps(other) {
            return false;
        }
        let c = other.center();
        let h = other.half_extents();
        let d = [c[0] - self.center[0], c[1] - self.center[1]];
        // own heading axis
        let proj_d = (d[0] * self.cos + d[1] * self.sin).abs();
        let r_other = h[0] * self.cos.abs() + h[1] * self.sin.abs();
        if proj_d >= self.half[0] + r_other {
            return false;
        }
        // own lateral axis
        let proj_d = (-d[0] * self.sin + d[1] * self.cos).abs();
        let r_other = h[0] * self.sin.abs() + h[1] * self.cos.abs();
        if proj_d >= self.half[1] + r_other {
            return false;
        }
        true
    }

    pub fn polygon(&self) -> Polygon {
        Polygon::new(self.corners().to_vec())
    }
}

/// Convex polygon with vertices in order (either orientation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Self {
        Self { vertices }
    }

    fn project(&self, axis: Point) -> (f64, f64) {
        self.vertices
            .iter()
            .map(|v| v[0] * axis[0] + v[1] * axis[1])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p), hi.max(p))
            })
    }

    fn edge_normals(&self) -> impl Iterator<Item = Point> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            [-(b[1] - a[1]), b[0] - a[0]]
        })
    }

    /// Interiors intersect; touching boundaries do not count.
    pub fn intersects(&self, other: &Polygon) -> bool {
        for axis in self.edge_normals().chain(other.edge_normals()) {
            let (a_lo, a_hi) = self.project(axis);
            let (b_lo, b_hi) = other.project(axis);
            if a_hi <= b_lo || b_hi <= a_lo {
                return false;
            }
        }
        true
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
        [sx / n, sy / n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn touching_is_not_overlap() {
        let a = Aabb::new([0.0, 0.0], [1.0, 1.0]);
        let b = Obb::new([1.5, 0.5], 1.0, 1.0, 0.0);
        assert!(!b.overlaps_aabb(&a));
        assert!(!b.polygon().intersects(&a.polygon()));
        let c = Obb::new([1.49, 0.5], 1.0, 1.0, 0.0);
        assert!(c.overlaps_aabb(&a));
    }

    #[test]
    fn rotated_corner_miss() {
        // diamond whose tip stops short of the box corner region
        let a = Aabb::new([0.0, 0.0], [1.0, 1.0]);
        let d = Obb::new([1.7, 1.7], 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        assert!(!d.overlaps_aabb(&a));
        assert!(!d.polygon().intersects(&a.polygon()));
    }

    proptest! {
        #[test]
        fn fast_path_agrees_with_general_sat(
            cx in -3.0f64..3.0, cy in -3.0f64..3.0,
            len in 0.2f64..4.0, wid in 0.2f64..2.0, th in -3.2f64..3.2,
            bx in -2.0f64..2.0, by in -2.0f64..2.0, bw in 0.1f64..3.0, bh in 0.1f64..3.0,
        ) {
            let o = Obb::new([cx, cy], len, wid, th);
            let a = Aabb::new([bx, by], [bx + bw, by + bh]);
            prop_assert_eq!(o.overlaps_aabb(&a), o.polygon().intersects(&a.polygon()));
        }
    }
}
