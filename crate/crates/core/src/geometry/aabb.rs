use serde::{Deserialize, Serialize};

use super::Vec3;

/// Axis-aligned bounding box. `min` is componentwise `<= max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Builds a box from two corners in any order.
    pub fn new(a: Vec3, b: Vec3) -> Self {
        Aabb {
            min: a.inf(&b),
            max: a.sup(&b),
        }
    }

    pub fn from_center_extents(center: Vec3, extents: Vec3) -> Self {
        let half = extents.abs() * 0.5;
        Aabb {
            min: center - half,
            max: center + half,
        }
    }

    /// Smallest box containing every point, or `None` for an empty iterator.
    pub fn from_points<'a, I: IntoIterator<Item = &'a Vec3>>(points: I) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in iter {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    /// Box grown by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> Self {
        let m = Vec3::repeat(margin);
        Aabb {
            min: self.min - m,
            max: self.max + m,
        }
    }

    /// Euclidean distance from a point to the box (zero inside).
    pub fn distance_to_point(&self, p: &Vec3) -> f64 {
        let mut sq = 0.0;
        for k in 0..3 {
            let d = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            sq += d * d;
        }
        sq.sqrt()
    }

    /// The eight corners, ordered by the bit pattern (x, y, z) of the index.
    pub fn corners(&self) -> [Vec3; 8] {
        std::array::from_fn(|i| {
            Vec3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }
}

/// Signed separation between two boxes.
///
/// Positive values are the Euclidean gap between disjoint boxes. When the
/// boxes touch or intersect the result is `-depth`, where `depth` is the
/// smallest per-axis translation that would separate them, so penetration is
/// exactly `value < 0`.
pub fn aabb_distance(a: &Aabb, b: &Aabb) -> f64 {
    let mut gap_sq = 0.0;
    let mut separated = false;
    let mut min_depth = f64::INFINITY;
    for k in 0..3 {
        let gap = (a.min[k] - b.max[k]).max(b.min[k] - a.max[k]);
        if gap > 0.0 {
            separated = true;
            gap_sq += gap * gap;
        } else {
            let depth = (a.max[k] - b.min[k]).min(b.max[k] - a.min[k]);
            min_depth = min_depth.min(depth);
        }
    }
    if separated {
        gap_sq.sqrt()
    } else {
        -min_depth
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_at(x: f64, y: f64, z: f64) -> Aabb {
        Aabb::new(Vec3::new(x, y, z), Vec3::new(x + 1.0, y + 1.0, z + 1.0))
    }

    #[test]
    fn gap_along_one_axis() {
        assert_abs_diff_eq!(
            aabb_distance(&unit_at(0.0, 0.0, 0.0), &unit_at(3.0, 0.0, 0.0)),
            2.0
        );
    }

    #[test]
    fn identical_unit_cubes_overlap_by_one() {
        let a = unit_at(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(aabb_distance(&a, &a), -1.0);
    }

    #[test]
    fn diagonal_corner_gap() {
        let d = aabb_distance(&unit_at(0.0, 0.0, 0.0), &unit_at(1.5, 1.5, 0.0));
        assert_abs_diff_eq!(d, (0.5f64 * 0.5 + 0.5 * 0.5).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn touching_faces_are_zero() {
        let d = aabb_distance(&unit_at(0.0, 0.0, 0.0), &unit_at(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(d, 0.0);
    }

    #[test]
    fn shallow_penetration_uses_smallest_axis() {
        let a = unit_at(0.0, 0.0, 0.0);
        let b = unit_at(0.2, 0.0, 0.99);
        assert_abs_diff_eq!(aabb_distance(&a, &b), -0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(aabb_distance(&b, &a), -0.01, epsilon = 1e-12);
    }

    #[test]
    fn corners_are_contained() {
        let bb = Aabb::new(Vec3::new(-1.0, 2.0, 0.5), Vec3::new(0.0, 3.0, 4.0));
        for c in bb.corners() {
            assert!(bb.contains(&c, 0.0));
        }
        assert_abs_diff_eq!(bb.volume(), 3.5);
    }
}
