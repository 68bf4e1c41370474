//! Vector math and the geometric primitives the critics are built on.

mod aabb;
mod hull;
mod segment;

pub use aabb::{aabb_distance, Aabb};
pub use hull::{convex_hull, hull_volume, ConvexHull};
pub use segment::{closest_points_on_segments, segment_distance};

/// World-frame vector in meters (or unitless when used as a direction).
pub type Vec3 = nalgebra::Vector3<f64>;

/// Rigid transform: translation in meters plus unit-quaternion rotation.
pub type Pose = nalgebra::Isometry3<f64>;

/// Unit quaternion orientation.
pub type Rotation = nalgebra::UnitQuaternion<f64>;

/// Global geometric tolerance in meters.
pub const GEOM_EPS: f64 = 1e-9;

/// Builds a pose from a position and an `[x, y, z, w]` quaternion, normalizing
/// the quaternion. Returns `None` for a zero or non-finite quaternion.
pub fn pose_from_parts(position: [f64; 3], xyzw: [f64; 4]) -> Option<Pose> {
    let rotation = rotation_from_xyzw(xyzw)?;
    if position.iter().any(|c| !c.is_finite()) {
        return None;
    }
    Some(Pose::from_parts(
        nalgebra::Translation3::new(position[0], position[1], position[2]),
        rotation,
    ))
}

pub fn rotation_from_xyzw(xyzw: [f64; 4]) -> Option<Rotation> {
    let [x, y, z, w] = xyzw;
    let q = nalgebra::Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    // already-unit input is kept bit-exact so serialized poses round-trip
    if (n - 1.0).abs() < 1e-12 {
        return Some(Rotation::new_unchecked(q));
    }
    Some(Rotation::from_quaternion(q))
}

pub fn rotation_to_xyzw(r: &Rotation) -> [f64; 4] {
    let q = r.quaternion();
    [q.i, q.j, q.k, q.w]
}

pub fn vec_to_array(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Serde adapter writing a [`Pose`] as `{"p": [x, y, z], "o": [x, y, z, w]}`.
pub mod pose_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{pose_from_parts, rotation_to_xyzw, Pose};

    #[derive(Serialize, Deserialize)]
    pub struct PoseDoc {
        pub p: [f64; 3],
        pub o: [f64; 4],
    }

    impl From<&Pose> for PoseDoc {
        fn from(pose: &Pose) -> Self {
            let t = pose.translation.vector;
            PoseDoc {
                p: [t.x, t.y, t.z],
                o: rotation_to_xyzw(&pose.rotation),
            }
        }
    }

    impl PoseDoc {
        pub fn to_pose(&self) -> Option<Pose> {
            pose_from_parts(self.p, self.o)
        }
    }

    pub fn serialize<S: Serializer>(pose: &Pose, s: S) -> Result<S::Ok, S::Error> {
        PoseDoc::from(pose).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pose, D::Error> {
        let doc = PoseDoc::deserialize(d)?;
        doc.to_pose()
            .ok_or_else(|| serde::de::Error::custom("pose has a zero or non-finite component"))
    }
}
