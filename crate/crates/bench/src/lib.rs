//! Shared inputs for the benchmarks.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robocheck_core::geometry::Vec3;
use robocheck_core::kinematics::RobotModel;
use robocheck_core::program::{interpret, parse_program, InterpreterConfig, Trajectory};
use robocheck_core::scene::Scene;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(rel)
}

pub fn recycling_scene() -> Scene {
    Scene::from_file(fixture("scenes/recycling.json")).expect("fixture scene")
}

pub fn recycling_source() -> String {
    std::fs::read_to_string(fixture("programs/recycling.rc")).expect("fixture program")
}

pub fn recycling_trajectory(scene: &Scene, model: &RobotModel) -> Trajectory {
    let program = parse_program(&recycling_source()).expect("fixture parses");
    interpret(&program, scene, model, &InterpreterConfig::default()).expect("fixture interprets")
}

/// Seeded uniform points in a box of half-width `r`.
pub fn cloud(n: usize, r: f64, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-r..r),
                rng.random_range(-r..r),
                rng.random_range(-r..r),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_load() {
        let scene = recycling_scene();
        assert!(!recycling_trajectory(&scene, &RobotModel::ur_class())
            .states
            .is_empty());
        assert_eq!(cloud(10, 1.0, 1), cloud(10, 1.0, 1));
    }
}
