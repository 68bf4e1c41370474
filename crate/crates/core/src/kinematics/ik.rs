use nalgebra::{DMatrix, DVector};

use super::{chain, check_len, finger_direction, jacobian_of, JointVector, KinematicsError};
use crate::geometry::Vec3;
use crate::kinematics::RobotModel;

/// Tuning for [`solve_ik_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct IkOptions {
    /// Acceptance tolerance on end-effector position (m).
    pub position_tolerance: f64,
    /// Acceptance tolerance on finger direction (degrees).
    pub angle_tolerance_deg: f64,
    /// Iteration cap per start configuration.
    pub max_iterations: usize,
    /// Initial damping factor.
    pub initial_damping: f64,
    /// Meters of position error equivalent to one radian of direction error.
    pub direction_weight: f64,
    /// Extra deterministic start configurations tried after the seed fails.
    pub restarts: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            position_tolerance: 1e-3,
            angle_tolerance_deg: 2.0,
            max_iterations: 200,
            initial_damping: 0.05,
            direction_weight: 0.2,
            restarts: 8,
        }
    }
}

/// Damped-least-squares IK with default options.
pub fn solve_ik(
    model: &RobotModel,
    target_pos: &Vec3,
    target_dir: Option<&Vec3>,
    seed: &[f64],
) -> Result<JointVector, KinematicsError> {
    solve_ik_with(model, target_pos, target_dir, seed, &IkOptions::default())
}

struct Residual {
    pos: Vec3,
    rot: Vec3,
    angle: f64,
}

impl Residual {
    fn cost(&self, w: f64) -> f64 {
        self.pos.norm_squared() + w * w * self.rot.norm_squared()
    }
}

fn residual(model: &RobotModel, q: &[f64], target: &Vec3, dir: Option<&Vec3>) -> Residual {
    let state = chain(model, q);
    residual_of(model, &state.links[model.ee_link_index()], target, dir)
}

fn residual_of(
    model: &RobotModel,
    ee: &crate::geometry::Pose,
    target: &Vec3,
    dir: Option<&Vec3>,
) -> Residual {
    let pos = target - ee.translation.vector;
    match dir {
        Some(d) => {
            let cur = finger_direction(model, ee);
            let rot = cur.cross(d);
            let angle = rot.norm().atan2(cur.dot(d));
            // antiparallel: cross product vanishes, push about any perpendicular
            let rot = if angle > 3.0 && rot.norm() < 1e-6 {
                let perp = if cur.x.abs() < 0.9 {
                    Vec3::x()
                } else {
                    Vec3::y()
                };
                cur.cross(&perp).normalize() * angle
            } else {
                rot
            };
            Residual { pos, rot, angle }
        }
        None => Residual {
            pos,
            rot: Vec3::zeros(),
            angle: 0.0,
        },
    }
}

/// Solves for joint angles placing the end effector at `target_pos` and, when
/// given, aligning the finger axis with `target_dir`.
///
/// Damping starts at `initial_damping`, halves after every accepted step and
/// doubles after every rejected one. Joint limits are enforced by clamping
/// inside each iteration. If the seed does not converge within the iteration
/// cap, a fixed sequence of alternative start configurations is tried.
pub fn solve_ik_with(
    model: &RobotModel,
    target_pos: &Vec3,
    target_dir: Option<&Vec3>,
    seed: &[f64],
    opts: &IkOptions,
) -> Result<JointVector, KinematicsError> {
    check_len(model, seed)?;
    let dir = match target_dir {
        Some(d) if d.norm() > 1e-12 => Some(d.normalize()),
        _ => None,
    };
    let dir = dir.as_ref();
    let angle_tol = opts.angle_tolerance_deg.to_radians();

    let base = model.base().translation.vector;
    if (target_pos - base).norm() > model.reach() || !target_pos.iter().all(|c| c.is_finite()) {
        let r = residual(model, seed, target_pos, dir);
        return Err(KinematicsError::Unreachable {
            best_position_error: r.pos.norm(),
            best_angle_error_deg: r.angle.to_degrees(),
        });
    }

    let r0 = residual(model, seed, target_pos, dir);
    if r0.pos.norm() < opts.position_tolerance && r0.angle < angle_tol {
        return Ok(JointVector(seed.to_vec()));
    }

    let limits = model.limits();
    let mut best: Option<(f64, Residual)> = None;
    let mut rng = SplitMix64(0x5eed_1c0d_e5ee_d001);
    for attempt in 0..=opts.restarts {
        let start: Vec<f64> = if attempt == 0 {
            seed.to_vec()
        } else {
            seed.iter()
                .zip(&limits)
                .map(|(&s, &(lo, hi))| {
                    let spread = std::f64::consts::PI * (attempt as f64 / opts.restarts as f64);
                    (s + spread * (2.0 * rng.next_f64() - 1.0)).clamp(lo, hi)
                })
                .collect()
        };
        let (q, r) = descend(model, start, target_pos, dir, &limits, opts);
        if r.pos.norm() < opts.position_tolerance && r.angle < angle_tol {
            return Ok(JointVector(q));
        }
        let c = r.cost(opts.direction_weight);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, r));
        }
    }
    let (_, r) = best.expect("at least one attempt");
    Err(KinematicsError::Unreachable {
        best_position_error: r.pos.norm(),
        best_angle_error_deg: r.angle.to_degrees(),
    })
}

fn descend(
    model: &RobotModel,
    mut q: Vec<f64>,
    target: &Vec3,
    dir: Option<&Vec3>,
    limits: &[(f64, f64)],
    opts: &IkOptions,
) -> (Vec<f64>, Residual) {
    let w = opts.direction_weight;
    let rows = if dir.is_some() { 6 } else { 3 };
    let n = q.len();
    // converge well inside the acceptance tolerance
    let pos_goal = opts.position_tolerance * 0.05;
    let angle_goal = opts.angle_tolerance_deg.to_radians() * 0.05;

    let mut lambda = opts.initial_damping;
    let mut state = chain(model, &q);
    let mut r = residual_of(model, &state.links[model.ee_link_index()], target, dir);
    let mut cost = r.cost(w);
    for _ in 0..opts.max_iterations {
        if r.pos.norm() < pos_goal && r.angle < angle_goal {
            break;
        }
        let full = jacobian_of(model, &state);
        let mut jac = DMatrix::<f64>::zeros(rows, n);
        let mut err = DVector::<f64>::zeros(rows);
        for c in 0..n {
            for k in 0..3 {
                jac[(k, c)] = full[(k, c)];
                if rows == 6 {
                    jac[(3 + k, c)] = w * full[(3 + k, c)];
                }
            }
        }
        for k in 0..3 {
            err[k] = r.pos[k];
            if rows == 6 {
                err[3 + k] = w * r.rot[k];
            }
        }

        let jjt = &jac * jac.transpose() + DMatrix::identity(rows, rows) * (lambda * lambda);
        let Some(y) = jjt.cholesky().map(|c| c.solve(&err)) else {
            lambda *= 2.0;
            continue;
        };
        let dq = jac.transpose() * y;
        let candidate: Vec<f64> = q
            .iter()
            .zip(dq.iter())
            .zip(limits)
            .map(|((qi, d), &(lo, hi))| (qi + d).clamp(lo, hi))
            .collect();
        let cand_state = chain(model, &candidate);
        let cand_r = residual_of(model, &cand_state.links[model.ee_link_index()], target, dir);
        let cand_cost = cand_r.cost(w);
        if cand_cost < cost {
            q = candidate;
            state = cand_state;
            r = cand_r;
            cost = cand_cost;
            lambda = (lambda * 0.5).max(1e-6);
        } else {
            lambda = (lambda * 2.0).min(1e3);
        }
    }
    (q, r)
}

/// Small deterministic generator for restart seeds.
struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
