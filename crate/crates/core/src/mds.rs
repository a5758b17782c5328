//! Obstacle avoidance by modulation of a dynamical system.
//!
//! Obstacles are star-shaped regions described by a distance level function
//! `gamma` that equals 1 on the (footprint-inflated) boundary and grows
//! outward. Near an obstacle the nominal velocity is reshaped by
//! `E diag(lambda_n, lambda_t) E^-1` with `E = [n, t]`, which removes the
//! normal component on the boundary and speeds up the tangential one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::AvoidanceError;
use crate::model::{CrowdSnapshot, RobotParams, Twist, Vec2};

/// Radial extent of a star-shaped obstacle as a function of direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RadiusFunction {
    Circle(f64),
    /// Radii sampled at `2 pi k / n`, joined by a periodic Catmull-Rom
    /// spline so the boundary normal is continuous.
    Polar(Vec<f64>),
}

impl RadiusFunction {
    /// Returns `(R(phi), dR/dphi)`.
    fn eval(&self, phi: f64) -> (f64, f64) {
        match self {
            RadiusFunction::Circle(r) => (*r, 0.0),
            RadiusFunction::Polar(samples) => {
                let n = samples.len();
                let step = 2.0 * PI / n as f64;
                let u = phi.rem_euclid(2.0 * PI) / step;
                let k = (u.floor() as usize).min(n - 1);
                let t = u - k as f64;
                let at = |i: usize| samples[(k + i + n - 1) % n];
                let (p0, p1, p2, p3) = (at(0), at(1), at(2), at(3));
                let (m1, m2) = (0.5 * (p2 - p0), 0.5 * (p3 - p1));
                let (t2, t3) = (t * t, t * t * t);
                let r = (2.0 * t3 - 3.0 * t2 + 1.0) * p1
                    + (t3 - 2.0 * t2 + t) * m1
                    + (3.0 * t2 - 2.0 * t3) * p2
                    + (t3 - t2) * m2;
                let dr = (6.0 * t2 - 6.0 * t) * p1
                    + (3.0 * t2 - 4.0 * t + 1.0) * m1
                    + (6.0 * t - 6.0 * t2) * p2
                    + (3.0 * t2 - 2.0 * t) * m2;
                (r, dr / step)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarObstacle {
    pub center: Vec2,
    /// Point inside the kernel from which the radius function is measured.
    pub reference_point: Vec2,
    pub radius: RadiusFunction,
    /// Rigid translation velocity.
    pub velocity: Vec2,
    /// Inflation absorbing the robot footprint.
    pub margin: f64,
}

impl StarObstacle {
    pub fn circle(center: Vec2, radius: f64, margin: f64) -> Self {
        StarObstacle {
            center,
            reference_point: center,
            radius: RadiusFunction::Circle(radius),
            velocity: Vec2::ZERO,
            margin,
        }
    }

    pub fn with_velocity(mut self, velocity: Vec2) -> Self {
        self.velocity = velocity;
        self
    }

    /// Inflated radius in direction `phi` from the reference point.
    pub fn effective_radius(&self, phi: f64) -> f64 {
        self.radius.eval(phi).0 + self.margin
    }
}

/// Local modulation frame of one obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub gamma: f64,
    pub normal: Vec2,
    pub tangent: Vec2,
    pub eigen_normal: f64,
    pub eigen_tangent: f64,
}

impl Modulation {
    /// Applies `E D E^T` to `v`. `E` is orthonormal, so the tangent sign
    /// does not change the result.
    pub fn apply(&self, v: Vec2) -> Vec2 {
        let vn = v.dot(self.normal);
        let vt = v.dot(self.tangent);
        let un = if self.gamma < 1.0 {
            // Inside the inflated boundary: never inward, and pushed out in
            // proportion to depth so discretization drift is undone.
            vn.max(v.norm() * (1.0 / self.gamma - 1.0))
        } else {
            self.eigen_normal * vn
        };
        self.normal * un + self.tangent * (self.eigen_tangent * vt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdsParams {
    /// Extra clearance added on top of the robot footprint.
    pub safety_margin: f64,
    pub sensing_range: f64,
    /// Beyond this level value an obstacle has no influence.
    pub gamma_cut: f64,
}

impl Default for MdsParams {
    fn default() -> Self {
        MdsParams { safety_margin: 0.05, sensing_range: 10.0, gamma_cut: 10.0 }
    }
}

/// Largest tangential eigenvalue (reached on the boundary).
pub const LAMBDA_T_MAX: f64 = 2.0;

/// Distance level function: 1 on the inflated boundary, >1 outside.
pub fn gamma(point: Vec2, obs: &StarObstacle) -> Result<f64, AvoidanceError> {
    let rel = point - obs.reference_point;
    let rho = rel.norm();
    if rho < 1e-12 {
        return Err(AvoidanceError::SingularPoint);
    }
    Ok(rho / obs.effective_radius(rel.angle()))
}

/// Level value, surface normal and eigenvalues at `point`.
///
/// `attractor` only orients the reported tangent (positive cross product
/// with the direction to the attractor, then with `nominal`).
pub fn modulation(
    point: Vec2,
    obs: &StarObstacle,
    nominal: Vec2,
    attractor: Option<Vec2>,
) -> Result<Modulation, AvoidanceError> {
    let g = gamma(point, obs)?;
    let rel = point - obs.reference_point;
    let phi = rel.angle();
    let (r, dr) = obs.radius.eval(phi);
    let r_eff = r + obs.margin;
    let radial = rel * (1.0 / rel.norm());
    // Gradient of rho / R(phi): radial minus the angular correction.
    let normal = (radial - radial.perp() * (dr / r_eff)).normalized().unwrap_or(radial);
    let mut tangent = normal.perp();
    let orient = |t: Vec2, reference: Vec2| t.cross(reference);
    let by_attractor = attractor.map(|a| orient(tangent, a - point)).unwrap_or(0.0);
    if by_attractor.abs() > 1e-12 {
        if by_attractor < 0.0 {
            tangent = -tangent;
        }
    } else if orient(tangent, nominal) < -1e-12 {
        tangent = -tangent;
    }
    let ge = g.max(1.0);
    Ok(Modulation {
        gamma: g,
        normal,
        tangent,
        eigen_normal: (1.0 - 1.0 / ge).max(0.0),
        eigen_tangent: 1.0 + 1.0 / ge,
    })
}

/// Smooth fade of an obstacle's influence between `cut / 2` and `cut`.
fn influence(g: f64, cut: f64) -> f64 {
    let lo = 0.5 * cut;
    if g <= lo {
        1.0
    } else if g >= cut {
        0.0
    } else {
        let s = (g - lo) / (cut - lo);
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Modulates `nominal` at `point` with the default cut-off.
pub fn modulate(nominal: Twist, point: Vec2, obstacles: &[StarObstacle]) -> Twist {
    modulate_with(nominal, point, obstacles, MdsParams::default().gamma_cut)
}

/// Modulated velocity of the control point.
///
/// Each obstacle modulates in its own moving frame; the outputs are blended
/// with weights `w_k ~ prod_{j != k} (gamma_j - 1)`, so the closest obstacle
/// dominates and an obstacle on its boundary takes full control.
pub fn modulate_with(nominal: Twist, point: Vec2, obstacles: &[StarObstacle], gamma_cut: f64) -> Twist {
    let f = nominal.vec();
    let mut near: Vec<(f64, Vec2)> = Vec::new();
    for obs in obstacles {
        let Ok(m) = modulation(point, obs, f, None) else {
            continue;
        };
        if m.gamma > gamma_cut {
            continue;
        }
        let s = influence(m.gamma, gamma_cut);
        let moved = m.apply(f - obs.velocity) + obs.velocity;
        near.push((m.gamma, moved * s + f * (1.0 - s)));
    }
    if near.is_empty() {
        return nominal;
    }

    let touching = near.iter().filter(|(g, _)| *g <= 1.0).count();
    let weights: Vec<f64> = if touching > 0 {
        near.iter().map(|(g, _)| if *g <= 1.0 { 1.0 } else { 0.0 }).collect()
    } else {
        (0..near.len())
            .map(|k| {
                near.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, (g, _))| g - 1.0)
                    .product()
            })
            .collect()
    };
    let total: f64 = weights.iter().sum();
    let out = near
        .iter()
        .zip(&weights)
        .fold(Vec2::ZERO, |acc, ((_, o), w)| acc + *o * (w / total));
    out.clamp_norm(f.norm() * LAMBDA_T_MAX).into()
}

/// Wraps each sensed agent into a circle inflated by the footprint and
/// safety margin. Agents beyond the sensing range of `center` are dropped.
pub fn crowd_to_obstacles(
    crowd: &CrowdSnapshot,
    robot: &RobotParams,
    center: Vec2,
    params: &MdsParams,
) -> Vec<StarObstacle> {
    crowd
        .agents
        .iter()
        .filter(|a| a.position.distance(center) <= params.sensing_range)
        .map(|a| {
            StarObstacle::circle(a.position, a.radius, robot.footprint_radius + params.safety_margin)
                .with_velocity(a.velocity)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentKind, AgentState};

    fn unit_circle_at(c: Vec2) -> StarObstacle {
        StarObstacle::circle(c, 1.0, 0.0)
    }

    #[test]
    fn gamma_levels() {
        let o = unit_circle_at(Vec2::ZERO);
        assert!((gamma(Vec2::new(1.0, 0.0), &o).unwrap() - 1.0).abs() < 1e-15);
        assert!((gamma(Vec2::new(0.0, 2.0), &o).unwrap() - 2.0).abs() < 1e-15);
        assert!((gamma(Vec2::new(-0.5, 0.0), &o).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(gamma(Vec2::ZERO, &o), Err(AvoidanceError::SingularPoint));
    }

    #[test]
    fn margin_inflates_boundary() {
        let o = StarObstacle::circle(Vec2::ZERO, 0.3, 0.5);
        assert!((gamma(Vec2::new(0.8, 0.0), &o).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_obstacles_is_identity() {
        let f = Twist::new(0.3, -0.7);
        assert_eq!(modulate(f, Vec2::new(1.0, 2.0), &[]), f);
    }

    #[test]
    fn hand_evaluated_modulation() {
        // Gamma = sqrt 2, n = (-1, 1)/sqrt 2.
        let out = modulate(Twist::new(1.0, 0.0), Vec2::new(1.0, 1.0), &[unit_circle_at(Vec2::new(2.0, 0.0))]);
        assert!((out.vx - 1.0).abs() < 1e-12, "{out:?}");
        assert!((out.vy - 0.5f64.sqrt()).abs() < 1e-12, "{out:?}");
    }

    #[test]
    fn boundary_head_on_has_no_normal_component() {
        let o = unit_circle_at(Vec2::new(2.0, 0.0));
        let p = Vec2::new(1.0, 0.0);
        let out = modulate(Twist::new(1.0, 0.0), p, &[o.clone()]);
        let m = modulation(p, &o, Vec2::new(1.0, 0.0), None).unwrap();
        assert!(out.vec().dot(m.normal).abs() < 1e-12);
        assert_eq!(m.eigen_normal, 0.0);
    }

    #[test]
    fn modulation_frame_is_orthonormal() {
        let o = StarObstacle {
            center: Vec2::ZERO,
            reference_point: Vec2::new(0.1, 0.0),
            radius: RadiusFunction::Polar(vec![1.0, 1.4, 0.9, 1.2, 1.1, 0.8]),
            velocity: Vec2::ZERO,
            margin: 0.2,
        };
        for k in 0..64 {
            let p = Vec2::from_angle(k as f64 * 0.1) * 2.5;
            let m = modulation(p, &o, Vec2::new(1.0, 0.0), None).unwrap();
            assert!(m.normal.dot(m.tangent).abs() <= 1e-9);
            assert!((m.normal.norm() - 1.0).abs() < 1e-12);
            assert!((m.eigen_normal - (1.0 - 1.0 / m.gamma)).abs() < 1e-12);
            assert!((m.eigen_tangent - (1.0 + 1.0 / m.gamma)).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_tie_break_points_towards_attractor_side() {
        let o = unit_circle_at(Vec2::new(2.0, 0.0));
        let p = Vec2::new(0.5, 0.0);
        let m = modulation(p, &o, Vec2::new(1.0, 0.0), Some(Vec2::new(4.0, 1.0))).unwrap();
        assert!(m.tangent.cross(Vec2::new(3.5, 1.0)) > 0.0);
        // Tangent parallel to the attractor direction: fall back to the nominal.
        let below = Vec2::new(2.0, -2.0);
        let m = modulation(below, &o, Vec2::new(1.0, 0.2), Some(Vec2::new(5.0, -2.0))).unwrap();
        assert!(m.tangent.cross(Vec2::new(1.0, 0.2)) > 0.0);
    }

    #[test]
    fn far_field_is_exact_identity() {
        let f = Twist::new(0.4, 0.1);
        let o = StarObstacle::circle(Vec2::new(20.0, 0.0), 0.3, 0.5);
        assert_eq!(modulate(f, Vec2::ZERO, &[o]), f);
    }

    #[test]
    fn moving_obstacle_modulates_in_its_frame() {
        // Obstacle approaching head-on: relative velocity is larger, so the
        // output is deflected more than for a static obstacle.
        let p = Vec2::new(0.0, 0.3);
        let stat = StarObstacle::circle(Vec2::new(2.0, 0.0), 0.5, 0.5);
        let moving = stat.clone().with_velocity(Vec2::new(-0.5, 0.0));
        let f = Twist::new(1.0, 0.0);
        let a = modulate(f, p, &[stat]);
        let b = modulate(f, p, &[moving]);
        assert!(b.vx < a.vx);
    }

    #[test]
    fn crowd_wrapping() {
        let agent = |id, x: f64| AgentState {
            id,
            position: Vec2::new(x, 0.0),
            velocity: Vec2::new(0.1, 0.0),
            radius: 0.3,
            kind: AgentKind::Pedestrian,
        };
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![agent(0, 3.0), agent(1, 15.0)] };
        let obs = crowd_to_obstacles(&crowd, &RobotParams::default(), Vec2::ZERO, &MdsParams::default());
        assert_eq!(obs.len(), 1);
        assert!((obs[0].effective_radius(0.0) - 0.8).abs() < 1e-12);
        assert_eq!(obs[0].velocity, Vec2::new(0.1, 0.0));
        assert!(crowd_to_obstacles(&CrowdSnapshot::default(), &RobotParams::default(), Vec2::ZERO, &MdsParams::default()).is_empty());
    }
}
