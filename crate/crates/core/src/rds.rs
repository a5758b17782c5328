//! Velocity-obstacle correction of a unicycle command.
//!
//! Each nearby agent contributes one half-plane in the normalized command
//! space `(v / v_max, w / w_max)`: the truncated velocity obstacle of the
//! control point is linearized at the nominal command and pulled back
//! through the (linear) control-point velocity map. The corrected command is
//! the exact 2D projection of the nominal onto the intersection.

use serde::{Deserialize, Serialize};

use crate::model::{Command, CrowdSnapshot, Pose, RobotParams, Vec2};

/// Feasible iff `normal . u <= offset` in normalized command space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneConstraint {
    pub normal: Vec2,
    pub offset: f64,
}

impl HalfPlaneConstraint {
    /// Builds a constraint from an arbitrary (non-zero) normal, rescaling it to unit length.
    pub fn new(normal: Vec2, offset: f64) -> Option<Self> {
        let n = normal.norm();
        (n > 1e-12 && offset.is_finite()).then(|| HalfPlaneConstraint { normal: normal * (1.0 / n), offset: offset / n })
    }

    pub fn slack(&self, u: Vec2) -> f64 {
        self.offset - self.normal.dot(u)
    }

    pub fn contains(&self, u: Vec2, tol: f64) -> bool {
        self.slack(u) >= -tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdsResult {
    pub command: Command,
    pub corrected: bool,
    pub blocked: bool,
    pub active_constraints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RdsParams {
    /// Collision horizon tau, seconds.
    pub horizon: f64,
    pub sensing_range: f64,
}

impl Default for RdsParams {
    fn default() -> Self {
        RdsParams { horizon: 2.0, sensing_range: 10.0 }
    }
}

/// The four command-box bounds `|v| <= v_max`, `|w| <= w_max` (normalized).
pub fn box_constraints() -> [HalfPlaneConstraint; 4] {
    [
        HalfPlaneConstraint { normal: Vec2::new(1.0, 0.0), offset: 1.0 },
        HalfPlaneConstraint { normal: Vec2::new(-1.0, 0.0), offset: 1.0 },
        HalfPlaneConstraint { normal: Vec2::new(0.0, 1.0), offset: 1.0 },
        HalfPlaneConstraint { normal: Vec2::new(0.0, -1.0), offset: 1.0 },
    ]
}

const BOX_CORNERS: [Vec2; 4] = [
    Vec2::new(1.0, 1.0),
    Vec2::new(1.0, -1.0),
    Vec2::new(-1.0, 1.0),
    Vec2::new(-1.0, -1.0),
];

/// Closest point on the boundary of the truncated velocity obstacle to
/// `rel_vel`, with the outward boundary normal there.
///
/// `rel_pos` points from the robot to the agent, `rel_vel` is the robot's
/// velocity relative to the agent and `radius` the Minkowski radius.
fn vo_boundary(rel_pos: Vec2, rel_vel: Vec2, radius: f64, horizon: f64) -> (Vec2, Vec2) {
    let dist_sq = rel_pos.norm_sq();
    let r_sq = radius * radius;
    if dist_sq <= r_sq {
        // Already overlapping: forbid closing in along the center line.
        let away = -rel_pos.normalized().unwrap_or(Vec2::new(1.0, 0.0));
        return (Vec2::ZERO, away);
    }
    let cutoff = rel_pos * (1.0 / horizon);
    let w = rel_vel - cutoff;
    let w_len_sq = w.norm_sq();
    let dot = w.dot(rel_pos);
    if dot < 0.0 && dot * dot > r_sq * w_len_sq {
        // Closest feature is the cut-off circle.
        let n = w.normalized().unwrap_or(-rel_pos.normalized().unwrap_or(Vec2::new(1.0, 0.0)));
        return (cutoff + n * (radius / horizon), n);
    }
    // Closest feature is one of the cone legs.
    let leg = (dist_sq - r_sq).sqrt();
    let dir = if rel_pos.cross(w) > 0.0 {
        Vec2::new(rel_pos.x * leg - rel_pos.y * radius, rel_pos.x * radius + rel_pos.y * leg) * (1.0 / dist_sq)
    } else {
        Vec2::new(rel_pos.x * leg + rel_pos.y * radius, -rel_pos.x * radius + rel_pos.y * leg) * (1.0 / dist_sq)
    };
    let mut n = dir.perp();
    if n.dot(rel_pos) > 0.0 {
        n = -n;
    }
    (dir * rel_vel.dot(dir).max(0.0), n)
}

/// Half-planes for every sensed agent whose linearized velocity obstacle
/// cuts the command box, followed by the four box constraints.
pub fn build_constraints(
    nominal: Command,
    crowd: &CrowdSnapshot,
    pose: &Pose,
    robot: &RobotParams,
    params: &RdsParams,
) -> Vec<HalfPlaneConstraint> {
    let d = robot.control_point_offset;
    let center = pose.control_point(d);
    let (s, c) = pose.theta.sin_cos();
    // Control-point velocity = J u with u normalized; columns of J:
    let jv = Vec2::new(c, s) * robot.v_max;
    let jw = Vec2::new(-s * d, c * d) * robot.w_max;
    let un = nominal.normalized(robot);
    let nominal_vel = jv * un.x + jw * un.y;

    let mut out = Vec::new();
    for a in &crowd.agents {
        let rel_pos = a.position - center;
        if rel_pos.norm() > params.sensing_range {
            continue;
        }
        let rel_vel = nominal_vel - a.velocity;
        let (boundary, n) = vo_boundary(rel_pos, rel_vel, a.radius + robot.footprint_radius, params.horizon);
        // Feasible: (J u - v_a - b) . n >= 0.
        let normal = Vec2::new(-jv.dot(n), -jw.dot(n));
        let offset = -(a.velocity + boundary).dot(n);
        let Some(h) = HalfPlaneConstraint::new(normal, offset) else {
            continue;
        };
        if BOX_CORNERS.iter().all(|&corner| h.contains(corner, 0.0)) {
            continue;
        }
        out.push(h);
    }
    out.extend(box_constraints());
    out
}

const FEAS_TOL: f64 = 1e-9;

/// `argmin |u - u_nominal|^2` over the half-planes, by enumeration of the
/// unconstrained point, single-plane projections and pairwise vertices.
pub fn solve_normalized(nominal: Vec2, constraints: &[HalfPlaneConstraint]) -> Option<Vec2> {
    let feasible = |u: Vec2| constraints.iter().all(|h| h.contains(u, FEAS_TOL));
    if feasible(nominal) {
        return Some(nominal);
    }
    let mut best: Option<(f64, Vec2)> = None;
    let mut consider = |u: Vec2| {
        if !u.is_finite() || !feasible(u) {
            return;
        }
        let d = (u - nominal).norm_sq();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, u));
        }
    };
    for h in constraints {
        let excess = -h.slack(nominal);
        if excess > 0.0 {
            consider(nominal - h.normal * excess);
        }
    }
    for (i, a) in constraints.iter().enumerate() {
        for b in &constraints[i + 1..] {
            let det = a.normal.cross(b.normal);
            if det.abs() < 1e-12 {
                continue;
            }
            let u = Vec2::new(
                (a.offset * b.normal.y - b.offset * a.normal.y) / det,
                (a.normal.x * b.offset - b.normal.x * a.offset) / det,
            );
            consider(u);
        }
    }
    best.map(|(_, u)| u)
}

/// Corrects `nominal` against the constraint set; an empty feasible set
/// stops the robot.
pub fn solve(nominal: Command, constraints: &[HalfPlaneConstraint], robot: &RobotParams) -> RdsResult {
    let un = nominal.normalized(robot);
    match solve_normalized(un, constraints) {
        Some(u) => {
            let active = constraints.iter().filter(|h| h.slack(u).abs() <= 1e-9).count();
            let corrected = u != un;
            RdsResult {
                command: if corrected { Command::from_normalized(u, robot) } else { nominal },
                corrected,
                blocked: false,
                active_constraints: active,
            }
        }
        None => RdsResult { command: Command::ZERO, corrected: nominal != Command::ZERO, blocked: true, active_constraints: 0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentKind, AgentState};

    fn agent(position: Vec2, velocity: Vec2) -> AgentState {
        AgentState { id: 0, position, velocity, radius: 0.3, kind: AgentKind::Pedestrian }
    }

    #[test]
    fn empty_crowd_gives_box_only() {
        let c = build_constraints(Command::new(1.0, 0.0), &CrowdSnapshot::default(), &Pose::default(), &RobotParams::default(), &RdsParams::default());
        assert_eq!(c, box_constraints().to_vec());
    }

    #[test]
    fn closing_agent_ahead_caps_forward_speed() {
        let pose = Pose::default();
        let robot = RobotParams::default();
        let ahead = pose.control_point(robot.control_point_offset) + Vec2::new(1.0, 0.0);
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![agent(ahead, Vec2::new(-0.5, 0.0))] };
        let c = build_constraints(Command::new(1.0, 0.0), &crowd, &pose, &robot, &RdsParams::default());
        assert_eq!(c.len(), 5);
        assert!(c[0].normal.x > 0.0, "{:?}", c[0]);
        let r = solve(Command::new(1.0, 0.0), &c, &robot);
        assert!(r.corrected && r.command.v < 1.0);
    }

    #[test]
    fn receding_agent_behind_is_ignored() {
        let pose = Pose::default();
        let robot = RobotParams::default();
        let behind = pose.control_point(robot.control_point_offset) + Vec2::new(-1.5, 0.0);
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![agent(behind, Vec2::new(-1.3, 0.0))] };
        let c = build_constraints(Command::new(0.5, 0.0), &crowd, &pose, &robot, &RdsParams::default());
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn feasible_nominal_is_kept() {
        let r = solve(Command::new(0.4, 0.2), &box_constraints(), &RobotParams::default());
        assert_eq!(r.command, Command::new(0.4, 0.2));
        assert!(!r.corrected && !r.blocked);
    }

    #[test]
    fn projection_onto_single_plane() {
        let mut c = box_constraints().to_vec();
        c.push(HalfPlaneConstraint::new(Vec2::new(1.0, 0.0), 0.5).unwrap());
        let r = solve(Command::new(1.0, 0.0), &c, &RobotParams::default());
        assert!((r.command.v - 0.5).abs() < 1e-12 && r.command.w.abs() < 1e-12);
        assert!(r.corrected);
    }

    #[test]
    fn contradictory_planes_block() {
        let mut c = box_constraints().to_vec();
        c.push(HalfPlaneConstraint::new(Vec2::new(1.0, 0.0), -0.1).unwrap());
        c.push(HalfPlaneConstraint::new(Vec2::new(-1.0, 0.0), -0.1).unwrap());
        let r = solve(Command::new(0.3, 0.0), &c, &RobotParams::default());
        assert!(r.blocked);
        assert_eq!(r.command, Command::ZERO);
    }

    #[test]
    fn overlapping_agent_forbids_approach() {
        let pose = Pose::default();
        let robot = RobotParams::default();
        let touching = pose.control_point(robot.control_point_offset) + Vec2::new(0.7, 0.0);
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![agent(touching, Vec2::ZERO)] };
        let c = build_constraints(Command::new(1.0, 0.0), &crowd, &pose, &robot, &RdsParams::default());
        let r = solve(Command::new(1.0, 0.0), &c, &robot);
        assert!(r.command.v <= 1e-9);
    }
}
