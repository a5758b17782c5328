//! Shared domain types: planar geometry, robot configuration, crowd state.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Planar vector in meters (positions) or m/s (velocities).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    /// Unit vector, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12).then(|| self * (1.0 / n))
    }

    /// Counter-clockwise rotation by 90 degrees.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Scales the vector down so its norm does not exceed `max`.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n > max && n > 0.0 {
            self * (max / n)
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into the half-open interval (-pi, pi].
pub fn wrap_angle(a: f64) -> Result<f64, ModelError> {
    if !a.is_finite() {
        return Err(ModelError::NonFinite("angle"));
    }
    Ok(wrap(a))
}

pub(crate) fn wrap(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Robot configuration: axle position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: wrap(theta) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.theta)
    }

    /// The holonomic control point `d` meters ahead of the axle.
    pub fn control_point(&self, d: f64) -> Vec2 {
        self.position() + self.heading() * d
    }
}

/// World-frame Cartesian velocity of the control point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
}

impl Twist {
    pub const ZERO: Twist = Twist { vx: 0.0, vy: 0.0 };

    pub const fn new(vx: f64, vy: f64) -> Self {
        Twist { vx, vy }
    }

    pub fn vec(self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }
}

impl From<Vec2> for Twist {
    fn from(v: Vec2) -> Self {
        Twist::new(v.x, v.y)
    }
}

/// Unicycle command: linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub v: f64,
    pub w: f64,
}

impl Command {
    pub const ZERO: Command = Command { v: 0.0, w: 0.0 };

    pub const fn new(v: f64, w: f64) -> Self {
        Command { v, w }
    }

    /// Command expressed in the normalized space (v / v_max, w / w_max).
    pub fn normalized(self, robot: &RobotParams) -> Vec2 {
        Vec2::new(self.v / robot.v_max, self.w / robot.w_max)
    }

    pub fn from_normalized(u: Vec2, robot: &RobotParams) -> Self {
        Command::new(u.x * robot.v_max, u.y * robot.w_max)
    }

    /// Uniformly scales the command so both components are within limits,
    /// preserving the curvature of the commanded motion.
    pub fn saturate(self, robot: &RobotParams) -> Command {
        let ratio = (self.v.abs() / robot.v_max).max(self.w.abs() / robot.w_max);
        if ratio > 1.0 {
            // Clamp after scaling so rounding never leaves a component past its limit.
            Command::new(
                (self.v / ratio).clamp(-robot.v_max, robot.v_max),
                (self.w / ratio).clamp(-robot.w_max, robot.w_max),
            )
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.v.is_finite() && self.w.is_finite()
    }
}

/// World velocity of the point `d` ahead of the axle under a unicycle command.
pub fn unicycle_to_point_velocity(pose: &Pose, cmd: Command, d: f64) -> Twist {
    let (s, c) = pose.theta.sin_cos();
    Twist::new(cmd.v * c - d * cmd.w * s, cmd.v * s + d * cmd.w * c)
}

/// Exact inverse of [`unicycle_to_point_velocity`] for `d > 0`.
pub fn point_velocity_to_unicycle(pose: &Pose, twist: Twist, d: f64) -> Command {
    let (s, c) = pose.theta.sin_cos();
    Command::new(c * twist.vx + s * twist.vy, (-s * twist.vx + c * twist.vy) / d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Pedestrian,
    Trolley,
    StaticProp,
}

impl AgentKind {
    /// Whether the agent counts towards crowd-interaction metrics.
    pub fn is_crowd(self) -> bool {
        !matches!(self, AgentKind::StaticProp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub kind: AgentKind,
}

/// The crowd at one tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CrowdSnapshot {
    pub t: f64,
    pub agents: Vec<AgentState>,
}

impl CrowdSnapshot {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut ids: Vec<u32> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::DuplicateAgent(w[0]));
        }
        if let Some(a) = self.agents.iter().find(|a| !(a.radius > 0.0)) {
            return Err(ModelError::Invalid(format!("agent {} has non-positive radius", a.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    /// Radius of the body disc, centered on the control point.
    pub footprint_radius: f64,
    /// Accounting shell for virtual collisions.
    pub virtual_boundary_radius: f64,
    /// Control point offset ahead of the axle.
    pub control_point_offset: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            footprint_radius: 0.45,
            virtual_boundary_radius: 0.9,
            control_point_offset: 0.5,
            v_max: 1.0,
            w_max: 1.0,
            a_max: 1.0,
            alpha_max: 2.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            self.footprint_radius,
            self.control_point_offset,
            self.v_max,
            self.w_max,
            self.a_max,
            self.alpha_max,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ModelError::Invalid("robot limits must be positive and finite".into()));
        }
        if !(self.virtual_boundary_radius > self.footprint_radius) {
            return Err(ModelError::Invalid(
                "virtual boundary must enclose the footprint".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Sparse,
    #[serde(alias = "flow")]
    Flow1d,
    Mixed,
}

impl std::str::FromStr for ScenarioKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sparse" => Ok(ScenarioKind::Sparse),
            "flow_1d" | "flow" | "flow1d" => Ok(ScenarioKind::Flow1d),
            "mixed" => Ok(ScenarioKind::Mixed),
            other => Err(ModelError::Invalid(format!("unknown scenario kind `{other}`"))),
        }
    }
}

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min: Vec2,
    pub max: Vec2,
}

impl Arena {
    pub fn new(width: f64, height: f64) -> Self {
        Arena { min: Vec2::ZERO, max: Vec2::new(width, height) }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: Vec2, inset: f64) -> Vec2 {
        Vec2::new(
            p.x.clamp(self.min.x + inset, self.max.x - inset),
            p.y.clamp(self.min.y + inset, self.max.y - inset),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// People per square meter.
    pub target_density: f64,
    pub arena: Arena,
    pub start: Pose,
    pub goal: Vec2,
    pub duration_max: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            kind: ScenarioKind::Mixed,
            target_density: 0.18,
            arena: Arena::new(30.0, 12.0),
            start: Pose::new(4.0, 6.0, 0.0),
            goal: Vec2::new(24.0, 6.0),
            duration_max: 120.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.target_density > 0.0 && self.target_density <= 1.2) {
            return Err(ModelError::Invalid(format!(
                "target density {} outside (0, 1.2] ppsm",
                self.target_density
            )));
        }
        if !(self.arena.width() > 0.0 && self.arena.height() > 0.0) {
            return Err(ModelError::Invalid("arena must have positive extent".into()));
        }
        if !self.arena.contains(self.goal) || !self.arena.contains(self.start.position()) {
            return Err(ModelError::Invalid("start and goal must lie inside the arena".into()));
        }
        if !(self.duration_max > 0.0) {
            return Err(ModelError::Invalid("duration_max must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0).unwrap(), 0.0);
        assert!((wrap_angle(1.5 * PI).unwrap() + 0.5 * PI).abs() < EPS);
        assert_eq!(wrap_angle(-PI).unwrap(), PI);
        assert_eq!(wrap_angle(PI).unwrap(), PI);
        assert!(wrap_angle(f64::NAN).is_err());
        assert!(wrap_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn point_velocity_examples() {
        let d = 0.5;
        let t = unicycle_to_point_velocity(&Pose::new(0.0, 0.0, 0.0), Command::new(1.0, 0.0), d);
        assert!((t.vx - 1.0).abs() < EPS && t.vy.abs() < EPS);
        let t = unicycle_to_point_velocity(&Pose::new(0.0, 0.0, 0.0), Command::new(0.0, 1.0), d);
        assert!(t.vx.abs() < EPS && (t.vy - 0.5).abs() < EPS);
        let up = Pose::new(0.0, 0.0, PI / 2.0);
        let t = unicycle_to_point_velocity(&up, Command::new(1.0, 1.0), d);
        assert!((t.vx + 0.5).abs() < EPS && (t.vy - 1.0).abs() < EPS);
    }

    #[test]
    fn inverse_examples() {
        let d = 0.5;
        let c = point_velocity_to_unicycle(&Pose::new(0.0, 0.0, 0.0), Twist::new(1.0, 0.0), d);
        assert!((c.v - 1.0).abs() < EPS && c.w.abs() < EPS);
        let c = point_velocity_to_unicycle(&Pose::new(0.0, 0.0, 0.0), Twist::new(0.0, 0.5), d);
        assert!(c.v.abs() < EPS && (c.w - 1.0).abs() < EPS);
        let c = point_velocity_to_unicycle(&Pose::new(0.0, 0.0, PI / 2.0), Twist::new(-0.5, 1.0), d);
        assert!((c.v - 1.0).abs() < EPS && (c.w - 1.0).abs() < EPS);
    }

    #[test]
    fn saturation_preserves_curvature() {
        let robot = RobotParams::default();
        let c = Command::new(0.5, 2.0).saturate(&robot);
        assert!((c.w - 1.0).abs() < EPS && (c.v - 0.25).abs() < EPS);
        let inside = Command::new(0.3, -0.2);
        assert_eq!(inside.saturate(&robot), inside);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = AgentState {
            id: 3,
            position: Vec2::ZERO,
            velocity: Vec2::ZERO,
            radius: 0.3,
            kind: AgentKind::Pedestrian,
        };
        let snap = CrowdSnapshot { t: 0.0, agents: vec![a.clone(), a] };
        assert!(matches!(snap.validate(), Err(ModelError::DuplicateAgent(3))));
    }

    #[test]
    fn default_robot_is_valid() {
        RobotParams::default().validate().unwrap();
        let bad = RobotParams { virtual_boundary_radius: 0.3, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn control_point_map_round_trips(
            x in -50.0..50.0f64, y in -50.0..50.0f64, theta in -10.0..10.0f64,
            v in -2.0..2.0f64, w in -3.0..3.0f64, d in 0.05..2.0f64,
        ) {
            let pose = Pose::new(x, y, theta);
            let back = point_velocity_to_unicycle(&pose, unicycle_to_point_velocity(&pose, Command::new(v, w), d), d);
            prop_assert!((back.v - v).abs() < 1e-12);
            prop_assert!((back.w - w).abs() < 1e-12);
        }

        #[test]
        fn wrap_is_idempotent_and_periodic(a in -100.0..100.0f64, k in -20i32..20) {
            let w = wrap_angle(a).unwrap();
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w).unwrap(), w);
            let shifted = wrap_angle(a + 2.0 * PI * k as f64).unwrap();
            let diff = (shifted - w).abs();
            // The representative may flip across the +-pi seam under rounding.
            prop_assert!(diff < 1e-9 || (diff - 2.0 * PI).abs() < 1e-9);
        }
    }
}
