//! The three-layer reactive controller: high-level command, obstacle
//! avoidance, contact compliance, then conversion to a saturated unicycle
//! command.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::contact::{estimate_contact, ComplianceParams, ContactController, ContactState};
use crate::error::ModelError;
use crate::mds::{crowd_to_obstacles, modulate_with, MdsParams};
use crate::model::{
    point_velocity_to_unicycle, unicycle_to_point_velocity, Command, CrowdSnapshot, Pose, RobotParams, Twist, Vec2,
};
use crate::rds::{build_constraints, solve, RdsParams};
use crate::sim::{density_around, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    #[serde(alias = "mds")]
    MdsAutonomous,
    #[serde(alias = "rds")]
    RdsAutonomous,
    #[serde(alias = "shared", alias = "shared_rds")]
    SharedControlRds,
    #[serde(alias = "shared_mds")]
    SharedControlMds,
}

impl ControllerMode {
    pub fn is_shared(self) -> bool {
        matches!(self, ControllerMode::SharedControlRds | ControllerMode::SharedControlMds)
    }

    pub fn uses_mds(self) -> bool {
        matches!(self, ControllerMode::MdsAutonomous | ControllerMode::SharedControlMds)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ControllerMode::MdsAutonomous => "mds",
            ControllerMode::RdsAutonomous => "rds",
            ControllerMode::SharedControlRds => "shared",
            ControllerMode::SharedControlMds => "shared_mds",
        }
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mds" | "mds_autonomous" => Ok(ControllerMode::MdsAutonomous),
            "rds" | "rds_autonomous" => Ok(ControllerMode::RdsAutonomous),
            "shared" | "shared_rds" | "shared_control_rds" => Ok(ControllerMode::SharedControlRds),
            "shared_mds" | "shared_control_mds" => Ok(ControllerMode::SharedControlMds),
            other => Err(ModelError::Invalid(format!("unknown controller `{other}`"))),
        }
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedCommand {
    pub command: Command,
    /// Simulation time at which the command arrived.
    pub received: f64,
}

/// Latest-value mailbox for external commands: writers overwrite, the
/// control loop reads whatever is newest.
#[derive(Debug, Clone, Default)]
pub struct Mailbox(Arc<Mutex<Option<StampedCommand>>>);

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&self, command: Command, received: f64) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(StampedCommand { command, received });
    }

    pub fn latest(&self) -> Option<StampedCommand> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    /// Gain k of the linear attractor system, 1/s.
    pub attractor_gain: f64,
    /// External commands older than this are replaced by zero, s.
    pub command_expiry: f64,
    pub mds: MdsParams,
    pub rds: RdsParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams { attractor_gain: 1.0, command_expiry: 0.3, mds: MdsParams::default(), rds: RdsParams::default() }
    }
}

/// Holonomic attractor velocity `k (goal - p)` of the control point, capped.
pub fn attractor_twist(pose: &Pose, goal: Vec2, robot: &RobotParams, gain: f64) -> Twist {
    let p = pose.control_point(robot.control_point_offset);
    ((goal - p) * gain).clamp_norm(robot.v_max).into()
}

/// First layer: attractor system in autonomous modes, latest non-expired
/// external command in shared modes.
pub fn high_level_command(
    mode: ControllerMode,
    pose: &Pose,
    attractor: Option<Vec2>,
    external: Option<StampedCommand>,
    now: f64,
    robot: &RobotParams,
    params: &PipelineParams,
) -> Result<Command, ModelError> {
    if mode.is_shared() {
        let Some(ext) = external else {
            return Err(ModelError::Invalid("shared control needs an external command stream".into()));
        };
        if now - ext.received > params.command_expiry {
            return Ok(Command::ZERO);
        }
        return Ok(ext.command.saturate(robot));
    }
    let goal = attractor.ok_or_else(|| ModelError::Invalid("autonomous mode needs an attractor".into()))?;
    let twist = attractor_twist(pose, goal, robot, params.attractor_gain);
    Ok(point_velocity_to_unicycle(pose, twist, robot.control_point_offset).saturate(robot))
}

/// Everything the controller decided during one control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    /// Robot pose at the start of the tick.
    pub pose: Pose,
    /// High-level input.
    pub u_h: Command,
    /// Avoidance layer output at the control point.
    pub u_avoid: Twist,
    /// Final command sent to the low-level controller.
    pub u_out: Command,
    /// Command actually executed after rate limits and contact forces.
    pub executed: Command,
    pub contact: ContactState,
    pub density_2_5: f64,
    pub density_5: f64,
    pub density_10: f64,
    /// Footprint-to-body gap to the closest crowd agent; `None` when no
    /// crowd agent is sensed.
    pub min_clearance: Option<f64>,

    pub blocked: bool,
    pub virtual_collision_active: bool,
}

/// Clearance between the robot footprint and the closest crowd agent.
pub fn min_clearance(crowd: &CrowdSnapshot, center: Vec2, robot: &RobotParams) -> Option<f64> {
    crowd
        .agents
        .iter()
        .filter(|a| a.kind.is_crowd())
        .map(|a| (a.position.distance(center) - a.radius - robot.footprint_radius).max(0.0))
        .reduce(f64::min)
}

/// Whether any crowd agent's body is inside the virtual boundary.
pub fn virtual_boundary_violated(crowd: &CrowdSnapshot, center: Vec2, robot: &RobotParams) -> bool {
    crowd
        .agents
        .iter()
        .filter(|a| a.kind.is_crowd())
        .any(|a| a.position.distance(center) - a.radius < robot.virtual_boundary_radius)
}

/// Per-trial controller state.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub mode: ControllerMode,
    pub robot: RobotParams,
    pub params: PipelineParams,
    pub goal: Option<Vec2>,
    pub mailbox: Mailbox,
    contact: ContactController,
}

impl Pipeline {
    pub fn new(mode: ControllerMode, robot: RobotParams, compliance: ComplianceParams, params: PipelineParams, goal: Option<Vec2>) -> Self {
        Pipeline { mode, robot, params, goal, mailbox: Mailbox::new(), contact: ContactController::new(compliance) }
    }

    pub fn compliance(&self) -> &ComplianceParams {
        &self.contact.params
    }

    /// Runs the full stack on the current world. The returned record has
    /// `executed` equal to the command executed so far; the caller fills in
    /// the command the world actually executes after stepping.
    pub fn tick(&mut self, world: &World) -> Result<(Command, TickRecord), ModelError> {
        let robot = &self.robot;
        let d = robot.control_point_offset;
        let pose = world.pose;
        let center = world.robot_center();
        let now = world.t();
        let sensing = self.params.mds.sensing_range.max(self.params.rds.sensing_range);
        let crowd = world.sensed_crowd(sensing);

        let u_h = high_level_command(self.mode, &pose, self.goal, self.mailbox.latest(), now, robot, &self.params)?;

        let (u_avoid, rds_cmd, rds_blocked) = if self.mode.uses_mds() {
            let nominal = match (self.mode, self.goal) {
                (ControllerMode::MdsAutonomous, Some(goal)) => attractor_twist(&pose, goal, robot, self.params.attractor_gain),
                _ => unicycle_to_point_velocity(&pose, u_h, d),
            };
            let obstacles = crowd_to_obstacles(&crowd, robot, center, &self.params.mds);
            (modulate_with(nominal, center, &obstacles, self.params.mds.gamma_cut), None, false)
        } else {
            let constraints = build_constraints(u_h, &crowd, &pose, robot, &self.params.rds);
            let res = solve(u_h, &constraints, robot);
            (unicycle_to_point_velocity(&pose, res.command, d), Some(res.command), res.blocked)
        };

        let contact = estimate_contact(&world.active_contacts, u_avoid);
        let executed_twist = unicycle_to_point_velocity(&pose, world.executed, d);
        let desired = self.contact.update(u_avoid, &contact, executed_twist);
        let u_out = match rds_cmd {
            Some(cmd) if !contact.in_contact => cmd,
            _ => point_velocity_to_unicycle(&pose, desired, d),
        }
        .saturate(robot);

        let record = TickRecord {
            t: now,
            pose,
            u_h,
            u_avoid,
            u_out,
            executed: world.executed,
            contact,
            density_2_5: density_around(&crowd, center, 2.5),
            density_5: density_around(&crowd, center, 5.0),
            density_10: density_around(&crowd, center, 10.0),
            min_clearance: min_clearance(&crowd, center, robot),
            blocked: rds_blocked && !contact.in_contact,
            virtual_collision_active: virtual_boundary_violated(&crowd, center, robot),
        };
        Ok((u_out, record))
    }
}

/// Whether the robot is within `margin` of the goal (closed ball).
pub fn goal_reached(pose: &Pose, goal: Vec2, margin: f64) -> bool {
    pose.position().distance(goal) <= margin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arena;

    fn robot() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn attractor_at_goal_is_zero() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let goal = pose.control_point(0.5);
        let c = high_level_command(ControllerMode::MdsAutonomous, &pose, Some(goal), None, 0.0, &robot(), &PipelineParams::default()).unwrap();
        assert_eq!(c, Command::ZERO);
    }

    #[test]
    fn attractor_far_ahead_is_capped() {
        let pose = Pose::new(0.0, 0.0, 0.0);
        let c = high_level_command(ControllerMode::RdsAutonomous, &pose, Some(Vec2::new(20.0, 0.0)), None, 0.0, &robot(), &PipelineParams::default()).unwrap();
        assert!((c.v - 1.0).abs() < 1e-12 && c.w.abs() < 1e-12);
    }

    #[test]
    fn shared_command_expires() {
        let pose = Pose::default();
        let p = PipelineParams::default();
        let ext = Some(StampedCommand { command: Command::new(0.5, 0.1), received: 1.0 });
        let fresh = high_level_command(ControllerMode::SharedControlRds, &pose, None, ext, 1.2, &robot(), &p).unwrap();
        assert_eq!(fresh, Command::new(0.5, 0.1));
        let stale = high_level_command(ControllerMode::SharedControlRds, &pose, None, ext, 1.31, &robot(), &p).unwrap();
        assert_eq!(stale, Command::ZERO);
        assert!(high_level_command(ControllerMode::SharedControlRds, &pose, None, None, 0.0, &robot(), &p).is_err());
    }

    #[test]
    fn goal_margin_is_closed() {
        let goal = Vec2::new(10.0, 0.0);
        assert!(goal_reached(&Pose::new(7.1, 0.0, 0.0), goal, 3.0));
        assert!(goal_reached(&Pose::new(7.0, 0.0, 0.0), goal, 3.0));
        assert!(!goal_reached(&Pose::new(0.0, 0.0, 0.0), goal, 3.0));
    }

    #[test]
    fn mailbox_latest_wins() {
        let m = Mailbox::new();
        assert!(m.latest().is_none());
        let writer = m.clone();
        writer.post(Command::new(0.1, 0.0), 0.0);
        writer.post(Command::new(0.2, 0.0), 0.1);
        assert_eq!(m.latest().unwrap().command, Command::new(0.2, 0.0));
    }

    fn empty_world() -> World {
        World::empty(Arena::new(30.0, 12.0), Pose::new(4.0, 6.0, 0.0), robot(), 0)
    }

    #[test]
    fn empty_crowd_passes_attractor_through() {
        for mode in [ControllerMode::MdsAutonomous, ControllerMode::RdsAutonomous] {
            let mut p = Pipeline::new(mode, robot(), ComplianceParams::default(), PipelineParams::default(), Some(Vec2::new(24.0, 6.0)));
            let w = empty_world();
            let (cmd, rec) = p.tick(&w).unwrap();
            assert!((cmd.v - rec.u_h.v).abs() < 1e-12 && (cmd.w - rec.u_h.w).abs() < 1e-12);
            assert!(!rec.virtual_collision_active && !rec.blocked && !rec.contact.in_contact);
            assert_eq!(rec.min_clearance, None);
        }
    }

    #[test]
    fn agent_inside_virtual_boundary_flags() {
        let mut w = empty_world();
        let c = w.robot_center();
        w.add_static_prop(c + Vec2::new(0.0, 3.0), 0.3);
        w.add_pedestrian(c + Vec2::new(0.0, 1.0), Vec2::ZERO, 0.3, true);
        let mut p = Pipeline::new(ControllerMode::MdsAutonomous, robot(), ComplianceParams::default(), PipelineParams::default(), Some(Vec2::new(24.0, 6.0)));
        let (_, rec) = p.tick(&w).unwrap();
        assert!(rec.virtual_collision_active);
        assert!((rec.min_clearance.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn contact_takes_precedence_over_avoidance() {
        let mut w = empty_world();
        let c = w.robot_center();
        w.add_static_prop(c + Vec2::new(0.74, 0.0), 0.3);
        w.detect_contacts();
        assert!(!w.active_contacts.is_empty());
        let mut p = Pipeline::new(ControllerMode::RdsAutonomous, robot(), ComplianceParams::default(), PipelineParams::default(), Some(Vec2::new(24.0, 6.0)));
        let (cmd, rec) = p.tick(&w).unwrap();
        assert!(rec.contact.in_contact);
        let expected = crate::contact::blend(rec.u_avoid, &rec.contact, Twist::ZERO, p.compliance());
        let expected = point_velocity_to_unicycle(&w.pose, expected, 0.5).saturate(&robot());
        assert!((cmd.v - expected.v).abs() < 1e-12 && (cmd.w - expected.w).abs() < 1e-12);
    }
}
