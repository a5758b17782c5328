//! Deterministic fixed-step world: pedestrians, robot rigid-body motion and
//! bumper contact physics.
//!
//! One call to [`World::step`] advances pedestrians, then the robot, then
//! re-detects contacts. All randomness lives in the per-world ChaCha stream,
//! so identical configuration and command streams give bit-identical states.

mod scenario;
mod social;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    point_velocity_to_unicycle, AgentKind, AgentState, Arena, Command, CrowdSnapshot, Pose,
    RobotParams, ScenarioConfig, Vec2,
};

pub use scenario::spawn_scenario;
pub use social::step_pedestrians;

/// Physics step used by the simulator and the control loop.
pub const DEFAULT_DT: f64 = 0.01;

/// Social-force pedestrian model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PedModelParams {
    pub desired_speed: f64,
    pub relaxation_time: f64,
    /// A, in m/s^2.
    pub repulsion_strength: f64,
    /// B, in meters.
    pub repulsion_range: f64,
    /// Probability that a pedestrian reacts to the robot.
    pub robot_awareness: f64,
}

impl Default for PedModelParams {
    fn default() -> Self {
        PedModelParams {
            desired_speed: 1.3,
            relaxation_time: 0.5,
            repulsion_strength: 5.0,
            repulsion_range: 0.3,
            robot_awareness: 0.8,
        }
    }
}

/// Bumper and body contact physics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactPhysics {
    /// Spring constant k_c, N/m.
    pub stiffness: f64,
    /// Damper c_c, N s/m.
    pub damping: f64,
    /// Half-width of the force-sensing frontal arc, radians.
    pub bumper_half_angle: f64,
    /// Mass through which contact forces perturb the robot body, kg.
    pub body_mass: f64,
    /// Mass of a pedestrian pushed by the robot, kg.
    pub pedestrian_mass: f64,
}

impl Default for ContactPhysics {
    fn default() -> Self {
        ContactPhysics {
            stiffness: 2000.0,
            damping: 50.0,
            bumper_half_angle: 70.0 * PI / 180.0,
            body_mass: 120.0,
            pedestrian_mass: 70.0,
        }
    }
}

/// Spring-damper normal force for a penetration `delta` changing at `delta_rate`.
pub fn contact_force(delta: f64, delta_rate: f64, physics: &ContactPhysics) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    (physics.stiffness * delta + physics.damping * delta_rate).max(0.0)
}

/// A closed (or still open) bumper contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t: f64,
    pub agent_id: u32,
    pub force_peak: f64,
    /// Unit normal from the robot towards the agent at peak force.
    pub normal: Vec2,
    pub duration: f64,
    /// Whether the contact touched the force-sensing frontal bumper.
    pub frontal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveContact {
    pub agent_id: u32,
    pub penetration: f64,
    pub penetration_rate: f64,
    /// Unit vector from the robot body center into the agent.
    pub normal: Vec2,
    pub force: f64,
    /// Frontal contacts produce a bumper force reading for the controller.
    pub frontal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Behavior {
    /// Static pedestrian relaxing back to its spot.
    Anchored { anchor: Vec2 },
    /// Random walker heading to a target, re-drawn on arrival.
    Walker { target: Vec2 },
    /// Periodic lane flow along `axis` (unit x or y) with signed direction.
    Lane { direction: Vec2 },
    /// Trolley pushed ahead of its owner.
    Carried { owner: u32, offset: f64 },
    /// Immovable prop (walls, bollards).
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pedestrian {
    pub state: AgentState,
    pub behavior: Behavior,
    pub aware: bool,
    pub speed: f64,
}

/// Full simulator state for one trial.
#[derive(Debug, Clone)]
pub struct World {
    step_index: u64,
    pub dt: f64,
    pub arena: Arena,
    pub robot_params: RobotParams,
    pub physics: ContactPhysics,
    pub ped_params: PedModelParams,
    pub pose: Pose,
    /// Executed (rate-limited, physically perturbed) command.
    pub executed: Command,
    pub(crate) peds: Vec<Pedestrian>,
    pub active_contacts: Vec<ActiveContact>,
    open_events: BTreeMap<u32, ContactEvent>,
    pub events: Vec<ContactEvent>,
    pub(crate) rng: ChaCha8Rng,
}

impl World {
    /// An empty world with the robot at `pose`.
    pub fn empty(arena: Arena, pose: Pose, robot: RobotParams, seed: u64) -> World {
        use rand::SeedableRng;
        World {
            step_index: 0,
            dt: DEFAULT_DT,
            arena,
            robot_params: robot,
            physics: ContactPhysics::default(),
            ped_params: PedModelParams::default(),
            pose,
            executed: Command::ZERO,
            peds: Vec::new(),
            active_contacts: Vec::new(),
            open_events: BTreeMap::new(),
            events: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn t(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Center of the robot body disc (the holonomic control point).
    pub fn robot_center(&self) -> Vec2 {
        self.pose.control_point(self.robot_params.control_point_offset)
    }

    pub fn crowd(&self) -> CrowdSnapshot {
        CrowdSnapshot { t: self.t(), agents: self.peds.iter().map(|p| p.state.clone()).collect() }
    }

    /// Crowd restricted to agents whose centers lie within `range` of the robot.
    pub fn sensed_crowd(&self, range: f64) -> CrowdSnapshot {
        let c = self.robot_center();
        CrowdSnapshot {
            t: self.t(),
            agents: self
                .peds
                .iter()
                .filter(|p| p.state.position.distance(c) <= range)
                .map(|p| p.state.clone())
                .collect(),
        }
    }

    pub fn agent_count(&self) -> usize {
        self.peds.len()
    }

    /// Adds an immovable disc, e.g. a wall segment approximated by a large radius.
    pub fn add_static_prop(&mut self, position: Vec2, radius: f64) -> u32 {
        self.add_agent(position, Vec2::ZERO, radius, AgentKind::StaticProp, Behavior::Fixed, false)
    }

    /// Adds a pedestrian that keeps walking with `velocity` (no lane wrapping
    /// beyond the arena clamp).
    pub fn add_pedestrian(&mut self, position: Vec2, velocity: Vec2, radius: f64, aware: bool) -> u32 {
        let speed = velocity.norm();
        let behavior = match velocity.normalized() {
            Some(direction) => Behavior::Lane { direction },
            None => Behavior::Anchored { anchor: position },
        };
        let id = self.add_agent(position, velocity, radius, AgentKind::Pedestrian, behavior, aware);
        if let Some(p) = self.peds.last_mut() {
            p.speed = speed;
        }
        id
    }

    pub(crate) fn add_agent(
        &mut self,
        position: Vec2,
        velocity: Vec2,
        radius: f64,
        kind: AgentKind,
        behavior: Behavior,
        aware: bool,
    ) -> u32 {
        let id = self.peds.iter().map(|p| p.state.id + 1).max().unwrap_or(0);
        self.peds.push(Pedestrian {
            state: AgentState { id, position, velocity, radius, kind },
            behavior,
            aware,
            speed: self.ped_params.desired_speed,
        });
        id
    }

    /// Advances the whole world by one step under robot command `cmd`.
    pub fn step(&mut self, cmd: Command) {
        step_pedestrians(self);
        self.step_robot(cmd);
        self.step_index += 1;
        self.detect_contacts();
    }

    /// Rate- and magnitude-limits `cmd`, applies contact admittance at the
    /// control point and integrates the unicycle.
    pub fn step_robot(&mut self, cmd: Command) -> (Pose, Command) {
        let r = &self.robot_params;
        let dt = self.dt;
        let prev = self.executed;
        let dv = (cmd.v - prev.v).clamp(-r.a_max * dt, r.a_max * dt);
        let dw = (cmd.w - prev.w).clamp(-r.alpha_max * dt, r.alpha_max * dt);
        let mut exec = Command::new(
            (prev.v + dv).clamp(-r.v_max, r.v_max),
            (prev.w + dw).clamp(-r.w_max, r.w_max),
        );

        let push: Vec2 = self
            .active_contacts
            .iter()
            .fold(Vec2::ZERO, |acc, c| acc - c.normal * c.force);
        if push != Vec2::ZERO {
            let dxi = push * (dt / self.physics.body_mass);
            let dc = point_velocity_to_unicycle(&self.pose, dxi.into(), r.control_point_offset);
            exec = Command::new(
                (exec.v + dc.v).clamp(-r.v_max, r.v_max),
                (exec.w + dc.w).clamp(-r.w_max, r.w_max),
            );
        }

        let (s, c) = self.pose.theta.sin_cos();
        let mut p = self.pose.position() + Vec2::new(c, s) * (exec.v * dt);
        let theta = self.pose.theta + exec.w * dt;
        // Arena walls: keep the body disc inside the rectangle.
        let d = r.control_point_offset;
        let heading = Vec2::from_angle(theta);
        let center = self.arena.clamp(p + heading * d, r.footprint_radius);
        p = center - heading * d;
        self.pose = Pose::new(p.x, p.y, theta);
        self.executed = exec;
        (self.pose, exec)
    }

    /// Recomputes the active contact set and opens/closes contact events.
    pub fn detect_contacts(&mut self) -> &[ActiveContact] {
        let center = self.robot_center();
        let heading = self.pose.heading();
        let rf = self.robot_params.footprint_radius;
        let dt = self.dt;
        let t = self.t();
        let mut next = Vec::new();
        for p in &self.peds {
            let offset = p.state.position - center;
            let dist = offset.norm();
            let delta = p.state.radius + rf - dist;
            if delta <= 0.0 {
                continue;
            }
            let normal = offset.normalized().unwrap_or(heading);
            let prev = self.active_contacts.iter().find(|c| c.agent_id == p.state.id);
            let rate = prev.map_or(0.0, |c| (delta - c.penetration) / dt);
            let force = contact_force(delta, rate, &self.physics);
            let frontal = normal.dot(heading) >= self.physics.bumper_half_angle.cos() - 1e-12;
            next.push(ActiveContact {
                agent_id: p.state.id,
                penetration: delta,
                penetration_rate: rate,
                normal,
                force,
                frontal,
            });
        }

        for c in &next {
            let ev = self.open_events.entry(c.agent_id).or_insert_with(|| ContactEvent {
                t,
                agent_id: c.agent_id,
                force_peak: 0.0,
                normal: c.normal,
                duration: 0.0,
                frontal: c.frontal,
            });
            if c.force > ev.force_peak {
                ev.force_peak = c.force;
                ev.normal = c.normal;
            }
            ev.frontal |= c.frontal;
            ev.duration = t - ev.t;
        }
        let closed: Vec<u32> = self
            .open_events
            .keys()
            .copied()
            .filter(|id| !next.iter().any(|c| c.agent_id == *id))
            .collect();
        for id in closed {
            if let Some(mut ev) = self.open_events.remove(&id) {
                ev.duration = t - ev.t;
                self.events.push(ev);
            }
        }
        self.active_contacts = next;
        &self.active_contacts
    }

    /// Contact events still open at trial end, closed at the current time.
    pub fn close_all_events(&mut self) -> Vec<ContactEvent> {
        let t = self.t();
        let open = std::mem::take(&mut self.open_events);
        let mut all = self.events.clone();
        all.extend(open.into_values().map(|mut e| {
            e.duration = t - e.t;
            e
        }));
        all.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.agent_id.cmp(&b.agent_id)));
        all
    }
}

/// Pedestrian density (people per square meter) within the closed ball of
/// `radius` around `center`. Trolleys and props are not people.
pub fn density_around(crowd: &CrowdSnapshot, center: Vec2, radius: f64) -> f64 {
    if !(radius > 0.0) {
        return 0.0;
    }
    let r2 = radius * radius;
    let count = crowd
        .agents
        .iter()
        .filter(|a| a.kind == AgentKind::Pedestrian && (a.position - center).norm_sq() <= r2)
        .count();
    count as f64 / (PI * r2)
}

/// Scenario-level configuration for spawning.
pub struct SpawnRequest<'a> {
    pub scenario: &'a ScenarioConfig,
    pub robot: &'a RobotParams,
    pub pedestrians: &'a PedModelParams,
    pub physics: &'a ContactPhysics,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScenarioKind;

    fn world() -> World {
        World::empty(Arena::new(30.0, 12.0), Pose::new(5.0, 6.0, 0.0), RobotParams::default(), 1)
    }

    #[test]
    fn contact_force_example() {
        let phys = ContactPhysics::default();
        assert!((contact_force(0.01, 0.0, &phys) - 20.0).abs() < 1e-12);
        assert_eq!(contact_force(0.0, 0.0, &phys), 0.0);
        assert_eq!(contact_force(-0.1, 5.0, &phys), 0.0);
        // Continuity at onset: F(0+) -> 0 when the rate vanishes.
        assert!(contact_force(1e-9, 0.0, &phys) < 1e-5);
    }

    #[test]
    fn rate_limit_step() {
        let mut w = world();
        let (_, exec) = w.step_robot(Command::new(1.0, 0.0));
        assert!((exec.v - 0.01).abs() < 1e-12);
        assert_eq!(exec.w, 0.0);
    }

    #[test]
    fn steady_command_advances_straight() {
        let mut w = world();
        w.executed = Command::new(0.5, 0.0);
        let before = w.pose;
        let (after, _) = w.step_robot(Command::new(0.5, 0.0));
        assert!((after.x - before.x - 0.005).abs() < 1e-12);
        assert_eq!(after.y, before.y);
    }

    #[test]
    fn zero_command_is_fixed_point() {
        let mut w = world();
        let before = w.pose;
        for _ in 0..500 {
            w.step(Command::ZERO);
        }
        assert_eq!(w.pose, before);
        assert!(w.active_contacts.is_empty());
    }

    #[test]
    fn no_overlap_no_contacts() {
        let mut w = world();
        w.add_static_prop(Vec2::new(10.0, 6.0), 0.3);
        assert!(w.detect_contacts().is_empty());
    }

    #[test]
    fn frontal_and_rear_contacts() {
        let mut w = world();
        let c = w.robot_center();
        // 1 cm overlap dead ahead.
        w.add_static_prop(c + Vec2::new(0.45 + 0.3 - 0.01, 0.0), 0.3);
        // Overlap behind the body.
        w.add_static_prop(c + Vec2::new(-(0.45 + 0.3 - 0.02), 0.0), 0.3);
        let contacts = w.detect_contacts().to_vec();
        assert_eq!(contacts.len(), 2);
        let front = contacts.iter().find(|c| c.agent_id == 0).unwrap();
        assert!(front.frontal);
        assert!((front.force - 20.0).abs() < 1e-6);
        let rear = contacts.iter().find(|c| c.agent_id == 1).unwrap();
        assert!(!rear.frontal);
        // Separate: both events close.
        w.peds.clear();
        w.step_index += 1;
        w.detect_contacts();
        assert_eq!(w.events.len(), 2);
        assert!(w.events.iter().any(|e| !e.frontal));
    }

    #[test]
    fn density_examples() {
        let empty = CrowdSnapshot::default();
        assert_eq!(density_around(&empty, Vec2::ZERO, 2.5), 0.0);
        let agent = |id, x: f64| AgentState {
            id,
            position: Vec2::new(x, 0.0),
            velocity: Vec2::ZERO,
            radius: 0.3,
            kind: AgentKind::Pedestrian,
        };
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![agent(0, 0.5), agent(1, 1.0), agent(2, -2.0), agent(3, 7.0)] };
        assert!((density_around(&crowd, Vec2::ZERO, 2.5) - 0.152788745).abs() < 1e-6);
        let boundary = CrowdSnapshot { t: 0.0, agents: vec![agent(0, 2.5)] };
        assert!(density_around(&boundary, Vec2::ZERO, 2.5) > 0.0);
    }

    #[test]
    fn spawn_example_has_expected_count() {
        let cfg = ScenarioConfig {
            kind: ScenarioKind::Sparse,
            target_density: 0.1,
            arena: Arena::new(20.0, 10.0),
            start: Pose::new(2.0, 5.0, 0.0),
            goal: Vec2::new(18.0, 5.0),
            ..Default::default()
        };
        let w = spawn_scenario(&SpawnRequest {
            scenario: &cfg,
            robot: &RobotParams::default(),
            pedestrians: &PedModelParams::default(),
            physics: &ContactPhysics::default(),
        })
        .unwrap();
        let people = w.peds.iter().filter(|p| p.state.kind == AgentKind::Pedestrian).count();
        assert!((16..=24).contains(&people), "{people}");
    }
}
