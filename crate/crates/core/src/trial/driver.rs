//! Scripted stand-in for a human joystick driver in shared-control trials.
//!
//! The driver heads for the goal, veers away from people in front of it,
//! slows down as the nearest frontal clearance shrinks, and refreshes its
//! joystick reading at a fixed rate with a little noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{wrap_angle, Command, CrowdSnapshot, Pose, RobotParams, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// Joystick refresh rate, Hz.
    pub rate: f64,
    /// Cruise speed as a fraction of v_max.
    pub cruise: f64,
    /// Heading error to turn-rate gain, 1/s.
    pub heading_gain: f64,
    /// People closer than this (surface to surface) are steered around, m.
    pub look_range: f64,
    /// Decay length of the steering repulsion, m.
    pub personal_space: f64,
    /// Frontal clearance at which the driver starts to slow, m.
    pub slow_range: f64,
    /// Largest steering deviation from the goal direction, rad.
    pub max_detour: f64,
    /// Time constant of the detour filter, s.
    pub detour_lag: f64,
    /// Minimum speed fraction kept while slowing.
    pub min_speed: f64,
    /// Standard deviation of the normalized joystick noise.
    pub noise: f64,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            rate: 20.0,
            cruise: 0.9,
            heading_gain: 1.0,
            look_range: 3.0,
            personal_space: 0.8,
            slow_range: 1.0,
            max_detour: std::f64::consts::FRAC_PI_3,
            detour_lag: 0.5,
            min_speed: 0.3,
            noise: 0.03,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedDriver {
    pub params: DriverParams,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    /// Low-passed detour angle; people commit to passing on one side.
    detour: f64,
}

impl SimulatedDriver {
    pub fn new(params: DriverParams, seed: u64) -> Self {
        let noise = Normal::new(0.0, params.noise.max(0.0)).expect("finite standard deviation");
        SimulatedDriver { params, rng: ChaCha8Rng::seed_from_u64(seed), noise, detour: 0.0 }
    }

    /// Number of control ticks each joystick reading is held for.
    pub fn hold_ticks(&self, dt: f64) -> u64 {
        ((1.0 / (self.params.rate * dt)).round() as u64).max(1)
    }

    pub fn command(&mut self, pose: &Pose, crowd: &CrowdSnapshot, goal: Vec2, robot: &RobotParams) -> Command {
        let p = &self.params;
        let center = pose.control_point(robot.control_point_offset);
        let heading = pose.heading();
        let to_goal = (goal - center).normalized().unwrap_or(heading);
        let mut steer = to_goal;
        let mut front_clearance = f64::INFINITY;
        for a in crowd.agents.iter().filter(|a| a.kind.is_crowd()) {
            let offset = a.position - center;
            let Some(dir) = offset.normalized() else { continue };
            let gap = offset.norm() - a.radius - robot.footprint_radius;
            let ahead = dir.dot(heading);
            if gap > p.look_range || ahead < -0.2 {
                continue;
            }
            steer -= dir * ((-gap.max(0.0) / p.personal_space).exp() * (0.5 + 0.5 * ahead));
            if ahead > 0.5 {
                front_clearance = front_clearance.min(gap);
            }
        }
        // Detours stay within a bounded angle of the goal direction.
        let target = wrap_angle(steer.angle() - to_goal.angle()).unwrap_or(0.0).clamp(-p.max_detour, p.max_detour);
        let alpha = 1.0 / (p.rate * p.detour_lag).max(1.0);
        self.detour += alpha * (target - self.detour);
        let err = wrap_angle(to_goal.angle() + self.detour - pose.theta).unwrap_or(0.0);
        let slow = ((front_clearance - 0.2) / p.slow_range).clamp(p.min_speed, 1.0);
        let v = p.cruise * slow * err.cos().max(0.0);
        let w = (p.heading_gain * err / robot.w_max).clamp(-1.0, 1.0);
        let jitter = Vec2::new(self.noise.sample(&mut self.rng), self.noise.sample(&mut self.rng));
        let u = Vec2::new((v + jitter.x).clamp(-1.0, 1.0), (w + jitter.y).clamp(-1.0, 1.0));
        Command::from_normalized(u, robot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentKind, AgentState};

    fn quiet() -> SimulatedDriver {
        SimulatedDriver::new(DriverParams { noise: 0.0, ..Default::default() }, 1)
    }

    #[test]
    fn heads_for_goal_in_free_space() {
        let mut d = quiet();
        let robot = RobotParams::default();
        let c = d.command(&Pose::new(0.0, 0.0, 0.0), &CrowdSnapshot::default(), Vec2::new(20.0, 0.0), &robot);
        assert!((c.v - 0.9).abs() < 1e-12 && c.w.abs() < 1e-12);
        assert_eq!(d.hold_ticks(0.01), 5);
    }

    #[test]
    fn slows_and_veers_for_person_ahead() {
        let mut d = quiet();
        let robot = RobotParams::default();
        let person = AgentState { id: 0, position: Vec2::new(1.8, 0.1), velocity: Vec2::ZERO, radius: 0.3, kind: AgentKind::Pedestrian };
        let crowd = CrowdSnapshot { t: 0.0, agents: vec![person] };
        let c = d.command(&Pose::new(0.0, 0.0, 0.0), &crowd, Vec2::new(20.0, 0.0), &robot);
        assert!(c.v < 0.5);
        assert!(c.w < 0.0, "turns away from a person slightly to the left: {c:?}");
    }
}
