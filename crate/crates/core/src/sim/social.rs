use rand::Rng;

use super::{Behavior, Pedestrian, World};
use crate::model::Vec2;

/// Pairs farther apart than this (surface to surface) do not interact.
const INTERACTION_CUTOFF: f64 = 3.0;
const ANCHOR_GAIN: f64 = 1.0;
const ANCHOR_SPEED: f64 = 0.5;

/// Social-force update of every mobile agent by one step of `world.dt`.
///
/// Each agent relaxes towards its desired velocity and is repelled by
/// neighbors (and, when aware, by the robot body) with
/// `A * exp((r_ij - d_ij) / B)`. Overlapping bodies are additionally pushed
/// apart by the contact spring. Accelerations are computed from the start-of-
/// step state, so the result does not depend on agent order.
pub fn step_pedestrians(world: &mut World) {
    let dt = world.dt;
    let accels: Vec<Option<Vec2>> = (0..world.peds.len()).map(|i| acceleration(world, i)).collect();
    let cap = 2.0 * world.ped_params.desired_speed;
    for (p, acc) in world.peds.iter_mut().zip(&accels) {
        if let Some(a) = acc {
            let v = (p.state.velocity + *a * dt).clamp_norm(cap);
            p.state.velocity = v;
            p.state.position += v * dt;
        }
    }
    wrap_and_retarget(world);
    place_trolleys(world);
}

/// Total acceleration of agent `i`, or `None` for agents that are not
/// integrated (props and carried trolleys).
pub(crate) fn acceleration(world: &World, i: usize) -> Option<Vec2> {
    let me = &world.peds[i];
    if matches!(me.behavior, Behavior::Fixed | Behavior::Carried { .. }) {
        return None;
    }
    let params = &world.ped_params;
    let mut acc = (desired_velocity(me) - me.state.velocity) * (1.0 / params.relaxation_time);
    let k_body = world.physics.stiffness / world.physics.pedestrian_mass;
    for (j, other) in world.peds.iter().enumerate() {
        if j == i || carried_by(other, me.state.id) || carried_by(me, other.state.id) {
            continue;
        }
        acc += pair_force(me.state.position, me.state.radius, other.state.position, other.state.radius, params.repulsion_strength, params.repulsion_range, k_body);
    }
    let center = world.robot_center();
    let rf = world.robot_params.footprint_radius;
    let strength = if me.aware { params.repulsion_strength } else { 0.0 };
    acc += pair_force(me.state.position, me.state.radius, center, rf, strength, params.repulsion_range, k_body);
    Some(acc)
}

fn carried_by(trolley: &Pedestrian, owner: u32) -> bool {
    matches!(trolley.behavior, Behavior::Carried { owner: o, .. } if o == owner)
}

/// Repulsion on a body at `p` from a body at `q`: social term scaled by
/// `strength`, plus a spring push while the bodies overlap.
fn pair_force(p: Vec2, rp: f64, q: Vec2, rq: f64, strength: f64, range: f64, k_body: f64) -> Vec2 {
    let offset = p - q;
    let dist = offset.norm();
    let sum = rp + rq;
    if dist - sum > INTERACTION_CUTOFF {
        return Vec2::ZERO;
    }
    let n = offset.normalized().unwrap_or(Vec2::new(1.0, 0.0));
    let mut mag = strength * ((sum - dist) / range).exp();
    if dist < sum {
        mag += k_body * (sum - dist);
    }
    n * mag
}

fn desired_velocity(p: &Pedestrian) -> Vec2 {
    match &p.behavior {
        Behavior::Anchored { anchor } => ((*anchor - p.state.position) * ANCHOR_GAIN).clamp_norm(ANCHOR_SPEED),
        Behavior::Walker { target } => (*target - p.state.position)
            .normalized()
            .map_or(Vec2::ZERO, |d| d * p.speed),
        Behavior::Lane { direction } => *direction * p.speed,
        Behavior::Carried { .. } | Behavior::Fixed => Vec2::ZERO,
    }
}

fn wrap_and_retarget(world: &mut World) {
    let arena = world.arena;
    let center = world.robot_center();
    let World { peds, rng, .. } = world;
    for p in peds.iter_mut() {
        let r = p.state.radius;
        match &mut p.behavior {
            Behavior::Lane { direction } => {
                let mut pos = p.state.position;
                if direction.x != 0.0 {
                    if pos.x > arena.max.x {
                        pos.x -= arena.width();
                    } else if pos.x < arena.min.x {
                        pos.x += arena.width();
                    }
                    pos.y = pos.y.clamp(arena.min.y + r, arena.max.y - r);
                } else {
                    if pos.y > arena.max.y {
                        pos.y -= arena.height();
                    } else if pos.y < arena.min.y {
                        pos.y += arena.height();
                    }
                    pos.x = pos.x.clamp(arena.min.x + r, arena.max.x - r);
                }
                // Never teleport onto the robot; wait at the edge instead.
                if pos.distance(center) > 1.5 {
                    p.state.position = pos;
                } else {
                    p.state.position = arena.clamp(p.state.position, r);
                }
            }
            Behavior::Walker { target } => {
                p.state.position = arena.clamp(p.state.position, r);
                if p.state.position.distance(*target) < 0.5 {
                    *target = Vec2::new(
                        rng.random_range(arena.min.x + 0.5..arena.max.x - 0.5),
                        rng.random_range(arena.min.y + 0.5..arena.max.y - 0.5),
                    );
                }
            }
            Behavior::Anchored { .. } => {
                p.state.position = arena.clamp(p.state.position, r);
            }
            Behavior::Carried { .. } | Behavior::Fixed => {}
        }
    }
}

fn place_trolleys(world: &mut World) {
    for i in 0..world.peds.len() {
        let Behavior::Carried { owner, offset } = world.peds[i].behavior else {
            continue;
        };
        let Some(o) = world.peds.iter().find(|p| p.state.id == owner) else {
            continue;
        };
        let dir = match &o.behavior {
            Behavior::Lane { direction } => *direction,
            Behavior::Walker { target } => (*target - o.state.position).normalized().unwrap_or(Vec2::new(1.0, 0.0)),
            _ => Vec2::new(1.0, 0.0),
        };
        let (pos, vel) = (o.state.position + dir * offset, o.state.velocity);
        let t = &mut world.peds[i].state;
        t.position = pos;
        t.velocity = vel;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arena, Pose, RobotParams};

    fn world() -> World {
        World::empty(Arena::new(40.0, 20.0), Pose::new(2.0, 2.0, 0.0), RobotParams::default(), 3)
    }

    #[test]
    fn lone_agent_at_desired_velocity_is_unchanged() {
        let mut w = world();
        let v = Vec2::new(1.3, 0.0);
        w.add_pedestrian(Vec2::new(20.0, 10.0), v, 0.3, true);
        step_pedestrians(&mut w);
        assert_eq!(w.peds[0].state.velocity, v);
    }

    #[test]
    fn head_on_pair_decelerates_along_joining_line() {
        let mut w = world();
        // Centers 1.1 m apart: 0.5 m gap between bodies of radius 0.3.
        w.add_pedestrian(Vec2::new(20.0, 10.0), Vec2::new(1.3, 0.0), 0.3, true);
        w.add_pedestrian(Vec2::new(21.1, 10.0), Vec2::new(-1.3, 0.0), 0.3, true);
        let a0 = acceleration(&w, 0).unwrap();
        let a1 = acceleration(&w, 1).unwrap();
        assert!(a0.x < 0.0 && a0.y.abs() < 1e-12);
        assert!(a1.x > 0.0 && a1.y.abs() < 1e-12);
        // Symmetric model: equal and opposite.
        assert!((a0.x + a1.x).abs() < 1e-12);
        step_pedestrians(&mut w);
        assert!(w.peds[0].state.velocity.x < 1.3);
        assert!(w.peds[1].state.velocity.x > -1.3);
    }

    #[test]
    fn unaware_agent_ignores_robot() {
        let mut w = world();
        let near = w.robot_center() + Vec2::new(0.45 + 0.3 + 0.2, 0.0);
        w.add_pedestrian(near, Vec2::new(1.0, 0.0), 0.3, false);
        let with_robot = acceleration(&w, 0).unwrap();
        // Same agent with the robot moved far away.
        w.pose = Pose::new(38.0, 18.0, 0.0);
        let without = acceleration(&w, 0).unwrap();
        assert_eq!(with_robot, without);

        w.pose = Pose::new(2.0, 2.0, 0.0);
        w.peds[0].aware = true;
        let aware = acceleration(&w, 0).unwrap();
        assert!(aware.x > with_robot.x);
    }

    #[test]
    fn speed_is_capped() {
        let mut w = world();
        w.add_pedestrian(Vec2::new(20.0, 10.0), Vec2::new(1.0, 0.0), 0.3, true);
        w.add_pedestrian(Vec2::new(20.3, 10.0), Vec2::ZERO, 0.3, true);
        for _ in 0..50 {
            step_pedestrians(&mut w);
            for p in &w.peds {
                assert!(p.state.velocity.norm() <= 2.6 + 1e-9);
            }
        }
    }
}
