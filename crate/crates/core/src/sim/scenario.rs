use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Behavior, SpawnRequest, World};
use crate::error::ModelError;
use crate::model::{AgentKind, ScenarioKind, Vec2};

const CLEAR_RADIUS: f64 = 2.0;
const MIN_GAP: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 200;
const TROLLEY_RADIUS: f64 = 0.25;
const TROLLEY_OFFSET: f64 = 0.6;

/// Builds the initial world for a scenario. The number of pedestrians is
/// `round(target_density * arena area)`; placement is rejection-sampled with
/// non-overlapping bodies and a clear disc around the robot start.
pub fn spawn_scenario(req: &SpawnRequest<'_>) -> Result<World, ModelError> {
    let cfg = req.scenario;
    cfg.validate()?;
    req.robot.validate()?;
    let mut world = World::empty(cfg.arena, cfg.start, req.robot.clone(), cfg.seed);
    world.ped_params = req.pedestrians.clone();
    world.physics = req.physics.clone();
    // Placement draws from its own stream so adding agents later in the
    // trial does not shift the initial layout.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);

    let count = (cfg.target_density * cfg.arena.area()).round() as usize;
    let robot_center = cfg.start.control_point(req.robot.control_point_offset);
    let mut placer = Placer { world: &mut world, rng: &mut rng, robot_center };
    let desired = req.pedestrians.desired_speed;
    let arena = cfg.arena;
    let mid_y = 0.5 * (arena.min.y + arena.max.y);

    match cfg.kind {
        ScenarioKind::Sparse => {
            for i in 0..count {
                let pos = placer.free_point(0.3)?;
                if i % 2 == 0 {
                    placer.push(pos, Behavior::Anchored { anchor: pos }, 0.0);
                } else {
                    let target = placer.any_point();
                    let speed = desired * placer.rng.random_range(0.5..0.9);
                    placer.push(pos, Behavior::Walker { target }, speed);
                }
            }
        }
        ScenarioKind::Flow1d => {
            for _ in 0..count {
                let pos = placer.free_point(0.3)?;
                let sign = if pos.y < mid_y { 1.0 } else { -1.0 };
                let speed = desired * placer.rng.random_range(0.6..1.0);
                placer.push(pos, Behavior::Lane { direction: Vec2::new(sign, 0.0) }, speed);
            }
        }
        ScenarioKind::Mixed => {
            let queued = count / 5;
            let mut placed = 0;
            // Static queues: short lines of people standing 0.7 m apart.
            while placed < queued {
                let len = (queued - placed).min(placer.rng.random_range(3..=6));
                let head = placer.free_point(0.3)?;
                let vertical = placer.rng.random_bool(0.5);
                let step = if vertical { Vec2::new(0.0, 0.7) } else { Vec2::new(0.7, 0.0) };
                for k in 0..len {
                    let p = head + step * k as f64;
                    let p = if placer.is_free(p, 0.3) { p } else { placer.free_point(0.3)? };
                    placer.push(p, Behavior::Anchored { anchor: p }, 0.0);
                    placed += 1;
                }
            }
            for i in placed..count {
                let pos = placer.free_point(0.3)?;
                let roll = placer.rng.random::<f64>();
                let speed = desired * placer.rng.random_range(0.6..1.0);
                let behavior = if roll < 0.6 {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    Behavior::Lane { direction: Vec2::new(sign, 0.0) }
                } else if roll < 0.8 {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    Behavior::Lane { direction: Vec2::new(0.0, sign) }
                } else {
                    Behavior::Walker { target: placer.any_point() }
                };
                let owner = placer.push(pos, behavior.clone(), speed);
                if placer.rng.random_bool(0.1) {
                    let dir = match behavior {
                        Behavior::Lane { direction } => direction,
                        _ => Vec2::new(1.0, 0.0),
                    };
                    let tp = pos + dir * TROLLEY_OFFSET;
                    if placer.is_free(tp, TROLLEY_RADIUS) {
                        placer.push_kind(
                            tp,
                            Behavior::Carried { owner, offset: TROLLEY_OFFSET },
                            speed,
                            AgentKind::Trolley,
                            TROLLEY_RADIUS,
                        );
                    }
                }
            }
        }
    }
    Ok(world)
}

struct Placer<'a> {
    world: &'a mut World,
    rng: &'a mut ChaCha8Rng,
    robot_center: Vec2,
}

impl Placer<'_> {
    fn any_point(&mut self) -> Vec2 {
        let a = self.world.arena;
        Vec2::new(
            self.rng.random_range(a.min.x + 0.5..a.max.x - 0.5),
            self.rng.random_range(a.min.y + 0.5..a.max.y - 0.5),
        )
    }

    fn is_free(&self, p: Vec2, radius: f64) -> bool {
        let a = self.world.arena;
        if p.x < a.min.x + radius || p.x > a.max.x - radius || p.y < a.min.y + radius || p.y > a.max.y - radius {
            return false;
        }
        if p.distance(self.robot_center) < CLEAR_RADIUS {
            return false;
        }
        self.world
            .peds
            .iter()
            .all(|q| q.state.position.distance(p) >= q.state.radius + radius + MIN_GAP)
    }

    fn free_point(&mut self, radius: f64) -> Result<Vec2, ModelError> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let a = self.world.arena;
            let p = Vec2::new(
                self.rng.random_range(a.min.x + radius..a.max.x - radius),
                self.rng.random_range(a.min.y + radius..a.max.y - radius),
            );
            if self.is_free(p, radius) {
                return Ok(p);
            }
        }
        Err(ModelError::Invalid(format!(
            "cannot place {} agents: density unachievable in this arena",
            self.world.peds.len() + 1
        )))
    }

    fn push(&mut self, pos: Vec2, behavior: Behavior, speed: f64) -> u32 {
        let radius = self.rng.random_range(0.22..0.3);
        self.push_kind(pos, behavior, speed, AgentKind::Pedestrian, radius)
    }

    fn push_kind(&mut self, pos: Vec2, behavior: Behavior, speed: f64, kind: AgentKind, radius: f64) -> u32 {
        let aware = self.rng.random_bool(self.world.ped_params.robot_awareness);
        let velocity = match &behavior {
            Behavior::Lane { direction } => *direction * speed,
            _ => Vec2::ZERO,
        };
        let id = self.world.add_agent(pos, velocity, radius, kind, behavior, aware);
        if let Some(p) = self.world.peds.last_mut() {
            p.speed = speed;
        }
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arena, Pose, RobotParams, ScenarioConfig};
    use crate::sim::{ContactPhysics, PedModelParams};

    fn spawn(cfg: &ScenarioConfig) -> Result<World, ModelError> {
        spawn_scenario(&SpawnRequest {
            scenario: cfg,
            robot: &RobotParams::default(),
            pedestrians: &PedModelParams::default(),
            physics: &ContactPhysics::default(),
        })
    }

    #[test]
    fn zero_density_rejected() {
        for kind in [ScenarioKind::Sparse, ScenarioKind::Flow1d, ScenarioKind::Mixed] {
            let cfg = ScenarioConfig { kind, target_density: 0.0, ..Default::default() };
            assert!(spawn(&cfg).is_err());
        }
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = ScenarioConfig { seed: 42, ..Default::default() };
        let a = spawn(&cfg).unwrap();
        let b = spawn(&cfg).unwrap();
        assert_eq!(a.crowd(), b.crowd());
        let c = spawn(&ScenarioConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.crowd(), c.crowd());
    }

    #[test]
    fn density_within_tolerance_for_each_kind() {
        for kind in [ScenarioKind::Sparse, ScenarioKind::Flow1d, ScenarioKind::Mixed] {
            for density in [0.08, 0.3, 0.8] {
                let cfg = ScenarioConfig { kind, target_density: density, ..Default::default() };
                let w = spawn(&cfg).unwrap();
                let people = w.peds.iter().filter(|p| p.state.kind == AgentKind::Pedestrian).count();
                let measured = people as f64 / cfg.arena.area();
                assert!((measured - density).abs() <= 0.2 * density, "{kind:?} {density} -> {measured}");
            }
        }
    }

    #[test]
    fn unachievable_density_is_configuration_error() {
        let cfg = ScenarioConfig {
            target_density: 1.2,
            arena: Arena::new(6.0, 4.0),
            start: Pose::new(3.0, 2.0, 0.0),
            goal: Vec2::new(5.0, 2.0),
            ..Default::default()
        };
        assert!(matches!(spawn(&cfg), Err(ModelError::Invalid(_))));
    }
}
