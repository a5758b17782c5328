//! Browser bindings: the MDS velocity field, a single RDS correction and a
//! steppable trial the page can drive from the keyboard.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use crowdnav::mds::{crowd_to_obstacles, modulate, MdsParams};
use crowdnav::model::{AgentKind, AgentState, Command, CrowdSnapshot, Pose, RobotParams, Twist, Vec2};
use crowdnav::pipeline::ControllerMode;
use crowdnav::rds::{build_constraints, solve, RdsParams};
use crowdnav::trial::{free_path_time, run_trial, CommandSource, TrialConfig, TrialRunner};

fn disc_agents(flat: &[f64]) -> CrowdSnapshot {
    // x, y, radius per agent, at rest.
    let agents = flat
        .chunks_exact(3)
        .enumerate()
        .map(|(i, c)| AgentState {
            id: i as u32,
            position: Vec2::new(c[0], c[1]),
            velocity: Vec2::ZERO,
            radius: c[2],
            kind: AgentKind::Pedestrian,
        })
        .collect();
    CrowdSnapshot { t: 0.0, agents }
}

/// Samples the modulated attractor field toward `(gx, gy)` on an
/// `nx` x `ny` grid over `[x0, x1] x [y0, y1]`, row major.
///
/// `discs` holds `x, y, r` triples. Each cell yields `vx, vy`; points inside
/// an inflated obstacle yield NaN.
pub fn field(discs: &[f64], goal: Vec2, lo: Vec2, hi: Vec2, nx: usize, ny: usize) -> Vec<f64> {
    let robot = RobotParams::default();
    let params = MdsParams::default();
    let crowd = disc_agents(discs);
    let mut out = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            let fx = if nx > 1 { i as f64 / (nx - 1) as f64 } else { 0.5 };
            let fy = if ny > 1 { j as f64 / (ny - 1) as f64 } else { 0.5 };
            let p = Vec2::new(lo.x + fx * (hi.x - lo.x), lo.y + fy * (hi.y - lo.y));
            let obstacles = crowd_to_obstacles(&crowd, &robot, p, &params);
            let inside = obstacles.iter().any(|o| p.distance(o.center) < o.effective_radius(0.0));
            if inside {
                out.extend([f64::NAN, f64::NAN]);
                continue;
            }
            let nominal: Twist = (goal - p).clamp_norm(1.0).into();
            let v = modulate(nominal, p, &obstacles).vec();
            out.extend([v.x, v.y]);
        }
    }
    out
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn mds_field(discs: &[f64], gx: f64, gy: f64, x0: f64, y0: f64, x1: f64, y1: f64, nx: usize, ny: usize) -> Vec<f64> {
    field(discs, Vec2::new(gx, gy), Vec2::new(x0, y0), Vec2::new(x1, y1), nx, ny)
}

/// Corrects the command `(v, w)` of a robot at the origin facing +x against
/// `agents` (`x, y, vx, vy, r` per agent).
///
/// Returns `v, w, blocked`, then `nv, nw, offset` for every half-plane in
/// normalized command space.
pub fn rds_correct(v: f64, w: f64, agents: &[f64]) -> Vec<f64> {
    let robot = RobotParams::default();
    let crowd = CrowdSnapshot {
        t: 0.0,
        agents: agents
            .chunks_exact(5)
            .enumerate()
            .map(|(i, c)| AgentState {
                id: i as u32,
                position: Vec2::new(c[0], c[1]),
                velocity: Vec2::new(c[2], c[3]),
                radius: c[4],
                kind: AgentKind::Pedestrian,
            })
            .collect(),
    };
    let nominal = Command::new(v, w);
    let pose = Pose::new(-robot.control_point_offset, 0.0, 0.0);
    let constraints = build_constraints(nominal, &crowd, &pose, &robot, &RdsParams::default());
    let r = solve(nominal, &constraints, &robot);
    let mut out = vec![r.command.v, r.command.w, if r.blocked { 1.0 } else { 0.0 }];
    for h in &constraints {
        out.extend([h.normal.x, h.normal.y, h.offset]);
    }
    out
}

#[wasm_bindgen]
pub fn rds_solve(v: f64, w: f64, agents: &[f64]) -> Vec<f64> {
    rds_correct(v, w, agents)
}

#[derive(Serialize)]
struct Frame<'a> {
    t: f64,
    done: bool,
    pose: Pose,
    center: Vec2,
    goal: Vec2,
    goal_margin: f64,
    arena: [f64; 4],
    footprint: f64,
    virtual_boundary: f64,
    agents: &'a [AgentState],
    in_contact: bool,
    force: f64,
    blocked: bool,
    contacts: usize,
}

/// One trial advanced by the page. Shared modes take the keyboard command.
pub struct Session {
    runner: TrialRunner,
    crowd: CrowdSnapshot,
    blocked: bool,
    in_contact: bool,
    force: f64,
}

impl Session {
    pub fn new(mode: &str, density: f64, seed: u64) -> Result<Session, String> {
        let mode: ControllerMode = mode.parse().map_err(|e| format!("{e}"))?;
        let mut cfg = TrialConfig::default();
        cfg.controller.mode = mode;
        cfg.scenario.target_density = density;
        cfg.scenario.seed = seed;
        cfg.validate().map_err(|e| e.to_string())?;
        let t_free = free_path_time(&cfg).map_err(|e| e.to_string())?;
        let world = crowdnav::trial::runner::spawn_world(&cfg).map_err(|e| e.to_string())?;
        let source = if mode.is_shared() { CommandSource::External } else { CommandSource::Autonomous };
        let runner = TrialRunner::new(cfg, world, source, t_free);
        let crowd = runner.world.sensed_crowd(f64::INFINITY);
        Ok(Session { runner, crowd, blocked: false, in_contact: false, force: 0.0 })
    }

    pub fn command(&mut self, v: f64, w: f64) {
        let t = self.runner.world.t();
        self.runner.pipeline.mailbox.post(Command::new(v, w), t);
    }

    /// Advances up to `n` ticks; returns whether the trial has ended.
    pub fn advance(&mut self, n: u32) -> Result<bool, String> {
        for _ in 0..n {
            match self.runner.step().map_err(|e| e.to_string())? {
                Some(line) => {
                    self.blocked = line.record.blocked;
                    self.in_contact = line.record.contact.in_contact;
                    self.force = line.record.contact.force;
                }
                None => break,
            }
        }
        self.crowd = self.runner.world.sensed_crowd(f64::INFINITY);
        Ok(self.runner.is_done())
    }

    pub fn frame(&self) -> String {
        let cfg = &self.runner.cfg;
        let a = cfg.scenario.arena;
        let frame = Frame {
            t: self.runner.world.t(),
            done: self.runner.is_done(),
            pose: self.runner.world.pose,
            center: self.runner.world.pose.control_point(cfg.robot.control_point_offset),
            goal: cfg.scenario.goal,
            goal_margin: cfg.controller.goal_margin,
            arena: [a.min.x, a.min.y, a.max.x, a.max.y],
            footprint: cfg.robot.footprint_radius,
            virtual_boundary: cfg.robot.virtual_boundary_radius,
            agents: &self.crowd.agents,
            in_contact: self.in_contact,
            force: self.force,
            blocked: self.blocked,
            contacts: self.runner.world.events.len(),
        };
        serde_json::to_string(&frame).expect("frame serializes")
    }

    pub fn live_metrics(&self) -> String {
        serde_json::to_string(&self.runner.metrics().live()).expect("metrics serialize")
    }

    /// Final metrics; ends the trial if it is still running.
    pub fn report(&mut self) -> String {
        let trailer = self.runner.finish();
        serde_json::to_string(&trailer.metrics).expect("report serializes")
    }
}

#[wasm_bindgen]
pub struct Trial(Session);

#[wasm_bindgen]
impl Trial {
    /// `mode` is one of `mds`, `rds`, `shared`.
    #[wasm_bindgen(constructor)]
    pub fn new(mode: &str, density: f64, seed: u32) -> Result<Trial, JsError> {
        Session::new(mode, density, seed as u64).map(Trial).map_err(|e| JsError::new(&e))
    }

    /// Joystick command in physical units.
    pub fn command(&mut self, v: f64, w: f64) {
        self.0.command(v, w);
    }

    pub fn advance(&mut self, ticks: u32) -> Result<bool, JsError> {
        self.0.advance(ticks).map_err(|e| JsError::new(&e))
    }

    pub fn frame(&self) -> String {
        self.0.frame()
    }

    pub fn live_metrics(&self) -> String {
        self.0.live_metrics()
    }

    pub fn report(&mut self) -> String {
        self.0.report()
    }
}

/// Whole offline trial, for comparing controllers on one seed.
#[wasm_bindgen]
pub fn run_offline(mode: &str, density: f64, seed: u32) -> Result<String, JsError> {
    let mut cfg = TrialConfig::default();
    cfg.controller.mode = mode.parse().map_err(|e| JsError::new(&format!("{e}")))?;
    cfg.scenario.target_density = density;
    cfg.scenario.seed = seed as u64;
    let r = run_trial(&cfg).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(serde_json::to_string(&r.report).expect("report serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_is_identity_far_away_and_nan_inside() {
        let f = field(&[30.0, 0.0, 0.3], Vec2::new(40.0, 0.0), Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0), 2, 1);
        assert!((f[0] - 1.0).abs() < 1e-9 && f[1].abs() < 1e-9);
        assert!(f[2].is_nan() && f[3].is_nan());
    }

    #[test]
    fn rds_slows_for_agent_dead_ahead() {
        let free = rds_correct(1.0, 0.0, &[]);
        assert_eq!(&free[..3], &[1.0, 0.0, 0.0]);
        let r = rds_correct(1.0, 0.0, &[1.5, 0.0, 0.0, 0.0, 0.3]);
        assert!(r[0] < 1.0);
        assert_eq!((r.len() - 3) % 3, 0);
        assert!(r.len() > 3 + 12, "agent constraint plus the box");
    }

    #[test]
    fn session_steps_and_reports() {
        let mut s = Session::new("shared", 0.05, 2).unwrap();
        s.command(0.8, 0.0);
        assert!(!s.advance(50).unwrap());
        let frame: serde_json::Value = serde_json::from_str(&s.frame()).unwrap();
        assert!(frame["pose"]["x"].as_f64().unwrap() > 4.0);
        let report: serde_json::Value = serde_json::from_str(&s.report()).unwrap();
        assert_eq!(report["mode"], "shared_control_rds");
        assert!(Session::new("bogus", 0.05, 2).is_err());
    }
}
