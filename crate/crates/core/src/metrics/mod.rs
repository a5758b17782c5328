//! Trial metrics: efficiency, smoothness, controller and crowd interaction.
//!
//! Every metric exists twice: as a pure function over a complete trial
//! ([`compute_report`]) and as the incremental [`MetricsAccumulator`] used
//! while a trial runs. Both must agree on the same records.

pub mod stats;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::model::{Command, CrowdSnapshot, Pose, RobotParams, Vec2};
use crate::pipeline::{ControllerMode, TickRecord};
use crate::sim::ContactEvent;

pub use stats::{anova, cluster_by_density, ClusterResult, GroupComparison, GroupSummary};

/// Which angle the agreement metric compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgreementAngle {
    /// `atan2(v, w)`, the ratio as printed.
    #[default]
    Vw,
    /// `atan2(w, v)`, the motion-direction reading.
    Wv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsParams {
    /// Normalized command magnitude below which samples are skipped.
    pub magnitude_threshold: f64,
    /// Finite-difference step of the jerk estimate, s.
    pub jerk_window: f64,
    /// Exit margin before a virtual-boundary entry can count again, m.
    pub virtual_hysteresis: f64,
    /// Contact force counted as an actual collision, N.
    pub collision_force: f64,
    pub agreement_angle: AgreementAngle,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            magnitude_threshold: 0.02,
            jerk_window: 0.1,
            virtual_hysteresis: 0.1,
            collision_force: 45.0,
            agreement_angle: AgreementAngle::Vw,
        }
    }
}

/// Fixed trial facts needed to evaluate metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub mode: ControllerMode,
    pub robot: RobotParams,
    pub dt: f64,
    pub goal: Vec2,
    pub goal_margin: f64,
    pub ref_jerk: Option<f64>,
    pub params: MetricsParams,
}

/// Facts known only when the trial ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub t_c: f64,
    pub t_free: Option<f64>,
    pub final_pose: Pose,
    pub events: Vec<ContactEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DensityStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ControllerMode,
    pub success: bool,
    pub t_c: f64,
    pub t_free: Option<f64>,
    pub rel_time_to_goal: Option<f64>,
    pub path_length: f64,
    /// `L_c / L_goal`.
    pub path_length_ratio: Option<f64>,
    /// `L_goal / L_c`.
    pub path_efficiency: Option<f64>,
    pub jerk: Option<f64>,
    pub rel_jerk: Option<f64>,
    pub contribution: Option<f64>,
    pub contribution_raw: Option<f64>,
    pub fluency: Option<f64>,
    pub agreement: f64,
    pub density_2_5: DensityStats,
    pub density_5: DensityStats,
    pub density_10: DensityStats,
    pub min_distance: Option<f64>,
    pub virtual_collisions: u32,
    pub actual_collisions: u32,
    pub contacts: u32,
    pub blocked_time: f64,
}

impl MetricsReport {
    /// Largest absolute difference over all numeric fields; `None` if the
    /// two reports disagree on which fields are present or on flags/counts.
    pub fn max_abs_diff(&self, other: &MetricsReport) -> Option<f64> {
        fn opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
            match (a, b) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                (None, None) => Some(0.0),
                _ => None,
            }
        }
        fn dens(a: &DensityStats, b: &DensityStats) -> f64 {
            (a.mean - b.mean).abs().max((a.std - b.std).abs()).max((a.max - b.max).abs())
        }
        if self.mode != other.mode
            || self.success != other.success
            || self.virtual_collisions != other.virtual_collisions
            || self.actual_collisions != other.actual_collisions
            || self.contacts != other.contacts
        {
            return None;
        }
        let parts = [
            Some((self.t_c - other.t_c).abs()),
            opt(self.t_free, other.t_free),
            opt(self.rel_time_to_goal, other.rel_time_to_goal),
            Some((self.path_length - other.path_length).abs()),
            opt(self.path_length_ratio, other.path_length_ratio),
            opt(self.path_efficiency, other.path_efficiency),
            opt(self.jerk, other.jerk),
            opt(self.rel_jerk, other.rel_jerk),
            opt(self.contribution, other.contribution),
            opt(self.contribution_raw, other.contribution_raw),
            opt(self.fluency, other.fluency),
            Some((self.agreement - other.agreement).abs()),
            Some(dens(&self.density_2_5, &other.density_2_5)),
            Some(dens(&self.density_5, &other.density_5)),
            Some(dens(&self.density_10, &other.density_10)),
            opt(self.min_distance, other.min_distance),
            Some((self.blocked_time - other.blocked_time).abs()),
        ];
        parts.iter().try_fold(0.0f64, |acc, p| p.map(|d| acc.max(d)))
    }
}

pub fn rel_time_to_goal(t_free: f64, t_c: f64) -> Result<f64, MetricsError> {
    if !(t_free > 0.0) {
        return Err(MetricsError::NonPositive { what: "t_free", value: t_free });
    }
    if !(t_c > 0.0) {
        return Err(MetricsError::NonPositive { what: "t_c", value: t_c });
    }
    Ok(t_free / t_c)
}

pub fn path_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRatio {
    pub length: f64,
    pub shortest: f64,
    /// `L_c / L_goal`, >= 1 for any path that reaches the goal region.
    pub ratio: f64,
    /// `L_goal / L_c`, in (0, 1].
    pub efficiency: f64,
}

/// Path length against the straight line from the start to the goal
/// region boundary (`margin` short of the goal).
pub fn path_length_ratio(points: &[Vec2], goal: Vec2, margin: f64) -> Result<PathRatio, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewSamples { what: "trajectory", need: 2, got: points.len() });
    }
    let shortest = points[0].distance(goal) - margin;
    if !(shortest > 1e-9) {
        return Err(MetricsError::ZeroLengthGoal);
    }
    let length = path_length(points);
    if !(length > 0.0) {
        return Err(MetricsError::NonPositive { what: "path length", value: length });
    }
    Ok(PathRatio { length, shortest, ratio: length / shortest, efficiency: shortest / length })
}

fn window_steps(dt: f64, window: f64) -> usize {
    ((window / dt).round() as usize).max(1)
}

fn jerk_sample(prev: Command, mid: Command, next: Command, h: f64) -> f64 {
    let jv = (next.v - 2.0 * mid.v + prev.v) / (h * h);
    let jw = (next.w - 2.0 * mid.w + prev.w) / (h * h);
    (jv * jv + jw * jw).sqrt()
}

/// Mean jerk magnitude over the evaluated span, from second differences of
/// the executed `(v, w)` with step `window`.
pub fn jerk(executed: &[Command], dt: f64, window: f64) -> Result<f64, MetricsError> {
    let k = window_steps(dt, window);
    if executed.len() < 2 * k + 1 {
        return Err(MetricsError::TooFewSamples { what: "jerk window", need: 2 * k + 1, got: executed.len() });
    }
    let h = k as f64 * dt;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in k..executed.len() - k {
        sum += dt * jerk_sample(executed[i - k], executed[i], executed[i + k], h);
        count += 1;
    }
    Ok(sum / (count as f64 * dt))
}

/// `(J, J / J_ref)`.
pub fn relative_jerk(executed: &[Command], dt: f64, window: f64, ref_jerk: Option<f64>) -> Result<(f64, Option<f64>), MetricsError> {
    let j = jerk(executed, dt, window)?;
    if let Some(r) = ref_jerk {
        if !(r > 0.0) {
            return Err(MetricsError::NonPositive { what: "reference jerk", value: r });
        }
    }
    Ok((j, ref_jerk.map(|r| j / r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    /// Clamped to [0, 1].
    pub value: f64,
    pub raw: f64,
}

fn contribution_sample(u_h: Vec2, u_out: Vec2, mode: ControllerMode) -> f64 {
    let base = u_h.norm();
    if mode.is_shared() {
        (u_out - u_h).norm() / base
    } else {
        u_out.norm() / base
    }
}

/// Mean per-sample contribution over normalized commands. Shared modes
/// measure the correction `|u_out - u_h| / |u_h|`, autonomous modes the
/// output ratio `|u_out| / |u_h|`.
pub fn contribution(u_h: &[Vec2], u_out: &[Vec2], mode: ControllerMode, threshold: f64) -> Result<Contribution, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&h, &o) in u_h.iter().zip(u_out) {
        if h.norm() < threshold {
            continue;
        }
        sum += contribution_sample(h, o, mode);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoRetainedSamples);
    }
    let raw = sum / n as f64;
    Ok(Contribution { value: raw.clamp(0.0, 1.0), raw })
}

/// `(1/N) sum (1 - |u_h^t - u_h^(t-1)|)` over consecutive normalized commands.
pub fn fluency(u_h: &[Vec2]) -> Result<f64, MetricsError> {
    if u_h.len() < 2 {
        return Err(MetricsError::TooFewSamples { what: "fluency", need: 2, got: u_h.len() });
    }
    let sum: f64 = u_h.windows(2).map(|w| (1.0 - (w[1] - w[0]).norm()).clamp(0.0, 1.0)).sum();
    Ok(sum / (u_h.len() - 1) as f64)
}

/// Command angle; `u` holds normalized `(v, w)`.
pub fn command_angle(u: Vec2, convention: AgreementAngle) -> f64 {
    match convention {
        AgreementAngle::Vw => u.x.atan2(u.y),
        AgreementAngle::Wv => u.y.atan2(u.x),
    }
}

fn agreement_sample(z: Vec2, u: Vec2, convention: AgreementAngle) -> f64 {
    let diff = command_angle(z, convention) - command_angle(u, convention);
    let wrapped = (diff + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    1.0 - wrapped.abs() / std::f64::consts::PI
}

/// Duration-weighted directional agreement between input `z` and output `u`.
/// Returns 1 when no sample is retained.
pub fn agreement(z: &[Vec2], u: &[Vec2], durations: &[f64], convention: AgreementAngle, threshold: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&z, &u), &dt) in z.iter().zip(u).zip(durations) {
        if z.norm() < threshold && u.norm() < threshold {
            continue;
        }
        num += agreement_sample(z, u, convention) * dt;
        den += dt;
    }
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// Counts entries of crowd agents into the virtual boundary. An agent must
/// leave by the hysteresis margin before its next entry counts.
#[derive(Debug, Clone, Default)]
pub struct VirtualCollisionCounter {
    inside: BTreeSet<u32>,
    pub count: u32,
}

impl VirtualCollisionCounter {
    pub fn observe(&mut self, crowd: &CrowdSnapshot, center: Vec2, boundary: f64, hysteresis: f64) {
        for a in crowd.agents.iter().filter(|a| a.kind.is_crowd()) {
            let gap = a.position.distance(center) - a.radius;
            if gap < boundary {
                if self.inside.insert(a.id) {
                    self.count += 1;
                }
            } else if gap >= boundary + hysteresis {
                self.inside.remove(&a.id);
            }
        }
        // Agents that left sensing have left the boundary too.
        self.inside.retain(|id| crowd.agents.iter().any(|a| a.id == *id));
    }
}

pub fn density_stats(xs: &[f64]) -> DensityStats {
    if xs.is_empty() {
        return DensityStats::default();
    }
    let mean = stats::mean(xs);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    DensityStats { mean, std: var.sqrt(), max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) }
}

fn collision_counts(events: &[ContactEvent], threshold: f64) -> (u32, u32) {
    let actual = events.iter().filter(|e| e.force_peak >= threshold).count() as u32;
    (actual, events.len() as u32)
}

/// Batch evaluation over a complete trial. `crowds[i]` is the crowd seen at
/// `records[i]`.
pub fn compute_report(records: &[TickRecord], crowds: &[CrowdSnapshot], cfg: &MetricsConfig, outcome: &TrialOutcome) -> MetricsReport {
    let p = &cfg.params;
    let robot = &cfg.robot;
    let mut points: Vec<Vec2> = records.iter().map(|r| r.pose.position()).collect();
    points.push(outcome.final_pose.position());
    let path = path_length_ratio(&points, cfg.goal, cfg.goal_margin).ok();
    let executed: Vec<Command> = records.iter().map(|r| r.executed).collect();
    let jerk = relative_jerk(&executed, cfg.dt, p.jerk_window, cfg.ref_jerk).ok();
    let u_h: Vec<Vec2> = records.iter().map(|r| r.u_h.normalized(robot)).collect();
    let u_out: Vec<Vec2> = records.iter().map(|r| r.u_out.normalized(robot)).collect();
    let contrib = contribution(&u_h, &u_out, cfg.mode, p.magnitude_threshold).ok();
    let durations = vec![cfg.dt; records.len()];
    let mut vc = VirtualCollisionCounter::default();
    for (r, c) in records.iter().zip(crowds) {
        vc.observe(c, r.pose.control_point(robot.control_point_offset), robot.virtual_boundary_radius, p.virtual_hysteresis);
    }
    let (actual, contacts) = collision_counts(&outcome.events, p.collision_force);
    let d25: Vec<f64> = records.iter().map(|r| r.density_2_5).collect();
    let d5: Vec<f64> = records.iter().map(|r| r.density_5).collect();
    let d10: Vec<f64> = records.iter().map(|r| r.density_10).collect();
    MetricsReport {
        mode: cfg.mode,
        success: outcome.success,
        t_c: outcome.t_c,
        t_free: outcome.t_free,
        rel_time_to_goal: outcome.t_free.and_then(|f| rel_time_to_goal(f, outcome.t_c).ok()),
        path_length: path_length(&points),
        path_length_ratio: path.map(|p| p.ratio),
        path_efficiency: path.map(|p| p.efficiency),
        jerk: jerk.map(|j| j.0),
        rel_jerk: jerk.and_then(|j| j.1),
        contribution: contrib.map(|c| c.value),
        contribution_raw: contrib.map(|c| c.raw),
        fluency: fluency(&u_h).ok(),
        agreement: agreement(&u_h, &u_out, &durations, p.agreement_angle, p.magnitude_threshold),
        density_2_5: density_stats(&d25),
        density_5: density_stats(&d5),
        density_10: density_stats(&d10),
        min_distance: records.iter().filter_map(|r| r.min_clearance).reduce(f64::min),
        virtual_collisions: vc.count,
        actual_collisions: actual,
        contacts,
        blocked_time: records.iter().filter(|r| r.blocked).count() as f64 * cfg.dt,
    }
}

/// Welford running mean and variance, plus the maximum.
#[derive(Debug, Clone, Copy, Default)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
    max: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        self.max = if self.n == 1 { x } else { self.max.max(x) };
    }

    fn stats(&self) -> DensityStats {
        if self.n == 0 {
            return DensityStats::default();
        }
        DensityStats { mean: self.mean, std: (self.m2 / self.n as f64).max(0.0).sqrt(), max: self.max }
    }
}

/// Live readouts available mid-trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub t: f64,
    pub density_2_5: f64,
    pub min_clearance: Option<f64>,
    pub fluency: Option<f64>,
    pub agreement: f64,
    pub virtual_collisions: u32,
}

/// Incremental metric evaluation, one record at a time.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    cfg: MetricsConfig,
    ticks: usize,
    last_t: f64,
    first_point: Option<Vec2>,
    last_point: Option<Vec2>,
    path: f64,
    window: VecDeque<Command>,
    jerk_sum: f64,
    jerk_count: usize,
    contrib_sum: f64,
    contrib_n: usize,
    prev_uh: Option<Vec2>,
    fluency_sum: f64,
    fluency_n: usize,
    agree_num: f64,
    agree_den: f64,
    dens: [Running; 3],
    last_density: f64,
    last_clearance: Option<f64>,
    min_distance: Option<f64>,
    virtual_collisions: VirtualCollisionCounter,
    blocked_ticks: usize,
}

impl MetricsAccumulator {
    pub fn new(cfg: MetricsConfig) -> Self {
        MetricsAccumulator {
            cfg,
            ticks: 0,
            last_t: 0.0,
            first_point: None,
            last_point: None,
            path: 0.0,
            window: VecDeque::new(),
            jerk_sum: 0.0,
            jerk_count: 0,
            contrib_sum: 0.0,
            contrib_n: 0,
            prev_uh: None,
            fluency_sum: 0.0,
            fluency_n: 0,
            agree_num: 0.0,
            agree_den: 0.0,
            dens: [Running::default(); 3],
            last_density: 0.0,
            last_clearance: None,
            min_distance: None,
            virtual_collisions: VirtualCollisionCounter::default(),
            blocked_ticks: 0,
        }
    }

    pub fn config(&self) -> &MetricsConfig {
        &self.cfg
    }

    fn add_point(&mut self, p: Vec2) {
        if let Some(last) = self.last_point {
            self.path += last.distance(p);
        } else {
            self.first_point = Some(p);
        }
        self.last_point = Some(p);
    }

    pub fn push(&mut self, record: &TickRecord, crowd: &CrowdSnapshot) {
        self.ticks += 1;
        self.last_t = record.t;
        self.add_point(record.pose.position());
        let cfg = &self.cfg;
        let p = &cfg.params;
        let robot = &cfg.robot;

        let k = window_steps(cfg.dt, p.jerk_window);
        self.window.push_back(record.executed);
        if self.window.len() > 2 * k + 1 {
            self.window.pop_front();
        }
        if self.window.len() == 2 * k + 1 {
            let h = k as f64 * cfg.dt;
            self.jerk_sum += cfg.dt * jerk_sample(self.window[0], self.window[k], self.window[2 * k], h);
            self.jerk_count += 1;
        }

        let uh = record.u_h.normalized(robot);
        let uo = record.u_out.normalized(robot);
        if uh.norm() >= p.magnitude_threshold {
            self.contrib_sum += contribution_sample(uh, uo, cfg.mode);
            self.contrib_n += 1;
        }
        if let Some(prev) = self.prev_uh {
            self.fluency_sum += (1.0 - (uh - prev).norm()).clamp(0.0, 1.0);
            self.fluency_n += 1;
        }
        self.prev_uh = Some(uh);
        if uh.norm() >= p.magnitude_threshold || uo.norm() >= p.magnitude_threshold {
            self.agree_num += agreement_sample(uh, uo, p.agreement_angle) * cfg.dt;
            self.agree_den += cfg.dt;
        }

        self.dens[0].push(record.density_2_5);
        self.dens[1].push(record.density_5);
        self.dens[2].push(record.density_10);
        self.last_density = record.density_2_5;
        self.last_clearance = record.min_clearance;
        if let Some(c) = record.min_clearance {
            self.min_distance = Some(self.min_distance.map_or(c, |m| m.min(c)));
        }
        let center = record.pose.control_point(robot.control_point_offset);
        self.virtual_collisions.observe(crowd, center, robot.virtual_boundary_radius, p.virtual_hysteresis);
        if record.blocked {
            self.blocked_ticks += 1;
        }
    }

    fn agreement_value(&self) -> f64 {
        if self.agree_den > 0.0 {
            self.agree_num / self.agree_den
        } else {
            1.0
        }
    }

    fn fluency_value(&self) -> Option<f64> {
        (self.fluency_n > 0).then(|| self.fluency_sum / self.fluency_n as f64)
    }

    pub fn live(&self) -> LiveMetrics {
        LiveMetrics {
            t: self.last_t,
            density_2_5: self.last_density,
            min_clearance: self.last_clearance,
            fluency: self.fluency_value(),
            agreement: self.agreement_value(),
            virtual_collisions: self.virtual_collisions.count,
        }
    }

    pub fn finish(mut self, outcome: &TrialOutcome) -> MetricsReport {
        self.add_point(outcome.final_pose.position());
        let cfg = &self.cfg;
        let path = match self.first_point {
            Some(start) if self.ticks >= 1 => {
                let shortest = start.distance(cfg.goal) - cfg.goal_margin;
                (shortest > 1e-9 && self.path > 0.0).then(|| (self.path / shortest, shortest / self.path))
            }
            _ => None,
        };
        let jerk = (self.jerk_count > 0).then(|| self.jerk_sum / (self.jerk_count as f64 * cfg.dt));
        let rel_jerk = match (jerk, cfg.ref_jerk) {
            (Some(j), Some(r)) if r > 0.0 => Some(j / r),
            _ => None,
        };
        let raw = (self.contrib_n > 0).then(|| self.contrib_sum / self.contrib_n as f64);
        let (actual, contacts) = collision_counts(&outcome.events, cfg.params.collision_force);
        MetricsReport {
            mode: cfg.mode,
            success: outcome.success,
            t_c: outcome.t_c,
            t_free: outcome.t_free,
            rel_time_to_goal: outcome.t_free.and_then(|f| rel_time_to_goal(f, outcome.t_c).ok()),
            path_length: self.path,
            path_length_ratio: path.map(|p| p.0),
            path_efficiency: path.map(|p| p.1),
            jerk,
            rel_jerk,
            contribution: raw.map(|r| r.clamp(0.0, 1.0)),
            contribution_raw: raw,
            fluency: self.fluency_value(),
            agreement: self.agreement_value(),
            density_2_5: self.dens[0].stats(),
            density_5: self.dens[1].stats(),
            density_10: self.dens[2].stats(),
            min_distance: self.min_distance,
            virtual_collisions: self.virtual_collisions.count,
            actual_collisions: actual,
            contacts,
            blocked_time: self.blocked_ticks as f64 * cfg.dt,
        }
    }
}
