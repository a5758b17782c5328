//! Offline re-evaluation of logs and SVG trajectory figures.

use std::fmt::Write as _;

use crate::metrics::{compute_report, MetricsReport};
use crate::model::{AgentKind, Vec2};

use super::log::TrialLog;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub recomputed: MetricsReport,
    pub stored: MetricsReport,
    /// `None` when the two reports differ in shape, flags or counts.
    pub max_diff: Option<f64>,
}

/// Recomputes the metrics of a log, optionally against a new reference jerk.
pub fn recompute(log: &TrialLog, ref_jerk: Option<f64>) -> MetricsReport {
    let records: Vec<_> = log.ticks.iter().map(|t| t.record.clone()).collect();
    let crowds: Vec<_> = log.ticks.iter().map(|t| t.crowd.clone()).collect();
    let mut cfg = log.header.metrics.clone();
    if ref_jerk.is_some() {
        cfg.ref_jerk = ref_jerk;
    }
    compute_report(&records, &crowds, &cfg, &log.trailer.outcome)
}

pub fn replay(log: &TrialLog) -> ReplayResult {
    let recomputed = recompute(log, None);
    let stored = log.trailer.metrics.clone();
    let max_diff = recomputed.max_abs_diff(&stored);
    ReplayResult { recomputed, stored, max_diff }
}

const SCALE: f64 = 40.0;

fn kind_color(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Pedestrian => "#4a7fb5",
        AgentKind::Trolley => "#d9a441",
        AgentKind::StaticProp => "#777777",
    }
}

/// Top-down figure: arena, goal region, robot path, contact events and the
/// crowd around the robot at the last tick.
pub fn render_svg(log: &TrialLog) -> String {
    let arena = log.header.config.scenario.arena;
    let robot = &log.header.config.robot;
    let goal = log.header.config.scenario.goal;
    let margin = log.header.config.controller.goal_margin;
    let (w, h) = (arena.width() * SCALE, arena.height() * SCALE);
    let px = |p: Vec2| ((p.x - arena.min.x) * SCALE, (arena.max.y - p.y) * SCALE);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{:.0}" viewBox="0 0 {w:.1} {:.1}">"#,
        h + 30.0,
        h + 30.0
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#fafafa" stroke="#333" stroke-width="2"/>"##);
    let (gx, gy) = px(goal);
    let _ = writeln!(
        s,
        r##"<circle cx="{gx:.1}" cy="{gy:.1}" r="{:.1}" fill="#e6f4e6" stroke="#3a8f3a" stroke-dasharray="6 4"/>"##,
        margin * SCALE
    );
    let _ = writeln!(s, r##"<circle cx="{gx:.1}" cy="{gy:.1}" r="4" fill="#3a8f3a"/>"##);

    let centers: Vec<Vec2> = log
        .ticks
        .iter()
        .map(|t| t.record.pose.control_point(robot.control_point_offset))
        .chain(std::iter::once(log.trailer.outcome.final_pose.control_point(robot.control_point_offset)))
        .collect();
    if let Some(first) = centers.first() {
        let (sx, sy) = px(*first);
        let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="8" height="8" fill="#333"/>"##, sx - 4.0, sy - 4.0);
    }
    let points: Vec<String> = centers
        .iter()
        .step_by(5)
        .map(|&p| {
            let (x, y) = px(p);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##, points.join(" "));

    for e in &log.trailer.outcome.events {
        let i = ((e.t / log.header.metrics.dt).round() as usize).min(centers.len().saturating_sub(1));
        let (x, y) = px(centers[i]);
        let r = 3.0 + (e.force_peak / 20.0).min(12.0);
        let _ = writeln!(s, r##"<circle class="contact" cx="{x:.1}" cy="{y:.1}" r="{r:.1}" fill="none" stroke="#8e44ad" stroke-width="1.5"/>"##);
    }

    if let Some(last) = log.ticks.last() {
        for a in &last.crowd.agents {
            let (x, y) = px(a.position);
            let _ = writeln!(
                s,
                r#"<circle class="agent" cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="{}" fill-opacity="0.7"/>"#,
                a.radius * SCALE,
                kind_color(a.kind)
            );
        }
    }
    if let Some(&c) = centers.last() {
        let (x, y) = px(c);
        let _ = writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="#c0392b" fill-opacity="0.3" stroke="#c0392b"/>"##, robot.footprint_radius * SCALE);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="none" stroke="#c0392b" stroke-dasharray="3 3"/>"##,
            robot.virtual_boundary_radius * SCALE
        );
    }
    let m = &log.trailer.metrics;
    let _ = writeln!(
        s,
        r#"<text x="6" y="{:.1}" font-family="sans-serif" font-size="14">{} seed {}: {} in {:.1} s, {} contacts</text>"#,
        h + 20.0,
        m.mode,
        log.header.config.scenario.seed,
        if m.success { "reached goal" } else { "timed out" },
        m.t_c,
        m.contacts
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::{read_log, run_trial_logged, TrialConfig};

    fn short_log() -> TrialLog {
        let mut cfg = TrialConfig::default();
        cfg.scenario.target_density = 0.1;
        cfg.scenario.duration_max = 4.0;
        cfg.scenario.seed = 3;
        let mut bytes = Vec::new();
        run_trial_logged(&cfg, &mut bytes).unwrap();
        read_log(bytes.as_slice()).unwrap()
    }

    #[test]
    fn replay_reproduces_live_metrics() {
        let log = short_log();
        let r = replay(&log);
        assert!(r.max_diff.unwrap() < 1e-9);
        let rescaled = recompute(&log, Some(2.0));
        assert_eq!(rescaled.rel_jerk, rescaled.jerk.map(|j| j / 2.0));
    }

    #[test]
    fn svg_is_well_formed() {
        let log = short_log();
        let svg = render_svg(&log);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        let agents = root.descendants().filter(|n| n.attribute("class") == Some("agent")).count();
        assert_eq!(agents, log.ticks.last().unwrap().crowd.agents.len());
        assert!(root.descendants().any(|n| n.has_tag_name("polyline")));
    }
}
