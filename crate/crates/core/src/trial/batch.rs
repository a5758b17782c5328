//! Controller x density x repetition batches with grouped summaries.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{anova, cluster_by_density, compute_report, ClusterResult, GroupComparison, MetricsReport};
use crate::pipeline::ControllerMode;

use super::config::{derive_seed, TrialConfig};
use super::log::{read_log_bytes, write_log};
use super::runner::{run_trial, run_trial_logged};

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Keep every trial log here as `<mode>_d<density>_r<rep>.jsonl`.
    pub out_dir: Option<PathBuf>,
    /// Re-parse each log, recompute its metrics offline and check the
    /// serialization round trip.
    pub verify_logs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogCheck {
    /// Largest difference between live and offline metrics.
    pub metrics_max_diff: Option<f64>,
    pub round_trip_identical: bool,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mode: ControllerMode,
    pub density: f64,
    pub repetition: usize,
    pub seed: u64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
    pub log_check: Option<LogCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub trials: usize,
    pub successes: usize,
    pub stats: Vec<MetricStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Reference jerk used for `rel_jerk` in the summaries.
    pub ref_jerk: Option<f64>,
    pub trials: Vec<TrialSummary>,
    /// One cell per controller and density.
    pub cells: Vec<CellSummary>,
    /// Controllers compared within each density.
    pub controller_comparisons: Vec<GroupComparison>,
    /// Densities compared within each controller.
    pub density_comparisons: Vec<GroupComparison>,
    /// Trials of each controller banded into 3 density clusters.
    pub clusters: Vec<(ControllerMode, ClusterResult)>,
    pub band_cells: Vec<CellSummary>,
    pub band_comparisons: Vec<GroupComparison>,
}

/// Metric columns shared by all summary tables.
pub const SUMMARY_METRICS: [&str; 14] = [
    "rel_time_to_goal",
    "path_length_ratio",
    "rel_jerk",
    "jerk",
    "contribution",
    "fluency",
    "agreement",
    "density_2_5",
    "density_2_5_max",
    "density_5",
    "density_10",
    "min_distance",
    "virtual_collisions",
    "actual_collisions",
];

/// Value of a summary metric; `rel_jerk` uses the batch reference.
pub fn metric_value(r: &MetricsReport, name: &str, ref_jerk: Option<f64>) -> Option<f64> {
    match name {
        "rel_time_to_goal" => r.rel_time_to_goal,
        "path_length_ratio" => r.path_length_ratio,
        "rel_jerk" => match (r.jerk, ref_jerk) {
            (Some(j), Some(rj)) => Some(j / rj),
            _ => None,
        },
        "jerk" => r.jerk,
        "contribution" => r.contribution,
        "fluency" => r.fluency,
        "agreement" => Some(r.agreement),
        "density_2_5" => Some(r.density_2_5.mean),
        "density_2_5_max" => Some(r.density_2_5.max),
        "density_5" => Some(r.density_5.mean),
        "density_10" => Some(r.density_10.mean),
        "min_distance" => r.min_distance,
        "virtual_collisions" => Some(r.virtual_collisions as f64),
        "actual_collisions" => Some(r.actual_collisions as f64),
        "success" => Some(if r.success { 1.0 } else { 0.0 }),
        _ => None,
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

#[derive(Debug, Clone)]
struct Job {
    mode: ControllerMode,
    density: f64,
    density_index: usize,
    repetition: usize,
}

fn run_job(base: &TrialConfig, job: &Job, opts: &BatchOptions) -> TrialSummary {
    // Same seed for every controller at a given density and repetition, so
    // controllers meet the same initial crowds.
    let seed = derive_seed(base.scenario.seed, (job.density_index * 100_000 + job.repetition) as u64);
    let cfg = base.variant(job.mode, job.density, seed);
    let mut summary = TrialSummary {
        mode: job.mode,
        density: job.density,
        repetition: job.repetition,
        seed,
        report: None,
        error: None,
        log_check: None,
    };
    if !opts.verify_logs && opts.out_dir.is_none() {
        match run_trial(&cfg) {
            Ok(r) => summary.report = Some(r.report),
            Err(e) => summary.error = Some(e.to_string()),
        }
        return summary;
    }
    let mut bytes = Vec::new();
    match run_trial_logged(&cfg, &mut bytes) {
        Ok(r) => summary.report = Some(r.report),
        Err(e) => {
            summary.error = Some(e.to_string());
            return summary;
        }
    }
    if opts.verify_logs {
        summary.log_check = Some(check_log(&bytes, summary.report.as_ref()));
    }
    if let Some(dir) = &opts.out_dir {
        let path = dir.join(format!("{}_d{:.3}_r{:02}.jsonl", job.mode.short_name(), job.density, job.repetition));
        if let Err(e) = std::fs::write(&path, &bytes) {
            summary.error = Some(format!("writing {}: {e}", path.display()));
        }
    }
    summary
}

fn check_log(bytes: &[u8], live: Option<&MetricsReport>) -> LogCheck {
    let Ok(log) = read_log_bytes(bytes) else {
        return LogCheck { metrics_max_diff: None, round_trip_identical: false, bytes: bytes.len() };
    };
    let records: Vec<_> = log.ticks.iter().map(|t| t.record.clone()).collect();
    let crowds: Vec<_> = log.ticks.iter().map(|t| t.crowd.clone()).collect();
    let offline = compute_report(&records, &crowds, &log.header.metrics, &log.trailer.outcome);
    let stored = offline.max_abs_diff(&log.trailer.metrics);
    let returned = live.and_then(|l| offline.max_abs_diff(l));
    let metrics_max_diff = match (stored, returned) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    let round_trip_identical = write_log(&log, Vec::new()).map(|b| b == bytes).unwrap_or(false);
    LogCheck { metrics_max_diff, round_trip_identical, bytes: bytes.len() }
}

fn summarize(label: String, reports: &[&MetricsReport], ref_jerk: Option<f64>, trials: usize) -> CellSummary {
    let stats = SUMMARY_METRICS
        .iter()
        .map(|&name| {
            let xs: Vec<f64> = reports.iter().filter_map(|r| metric_value(r, name, ref_jerk)).collect();
            let (mean, std) = if xs.is_empty() {
                (0.0, 0.0)
            } else {
                (crate::metrics::stats::mean(&xs), crate::metrics::stats::sample_std(&xs))
            };
            MetricStat { name: name.to_string(), n: xs.len(), mean, std }
        })
        .collect();
    CellSummary { label, trials, successes: reports.iter().filter(|r| r.success).count(), stats }
}

fn compare(metric: &str, groups: Vec<(String, Vec<&MetricsReport>)>, ref_jerk: Option<f64>) -> Option<GroupComparison> {
    let values: Vec<(String, Vec<f64>)> = groups
        .into_iter()
        .map(|(name, rs)| (name, rs.iter().filter_map(|r| metric_value(r, metric, ref_jerk)).collect()))
        .collect();
    anova(metric, &values).ok()
}

pub fn density_label(d: f64) -> String {
    format!("{d:.2} ppsm")
}

/// Band names in ascending density.
pub const BAND_NAMES: [&str; 3] = ["low", "mid", "high"];

/// Runs every controller x density x repetition trial of `base.batch`.
pub fn run_batch(base: &TrialConfig, opts: &BatchOptions) -> Result<BatchReport, Error> {
    base.validate()?;
    let b = &base.batch;
    if b.controllers.is_empty() || b.densities.is_empty() || b.repetitions == 0 {
        return Err(Error::Config("batch needs at least one controller, density and repetition".into()));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut base = base.clone();
    base.scenario.kind = b.kind;
    let mut jobs = Vec::new();
    for (density_index, &density) in b.densities.iter().enumerate() {
        for &mode in &b.controllers {
            for repetition in 0..b.repetitions {
                jobs.push(Job { mode, density, density_index, repetition });
            }
        }
    }
    let trials = par_map(&jobs, |job| run_job(&base, job, opts));
    Ok(assemble_report(&base, trials))
}

/// Builds the grouped report for finished trials. Cells follow the
/// controller and density lists of `base.batch`.
pub fn assemble_report(base: &TrialConfig, trials: Vec<TrialSummary>) -> BatchReport {
    let b = &base.batch;
    let shared_jerk: Vec<f64> = trials
        .iter()
        .filter(|t| t.mode.is_shared())
        .filter_map(|t| t.report.as_ref().and_then(|r| r.jerk))
        .collect();
    let ref_jerk = base.controller.ref_jerk.or_else(|| (!shared_jerk.is_empty()).then(|| crate::metrics::stats::mean(&shared_jerk)));

    let select = |mode: ControllerMode, density: Option<f64>| -> Vec<&MetricsReport> {
        trials
            .iter()
            .filter(|t| t.mode == mode && density.is_none_or(|d| t.density == d))
            .filter_map(|t| t.report.as_ref())
            .collect()
    };

    let mut cells = Vec::new();
    for &mode in &b.controllers {
        for &d in &b.densities {
            let n = trials.iter().filter(|t| t.mode == mode && t.density == d).count();
            cells.push(summarize(format!("{mode} @ {}", density_label(d)), &select(mode, Some(d)), ref_jerk, n));
        }
    }

    let mut controller_comparisons = Vec::new();
    if b.controllers.len() >= 2 {
        for &d in &b.densities {
            for metric in SUMMARY_METRICS {
                let groups = b.controllers.iter().map(|&m| (format!("{m} @ {}", density_label(d)), select(m, Some(d)))).collect();
                controller_comparisons.extend(compare(metric, groups, ref_jerk));
            }
        }
    }
    let mut density_comparisons = Vec::new();
    if b.densities.len() >= 2 {
        for &m in &b.controllers {
            for metric in SUMMARY_METRICS {
                let groups = b.densities.iter().map(|&d| (format!("{m} @ {}", density_label(d)), select(m, Some(d)))).collect();
                density_comparisons.extend(compare(metric, groups, ref_jerk));
            }
        }
    }

    let mut clusters = Vec::new();
    let mut band_cells = Vec::new();
    let mut band_comparisons = Vec::new();
    for &m in &b.controllers {
        let reports = select(m, None);
        let features: Vec<[f64; 3]> = reports.iter().map(|r| [r.density_2_5.mean, r.density_2_5.max, r.density_5.mean]).collect();
        let Ok(cl) = cluster_by_density(&features) else { continue };
        let bands: Vec<(String, Vec<&MetricsReport>)> = (0..3)
            .map(|k| {
                let members = reports.iter().zip(&cl.assignments).filter(|(_, &a)| a == k).map(|(r, _)| *r).collect();
                (format!("{m} {}", BAND_NAMES[k]), members)
            })
            .collect();
        for (name, members) in &bands {
            band_cells.push(summarize(name.clone(), members, ref_jerk, members.len()));
        }
        for metric in SUMMARY_METRICS {
            band_comparisons.extend(compare(metric, bands.clone(), ref_jerk));
        }
        clusters.push((m, cl));
    }

    BatchReport { ref_jerk, trials, cells, controller_comparisons, density_comparisons, clusters, band_cells, band_comparisons }
}

impl BatchReport {
    pub fn comparison(&self, metric: &str, group_prefix: &str) -> Option<&GroupComparison> {
        self.controller_comparisons
            .iter()
            .chain(&self.density_comparisons)
            .chain(&self.band_comparisons)
            .find(|c| c.metric == metric && c.groups.first().is_some_and(|g| g.name.starts_with(group_prefix)))
    }

    pub fn failures(&self) -> Vec<&TrialSummary> {
        self.trials.iter().filter(|t| t.error.is_some()).collect()
    }

    /// Markdown tables: per-cell means, per-band means and ANOVA results.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let table = |s: &mut String, title: &str, cells: &[CellSummary]| {
            let _ = writeln!(s, "## {title}\n");
            let _ = write!(s, "| metric |");
            for c in cells {
                let _ = write!(s, " {} |", c.label);
            }
            let _ = write!(s, "\n|---|");
            for _ in cells {
                let _ = write!(s, "---|");
            }
            let _ = writeln!(s);
            let _ = write!(s, "| success |");
            for c in cells {
                let _ = write!(s, " {}/{} |", c.successes, c.trials);
            }
            let _ = writeln!(s);
            for (i, name) in SUMMARY_METRICS.iter().enumerate() {
                let _ = write!(s, "| {name} |");
                for c in cells {
                    let st = &c.stats[i];
                    if st.n == 0 {
                        let _ = write!(s, " - |");
                    } else {
                        let _ = write!(s, " {:.3} ± {:.3} |", st.mean, st.std);
                    }
                }
                let _ = writeln!(s);
            }
            let _ = writeln!(s);
        };
        table(&mut s, "Controllers", &self.cells);
        if !self.band_cells.is_empty() {
            table(&mut s, "Density bands", &self.band_cells);
        }
        let comparisons = |s: &mut String, title: &str, cs: &[GroupComparison]| {
            if cs.is_empty() {
                return;
            }
            let _ = writeln!(s, "## {title}\n\n| metric | groups | F | p | |\n|---|---|---|---|---|");
            for c in cs {
                let names: Vec<&str> = c.groups.iter().map(|g| g.name.as_str()).collect();
                let _ = writeln!(s, "| {} | {} | {:.3} | {:.4} | {} |", c.metric, names.join(" / "), c.f_statistic, c.p_value, c.stars);
            }
            let _ = writeln!(s);
        };
        comparisons(&mut s, "Controller comparisons", &self.controller_comparisons);
        comparisons(&mut s, "Density comparisons", &self.density_comparisons);
        comparisons(&mut s, "Density band comparisons", &self.band_comparisons);
        if let Some(j) = self.ref_jerk {
            let _ = writeln!(s, "Reference jerk: {j:.4}");
        }
        s
    }
}
