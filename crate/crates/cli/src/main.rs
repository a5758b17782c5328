//! `crowdnav`: run, batch, evaluate and serve crowd-navigation trials.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use crowdnav::model::ScenarioKind;
use crowdnav::pipeline::ControllerMode;
use crowdnav::trial::{
    assemble_report, read_log, recompute, render_svg, replay, run_batch, run_trial_logged, BatchOptions, TrialConfig, TrialLog,
    TrialSummary,
};

mod serve;

#[derive(Parser)]
#[command(name = "crowdnav", version, about = "Crowd navigation trials with contact-aware shared control")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trial and print its metrics as JSON.
    Run {
        #[command(flatten)]
        trial: TrialArgs,
        /// Write the JSONL log here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the trajectory as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run the controller x density x repetition matrix of the config.
    Batch {
        #[command(flatten)]
        trial: TrialArgs,
        /// Directory for logs and the report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Controllers to compare, comma separated.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<ControllerMode>,
        /// Target densities, comma separated.
        #[arg(long, value_delimiter = ',')]
        densities: Vec<f64>,
        #[arg(long)]
        reps: Option<usize>,
        /// Re-parse every log and check its metrics offline.
        #[arg(long)]
        verify: bool,
    },
    /// Recompute the metrics of a log.
    Metrics {
        log: PathBuf,
        #[arg(long)]
        ref_jerk: Option<f64>,
    },
    /// Group logs by controller and density and compare them.
    Compare {
        logs: Vec<PathBuf>,
        #[arg(long)]
        ref_jerk: Option<f64>,
        /// Write the report as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a log against its stored metrics and optionally draw it.
    Replay {
        log: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Live shared-control sessions over a websocket.
    Serve {
        #[command(flatten)]
        trial: TrialArgs,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Directory for session logs.
        #[arg(long, default_value = "sessions")]
        out: PathBuf,
        /// Simulation speed relative to wall clock; 0 runs unpaced.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Serve this many sessions, then exit.
        #[arg(long)]
        max_sessions: Option<usize>,
    },
    /// Print the default configuration as TOML.
    Config,
}

#[derive(Args, Clone, Default)]
struct TrialArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sparse, flow or mixed.
    #[arg(long)]
    scenario: Option<ScenarioKind>,
    /// mds, rds or shared.
    #[arg(long)]
    controller: Option<ControllerMode>,
    /// Target crowd density, people per square meter.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ref_jerk: Option<f64>,
    /// Goal region radius, m.
    #[arg(long)]
    goal_margin: Option<f64>,
}

impl TrialArgs {
    fn config(&self) -> Result<TrialConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrialConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => TrialConfig::default(),
        };
        if let Some(k) = self.scenario {
            cfg.scenario.kind = k;
            cfg.batch.kind = k;
        }
        if let Some(m) = self.controller {
            cfg.controller.mode = m;
        }
        if let Some(d) = self.density {
            cfg.scenario.target_density = d;
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
        }
        if let Some(j) = self.ref_jerk {
            cfg.controller.ref_jerk = Some(j);
        }
        if let Some(m) = self.goal_margin {
            cfg.controller.goal_margin = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_log(path: &Path) -> Result<TrialLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        // A closed pipe (`| head`) is not an error.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn write_svg(path: &Path, log: &TrialLog) -> Result<()> {
    std::fs::write(path, render_svg(log)).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Cmd::Run { trial, out, svg } => {
            let cfg = trial.config()?;
            let mut bytes = Vec::new();
            let result = run_trial_logged(&cfg, &mut bytes)?;
            if let Some(path) = &out {
                std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
                log::info!("log written to {}", path.display());
            }
            if let Some(path) = &svg {
                write_svg(path, &read_log(bytes.as_slice())?)?;
            }
            print_json(&result.report)?;
        }
        Cmd::Batch { trial, out, controllers, densities, reps, verify } => {
            let mut cfg = trial.config()?;
            if !controllers.is_empty() {
                cfg.batch.controllers = controllers;
            }
            if !densities.is_empty() {
                cfg.batch.densities = densities;
            }
            if let Some(r) = reps {
                cfg.batch.repetitions = r;
            }
            let report = run_batch(&cfg, &BatchOptions { out_dir: out.clone(), verify_logs: verify })?;
            for f in report.failures() {
                log::warn!("{} d={} rep {} failed: {}", f.mode, f.density, f.repetition, f.error.as_deref().unwrap_or(""));
            }
            let md = report.to_markdown();
            if let Some(dir) = &out {
                std::fs::write(dir.join("report.md"), &md)?;
                let json = BufWriter::new(File::create(dir.join("report.json"))?);
                serde_json::to_writer_pretty(json, &report)?;
            }
            print!("{md}");
        }
        Cmd::Metrics { log, ref_jerk } => {
            let log = load_log(&log)?;
            let report = recompute(&log, ref_jerk);
            if ref_jerk.is_none() {
                match report.max_abs_diff(&log.trailer.metrics) {
                    Some(d) if d <= 1e-9 => log::info!("stored metrics reproduced (max difference {d:.1e})"),
                    Some(d) => log::warn!("stored metrics differ by {d:.3e}"),
                    None => log::warn!("stored metrics differ in shape"),
                }
            }
            print_json(&report)?;
        }
        Cmd::Compare { logs, ref_jerk, out } => {
            if logs.is_empty() {
                bail!("no logs given");
            }
            let mut base = TrialConfig::default();
            base.controller.ref_jerk = ref_jerk;
            base.batch.controllers.clear();
            base.batch.densities.clear();
            let mut trials = Vec::new();
            for (i, path) in logs.iter().enumerate() {
                let log = load_log(path)?;
                let c = &log.header.config;
                let (mode, density) = (c.controller.mode, c.scenario.target_density);
                if !base.batch.controllers.contains(&mode) {
                    base.batch.controllers.push(mode);
                }
                if !base.batch.densities.contains(&density) {
                    base.batch.densities.push(density);
                }
                trials.push(TrialSummary {
                    mode,
                    density,
                    repetition: i,
                    seed: c.scenario.seed,
                    report: Some(recompute(&log, None)),
                    error: None,
                    log_check: None,
                });
            }
            base.batch.densities.sort_by(f64::total_cmp);
            let report = assemble_report(&base, trials);
            if let Some(path) = &out {
                serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &report)?;
            }
            print!("{}", report.to_markdown());
        }
        Cmd::Replay { log: path, svg } => {
            let log = load_log(&path)?;
            let r = replay(&log);
            print_json(&r.recomputed)?;
            if let Some(p) = &svg {
                write_svg(p, &log)?;
            }
            match r.max_diff {
                Some(d) if d <= 1e-9 => log::info!("replay matches stored metrics (max difference {d:.1e})"),
                other => bail!("replay differs from stored metrics: {other:?}"),
            }
        }
        Cmd::Serve { trial, port, out, speed, max_sessions } => {
            let cfg = trial.config()?;
            serve::serve(serve::ServeOptions { cfg, port, out_dir: out, speed, max_sessions })?;
        }
        Cmd::Config => print!("{}", TrialConfig::default().to_toml_string()),
    }
    Ok(())
}
