use std::io::Write;

use crate::error::Error;
use crate::metrics::{MetricsAccumulator, MetricsReport, TrialOutcome};
use crate::model::Command;
use crate::pipeline::{goal_reached, Pipeline};
use crate::sim::{spawn_scenario, SpawnRequest, World};

use super::config::{derive_seed, TrialConfig};
use super::driver::SimulatedDriver;
use super::log::{quantize_crowd, LogHeader, LogLine, LogTrailer, LogWriter, TickLine, LOG_VERSION};

/// Where the high-level command comes from.
#[derive(Debug, Clone)]
pub enum CommandSource {
    /// Attractor system inside the pipeline.
    Autonomous,
    /// Scripted joystick driver.
    Driver(SimulatedDriver),
    /// Commands posted to the pipeline mailbox from outside.
    External,
}

impl CommandSource {
    /// Default source for the configured mode.
    pub fn for_config(cfg: &TrialConfig) -> Self {
        if cfg.controller.mode.is_shared() {
            CommandSource::Driver(SimulatedDriver::new(cfg.driver.clone(), derive_seed(cfg.scenario.seed, 0xd71e)))
        } else {
            CommandSource::Autonomous
        }
    }
}

pub fn spawn_world(cfg: &TrialConfig) -> Result<World, Error> {
    let mut world = spawn_scenario(&SpawnRequest {
        scenario: &cfg.scenario,
        robot: &cfg.robot,
        pedestrians: &cfg.pedestrians,
        physics: &cfg.contact,
    })?;
    world.dt = cfg.controller.dt;
    Ok(world)
}

/// The arena of `cfg` with no crowd at all.
pub fn empty_world(cfg: &TrialConfig) -> World {
    let mut world = World::empty(cfg.scenario.arena, cfg.scenario.start, cfg.robot.clone(), cfg.scenario.seed);
    world.physics = cfg.contact.clone();
    world.ped_params = cfg.pedestrians.clone();
    world.dt = cfg.controller.dt;
    world
}

/// Steps one trial tick by tick.
pub struct TrialRunner {
    pub cfg: TrialConfig,
    pub world: World,
    pub pipeline: Pipeline,
    source: CommandSource,
    hold: u64,
    max_steps: u64,
    t_free: Option<f64>,
    metrics: MetricsAccumulator,
    success: bool,
    done: bool,
}

impl TrialRunner {
    pub fn new(cfg: TrialConfig, world: World, source: CommandSource, t_free: Option<f64>) -> Self {
        let pipeline = Pipeline::new(
            cfg.controller.mode,
            cfg.robot.clone(),
            cfg.compliance.clone(),
            cfg.controller.pipeline_params(),
            Some(cfg.scenario.goal),
        );
        if matches!(source, CommandSource::External) {
            // The stream exists from the start; it is simply idle.
            pipeline.mailbox.post(Command::ZERO, 0.0);
        }
        let hold = match &source {
            CommandSource::Driver(d) => d.hold_ticks(cfg.controller.dt),
            _ => 1,
        };
        let max_steps = (cfg.scenario.duration_max / cfg.controller.dt).round() as u64;
        let metrics = MetricsAccumulator::new(cfg.metrics_config());
        TrialRunner { cfg, world, pipeline, source, hold, max_steps, t_free, metrics, success: false, done: false }
    }

    pub fn header(&self) -> LogHeader {
        LogHeader { version: LOG_VERSION, config: self.cfg.clone(), metrics: self.cfg.metrics_config() }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn metrics(&self) -> &MetricsAccumulator {
        &self.metrics
    }

    /// Advances one control tick, or returns `None` once the trial is over.
    pub fn step(&mut self) -> Result<Option<TickLine>, Error> {
        if self.done {
            return Ok(None);
        }
        if goal_reached(&self.world.pose, self.cfg.scenario.goal, self.cfg.controller.goal_margin) {
            self.success = true;
            self.done = true;
            return Ok(None);
        }
        if self.world.step_index() >= self.max_steps {
            self.done = true;
            return Ok(None);
        }
        if let CommandSource::Driver(driver) = &mut self.source {
            if self.world.step_index() % self.hold == 0 {
                let crowd = self.world.sensed_crowd(driver.params.look_range + 2.0);
                let cmd = driver.command(&self.world.pose, &crowd, self.cfg.scenario.goal, &self.cfg.robot);
                self.pipeline.mailbox.post(cmd, self.world.t());
            }
        }
        let crowd = quantize_crowd(&self.world.sensed_crowd(self.cfg.controller.log_range));
        let (cmd, mut record) = self.pipeline.tick(&self.world)?;
        self.world.step(cmd);
        record.executed = self.world.executed;
        self.metrics.push(&record, &crowd);
        Ok(Some(TickLine { record, crowd }))
    }

    /// Closes open contact events and evaluates the final metrics.
    pub fn finish(&mut self) -> LogTrailer {
        self.done = true;
        let events = self.world.close_all_events();
        let outcome = TrialOutcome {
            success: self.success,
            t_c: self.world.t(),
            t_free: self.t_free,
            final_pose: self.world.pose,
            events,
        };
        let metrics = self.metrics.clone().finish(&outcome);
        LogTrailer { outcome, metrics }
    }
}

/// Time to goal of the same controller in the empty arena, if it arrives.
pub fn free_path_time(cfg: &TrialConfig) -> Result<Option<f64>, Error> {
    let mut runner = TrialRunner::new(cfg.clone(), empty_world(cfg), CommandSource::for_config(cfg), None);
    while runner.step()?.is_some() {}
    let trailer = runner.finish();
    Ok(trailer.outcome.success.then_some(trailer.outcome.t_c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub report: MetricsReport,
    pub outcome: TrialOutcome,
    pub ticks: usize,
}

/// Runs a trial, streaming its log to `out`.
pub fn run_trial_logged<W: Write>(cfg: &TrialConfig, out: W) -> Result<TrialResult, Error> {
    cfg.validate()?;
    let t_free = free_path_time(cfg)?;
    let world = spawn_world(cfg)?;
    let mut runner = TrialRunner::new(cfg.clone(), world, CommandSource::for_config(cfg), t_free);
    let mut log = LogWriter::new(out);
    log.write(&LogLine::Header(runner.header()))?;
    let mut ticks = 0;
    while let Some(line) = runner.step()? {
        log.write(&LogLine::Tick(line))?;
        ticks += 1;
    }
    let trailer = runner.finish();
    log.write(&LogLine::Trailer(trailer.clone()))?;
    log.flush()?;
    Ok(TrialResult { report: trailer.metrics, outcome: trailer.outcome, ticks })
}

/// Runs a trial without keeping a log.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult, Error> {
    run_trial_logged(cfg, std::io::sink())
}
