//! One live shared-control trial driven by commands from outside.
//!
//! The simulation loop owns the world. Commands arrive in the pipeline
//! mailbox from any thread, stamped with the simulation clock, and the
//! session emits `state`, `metrics` and `end` messages for the client.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contact::ContactState;
use crate::error::Error;
use crate::metrics::{LiveMetrics, MetricsReport};
use crate::model::{AgentState, Command, Pose};
use crate::pipeline::{ControllerMode, Mailbox};

use super::config::TrialConfig;
use super::log::{LogLine, LogWriter};
use super::runner::{free_path_time, spawn_world, CommandSource, TrialRunner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Physical joystick command; `t` is the client clock and only echoed.
    Cmd { v: f64, w: f64, #[serde(default)] t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub pose: Pose,
    pub agents: Vec<AgentState>,
    pub contact: ContactState,
    pub u_h: Command,
    pub u_out: Command,
    pub blocked: bool,
    pub virtual_collision: bool,
    pub goal: crate::model::Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(Box<StateMessage>),
    Metrics(LiveMetrics),
    End { report: Box<MetricsReport> },
}

/// Simulation time shared with the threads that stamp incoming commands.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn now(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }

    fn set(&self, t: f64) {
        self.0.store(t.to_bits(), Ordering::Release);
    }
}

/// Handle for posting commands into a running session.
#[derive(Debug, Clone)]
pub struct CommandInbox {
    mailbox: Mailbox,
    clock: SimClock,
}

impl CommandInbox {
    pub fn post(&self, msg: &ClientMessage) {
        match *msg {
            ClientMessage::Cmd { v, w, .. } => self.mailbox.post(Command::new(v, w), self.clock.now()),
        }
    }

    /// Parses and posts one text frame.
    pub fn post_text(&self, text: &str) -> Result<(), serde_json::Error> {
        let msg: ClientMessage = serde_json::from_str(text)?;
        self.post(&msg);
        Ok(())
    }
}

pub struct LiveSession<W: Write> {
    runner: TrialRunner,
    log: LogWriter<W>,
    clock: SimClock,
    state_every: u64,
    metrics_every: u64,
    ticks: u64,
}

impl<W: Write> LiveSession<W> {
    /// Starts a session; non-shared modes are switched to shared RDS.
    pub fn new(mut cfg: TrialConfig, out: W) -> Result<Self, Error> {
        if !cfg.controller.mode.is_shared() {
            cfg.controller.mode = ControllerMode::SharedControlRds;
        }
        cfg.validate()?;
        let t_free = free_path_time(&cfg)?;
        let world = spawn_world(&cfg)?;
        let dt = cfg.controller.dt;
        let runner = TrialRunner::new(cfg, world, CommandSource::External, t_free);
        let mut log = LogWriter::new(out);
        log.write(&LogLine::Header(runner.header()))?;
        let every = |hz: f64| ((1.0 / (hz * dt)).round() as u64).max(1);
        Ok(LiveSession { runner, log, clock: SimClock::default(), state_every: every(20.0), metrics_every: every(1.0), ticks: 0 })
    }

    pub fn inbox(&self) -> CommandInbox {
        CommandInbox { mailbox: self.runner.pipeline.mailbox.clone(), clock: self.clock.clone() }
    }

    pub fn dt(&self) -> f64 {
        self.runner.cfg.controller.dt
    }

    pub fn config(&self) -> &TrialConfig {
        &self.runner.cfg
    }

    /// Advances one tick. The last batch of messages holds `end`, after
    /// which the log is complete and the session returns `None`.
    pub fn step(&mut self) -> Result<Option<Vec<ServerMessage>>, Error> {
        if self.runner.is_done() {
            return Ok(None);
        }
        let mut out = Vec::new();
        match self.runner.step()? {
            Some(line) => {
                self.clock.set(self.runner.world.t());
                if self.ticks % self.state_every == 0 {
                    let r = &line.record;
                    out.push(ServerMessage::State(Box::new(StateMessage {
                        t: r.t,
                        pose: r.pose,
                        agents: line.crowd.agents.clone(),
                        contact: r.contact,
                        u_h: r.u_h,
                        u_out: r.u_out,
                        blocked: r.blocked,
                        virtual_collision: r.virtual_collision_active,
                        goal: self.runner.cfg.scenario.goal,
                    })));
                }
                self.ticks += 1;
                if self.ticks % self.metrics_every == 0 {
                    out.push(ServerMessage::Metrics(self.runner.metrics().live()));
                }
                self.log.write(&LogLine::Tick(line))?;
            }
            None => out.push(self.finish()?),
        }
        Ok(Some(out))
    }

    fn finish(&mut self) -> Result<ServerMessage, Error> {
        let trailer = self.runner.finish();
        self.log.write(&LogLine::Trailer(trailer.clone()))?;
        self.log.flush()?;
        Ok(ServerMessage::End { report: Box::new(trailer.metrics) })
    }

    /// Stops early, keeping the ticks written so far and no trailer.
    pub fn abort(mut self) -> Result<W, Error> {
        self.log.flush()?;
        Ok(self.log.into_inner())
    }

    pub fn into_inner(self) -> W {
        self.log.into_inner()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::read_log;

    #[test]
    fn parses_client_command() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"cmd","v":0.5,"w":-0.2,"t":12.5}"#).unwrap();
        assert_eq!(m, ClientMessage::Cmd { v: 0.5, w: -0.2, t: 12.5 });
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"nope"}"#).is_err());
    }

    #[test]
    fn session_streams_at_fixed_rates_and_logs() {
        let mut cfg = TrialConfig::default();
        cfg.scenario.target_density = 0.05;
        cfg.scenario.duration_max = 3.0;
        let mut s = LiveSession::new(cfg, Vec::new()).unwrap();
        let inbox = s.inbox();
        let (mut states, mut metrics, mut end) = (0, 0, 0);
        while let Some(msgs) = s.step().unwrap() {
            inbox.post_text(r#"{"type":"cmd","v":1.0,"w":0.0,"t":0}"#).unwrap();
            for m in msgs {
                match m {
                    ServerMessage::State(_) => states += 1,
                    ServerMessage::Metrics(_) => metrics += 1,
                    ServerMessage::End { .. } => end += 1,
                }
            }
        }
        assert_eq!((states, metrics, end), (60, 3, 1));
        let text = String::from_utf8(s.into_inner()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"type\":\"header\""));
        let log = read_log(text.as_bytes()).unwrap();
        assert_eq!(log.header.config.controller.mode, ControllerMode::SharedControlRds);
        assert!(log.trailer.metrics.path_length > 2.0);
        let s = serde_json::to_string(&ServerMessage::End { report: Box::new(log.trailer.metrics) }).unwrap();
        assert!(s.starts_with(r#"{"type":"end","report":{"#));
    }
}
