//! JSONL trial log: one header line, one line per control tick, one trailer.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::LogError;
use crate::metrics::{MetricsConfig, MetricsReport, TrialOutcome};
use crate::model::{AgentState, CrowdSnapshot};
use crate::pipeline::TickRecord;

use super::config::TrialConfig;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub config: TrialConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLine {
    pub record: TickRecord,
    pub crowd: CrowdSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTrailer {
    pub outcome: TrialOutcome,
    /// Metrics computed live while the trial ran.
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(TickLine),
    Trailer(LogTrailer),
}

/// A fully parsed log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: LogHeader,
    pub ticks: Vec<TickLine>,
    pub trailer: LogTrailer,
}

/// Rounds to a micrometre grid so logged crowd coordinates stay short.
pub fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn quantize_crowd(crowd: &CrowdSnapshot) -> CrowdSnapshot {
    CrowdSnapshot {
        t: crowd.t,
        agents: crowd
            .agents
            .iter()
            .map(|a| AgentState {
                id: a.id,
                position: crate::model::Vec2::new(quantize(a.position.x), quantize(a.position.y)),
                velocity: crate::model::Vec2::new(quantize(a.velocity.x), quantize(a.velocity.y)),
                radius: quantize(a.radius),
                kind: a.kind,
            })
            .collect(),
    }
}

pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        LogWriter { out }
    }

    pub fn write(&mut self, line: &LogLine) -> Result<(), LogError> {
        serde_json::to_writer(&mut self.out, line).map_err(|e| LogError::Schema(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a log. Errors carry the byte offset of the offending line.
pub fn read_log<R: BufRead>(mut input: R) -> Result<TrialLog, LogError> {
    let mut offset = 0usize;
    let mut line = String::new();
    let mut header = None;
    let mut ticks = Vec::new();
    let mut trailer = None;
    loop {
        line.clear();
        let n = input.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let text = line.trim_end_matches(['\n', '\r']);
        if text.is_empty() {
            offset += n;
            continue;
        }
        let parsed: LogLine = serde_json::from_str(text).map_err(|e| LogError::Parse { offset, message: e.to_string() })?;
        match parsed {
            LogLine::Header(h) if header.is_none() && ticks.is_empty() => {
                if h.version != LOG_VERSION {
                    return Err(LogError::Schema(format!("unsupported log version {}", h.version)));
                }
                header = Some(h);
            }
            LogLine::Tick(t) if header.is_some() && trailer.is_none() => ticks.push(t),
            LogLine::Trailer(t) if header.is_some() && trailer.is_none() => trailer = Some(t),
            _ => return Err(LogError::Parse { offset, message: "line out of order".into() }),
        }
        offset += n;
    }
    let header = header.ok_or(LogError::Truncated("header", offset))?;
    let trailer = trailer.ok_or(LogError::Truncated("trailer", offset))?;
    Ok(TrialLog { header, ticks, trailer })
}

pub fn read_log_bytes(bytes: &[u8]) -> Result<TrialLog, LogError> {
    read_log(bytes)
}

/// Serializes a parsed log back into JSONL.
pub fn write_log<W: Write>(log: &TrialLog, out: W) -> Result<W, LogError> {
    let mut w = LogWriter::new(out);
    w.write(&LogLine::Header(log.header.clone()))?;
    for t in &log.ticks {
        w.write(&LogLine::Tick(t.clone()))?;
    }
    w.write(&LogLine::Trailer(log.trailer.clone()))?;
    w.flush()?;
    Ok(w.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_is_idempotent_and_short() {
        let q = quantize(std::f64::consts::PI);
        assert_eq!(quantize(q), q);
        assert_eq!(serde_json::to_string(&q).unwrap(), "3.141593");
    }

    #[test]
    fn garbage_reports_offset() {
        let err = read_log_bytes(b"\n{\"type\":\"tick\"").unwrap_err();
        match err {
            LogError::Parse { offset, .. } => assert_eq!(offset, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_log_bytes(b""), Err(LogError::Truncated("header", 0))));
    }
}
