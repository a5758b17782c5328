//! Trial orchestration: configuration, logging, single and batch runs,
//! replay and the live session behind the serve endpoint.

pub mod batch;
pub mod config;
pub mod driver;
pub mod log;
pub mod replay;
pub mod runner;
pub mod session;

pub use config::{derive_seed, BatchConfig, ControllerConfig, TrialConfig};
pub use driver::{DriverParams, SimulatedDriver};
pub use log::{read_log, write_log, LogHeader, LogLine, LogTrailer, TickLine, TrialLog};
pub use runner::{free_path_time, run_trial, run_trial_logged, CommandSource, TrialResult, TrialRunner};
pub use batch::{assemble_report, run_batch, BatchOptions, BatchReport, TrialSummary};
pub use replay::{recompute, render_svg, replay, ReplayResult};
pub use session::{ClientMessage, CommandInbox, LiveSession, ServerMessage};
