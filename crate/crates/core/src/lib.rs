//! Reactive crowd navigation workbench.
//!
//! The control stack runs in three layers: a high-level command (a linear
//! dynamical system towards an attractor, or a human command), an obstacle
//! avoidance layer ([`mds`] modulation or [`rds`] velocity-obstacle
//! correction) and a compliant post-contact layer ([`contact`]). The
//! [`sim`] module provides a deterministic crowd world to drive it and
//! [`metrics`] evaluates the resulting trials.

pub mod error;
pub mod model;
pub mod mds;
pub mod metrics;
pub mod pipeline;
pub mod rds;
pub mod contact;
pub mod sim;
pub mod trial;

pub use error::{Error, ModelError};
