use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::ComplianceParams;
use crate::error::Error;
use crate::mds::MdsParams;
use crate::metrics::{MetricsConfig, MetricsParams};
use crate::model::{RobotParams, ScenarioConfig, ScenarioKind};
use crate::pipeline::{ControllerMode, PipelineParams};
use crate::rds::RdsParams;
use crate::sim::{ContactPhysics, PedModelParams, DEFAULT_DT};

use super::driver::DriverParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    /// Control and physics period, s.
    pub dt: f64,
    /// Radius of the goal region, m.
    pub goal_margin: f64,
    /// Reference jerk for the relative jerk metric.
    pub ref_jerk: Option<f64>,
    pub attractor_gain: f64,
    pub command_expiry: f64,
    /// Crowd agents within this distance of the robot are written to the log, m.
    pub log_range: f64,
    pub mds: MdsParams,
    pub rds: RdsParams,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        ControllerConfig {
            mode: ControllerMode::SharedControlRds,
            dt: DEFAULT_DT,
            goal_margin: 3.0,
            ref_jerk: None,
            attractor_gain: p.attractor_gain,
            command_expiry: p.command_expiry,
            log_range: 5.0,
            mds: p.mds,
            rds: p.rds,
        }
    }
}

impl ControllerConfig {
    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            attractor_gain: self.attractor_gain,
            command_expiry: self.command_expiry,
            mds: self.mds.clone(),
            rds: self.rds.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub controllers: Vec<ControllerMode>,
    pub densities: Vec<f64>,
    pub repetitions: usize,
    pub kind: ScenarioKind,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            controllers: vec![ControllerMode::MdsAutonomous, ControllerMode::RdsAutonomous, ControllerMode::SharedControlRds],
            densities: vec![0.18],
            repetitions: 5,
            kind: ScenarioKind::Mixed,
        }
    }
}

/// Complete trial configuration, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub scenario: ScenarioConfig,
    pub robot: RobotParams,
    pub contact: ContactPhysics,
    pub controller: ControllerConfig,
    pub compliance: ComplianceParams,
    pub pedestrians: PedModelParams,
    pub metrics: MetricsParams,
    pub driver: DriverParams,
    pub batch: BatchConfig,
}

impl TrialConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, Error> {
        let cfg: TrialConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.scenario.validate()?;
        self.robot.validate()?;
        self.compliance.validate()?;
        let c = &self.controller;
        if !(c.dt > 0.0 && c.dt <= 0.1) {
            return Err(Error::Config(format!("dt {} outside (0, 0.1]", c.dt)));
        }
        if !(c.goal_margin >= 0.0) {
            return Err(Error::Config("goal_margin must be non-negative".into()));
        }
        if matches!(c.ref_jerk, Some(j) if !(j > 0.0)) {
            return Err(Error::Config("ref_jerk must be positive".into()));
        }
        if (self.compliance.sample_time - c.dt).abs() > 1e-12 {
            return Err(Error::Config("compliance.sample_time must equal controller.dt".into()));
        }
        Ok(())
    }

    pub fn metrics_config(&self) -> MetricsConfig {
        MetricsConfig {
            mode: self.controller.mode,
            robot: self.robot.clone(),
            dt: self.controller.dt,
            goal: self.scenario.goal,
            goal_margin: self.controller.goal_margin,
            ref_jerk: self.controller.ref_jerk,
            params: self.metrics.clone(),
        }
    }

    /// Copy with a different controller, density and seed.
    pub fn variant(&self, mode: ControllerMode, density: f64, seed: u64) -> TrialConfig {
        let mut c = self.clone();
        c.controller.mode = mode;
        c.scenario.target_density = density;
        c.scenario.seed = seed;
        c
    }
}

/// Independent per-trial seed from a base seed and a trial index (SplitMix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrialConfig::default();
        cfg.validate().unwrap();
        let back = TrialConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = TrialConfig::from_toml_str(
            r#"
            [scenario]
            kind = "flow"
            target_density = 0.3
            seed = 9

            [controller]
            mode = "rds"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.kind, ScenarioKind::Flow1d);
        assert_eq!(cfg.controller.mode, ControllerMode::RdsAutonomous);
        assert_eq!(cfg.controller.goal_margin, 3.0);
        assert_eq!(cfg.robot, RobotParams::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrialConfig::from_toml_str("[scenario]\ntarget_density = 0.0").is_err());
        assert!(TrialConfig::from_toml_str("[controller]\nmode = \"teleport\"").is_err());
        assert!(TrialConfig::from_toml_str("[controller]\ndt = 0.02").is_err());
    }

    #[test]
    fn seeds_differ_per_index() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(derive_seed(42, 3), derive_seed(42, 3));
    }
}
