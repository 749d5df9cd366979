//! The shared TOML configuration read by the CLI and the session service.
//!
//! Every key is optional; missing keys take the library defaults. See
//! `retinav.example.toml` at the repository root for the full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostParams, ScleraProjector};
use crate::ddp::{DdpOptions, DdpSolver};
use crate::eye::RansacConfig;
use crate::oracle::{DiscretizationSpec, OracleConfig};
use crate::se3::{ActuatorLimits, IntegrationConfig, Mat3};
use crate::task::{NavigationConfig, Scenario, TaskSettings, VesselSchedule};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";
/// Overrides `[session] listen`; nothing else is read from the environment.
pub const LISTEN_ENV: &str = "RETINAV_LISTEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// Terminal gain on the position error (diagonal).
    pub position_gain: f64,
    /// Terminal gain on linear and angular velocity (diagonal).
    pub velocity_gain: f64,
    pub control_gain: f64,
    pub sclera_weight: f64,
    pub collision_weight: f64,
    pub collision_margin_mm: f64,
    pub horizon: usize,
    pub dt: f64,
    /// `orthogonal` uses I − r rᵀ, `literal` uses I + r rᵀ.
    pub sclera_projector_sign: ScleraProjector,
    pub actuator_penalty_weight: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let cp = CostParams::default();
        Self {
            position_gain: cp.terminal_gain[(0, 0)],
            velocity_gain: cp.terminal_gain[(3, 3)],
            control_gain: cp.control_gain[(0, 0)],
            sclera_weight: cp.sclera_weight,
            collision_weight: cp.collision_weight,
            collision_margin_mm: cp.collision_margin,
            horizon: cp.horizon,
            dt: cp.dt,
            sclera_projector_sign: cp.sclera_projector,
            actuator_penalty_weight: cp.actuator.weight,
        }
    }
}

impl CostSection {
    pub fn to_params(&self, limits: ActuatorLimits) -> CostParams {
        let mut cp = CostParams::with_gains(self.position_gain, self.velocity_gain, self.control_gain);
        cp.sclera_weight = self.sclera_weight;
        cp.collision_weight = self.collision_weight;
        cp.collision_margin = self.collision_margin_mm;
        cp.horizon = self.horizon;
        cp.dt = self.dt;
        cp.sclera_projector = self.sclera_projector_sign;
        cp.actuator.limits = limits;
        cp.actuator.weight = self.actuator_penalty_weight;
        cp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub mass: f64,
    /// Diagonal of the body-frame inertia.
    pub inertia: [f64; 3],
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = DdpOptions::default();
        let m = IntegrationConfig::default();
        Self {
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
            mass: m.mass,
            inertia: [m.inertia[(0, 0)], m.inertia[(1, 1)], m.inertia[(2, 2)]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationSection {
    pub cols: usize,
    pub rows: usize,
    pub ransac: RansacConfig,
}

impl Default for LocalizationSection {
    fn default() -> Self {
        Self {
            cols: 6,
            rows: 6,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselSection {
    pub waypoints: usize,
    pub hover_offset_mm: f64,
    pub schedule: VesselSchedule,
}

impl Default for VesselSection {
    fn default() -> Self {
        Self {
            waypoints: 5,
            hover_offset_mm: 0.2,
            schedule: VesselSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub seed: u64,
    pub goals: usize,
    pub localization_trials: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            seed: 0,
            goals: 50,
            localization_trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub listen: String,
    /// Solver iterations allowed per replan inside a tick. Exceeding it keeps
    /// the truncated plan and emits a latency event.
    pub solve_iteration_budget: usize,
    /// Pace ticks to wall-clock time (`1/dt` per second) instead of free-running.
    pub realtime: bool,
    /// Append-only event log.
    pub log_path: Option<String>,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.to_string(),
            solve_iteration_budget: 100,
            realtime: true,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cost: CostSection,
    pub solver: SolverSection,
    pub limits: ActuatorLimits,
    pub navigation: NavigationConfig,
    pub oracle: OracleConfig,
    pub bins: DiscretizationSpec,
    pub scenario: Scenario,
    pub localization: LocalizationSection,
    pub vessel: VesselSection,
    pub bench: BenchSection,
    pub session: SessionSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let settings = self.task_settings();
        settings.cost.validate().map_err(|e| invalid(&e))?;
        settings.solver.integration(&settings.cost).validate().map_err(|e| invalid(&e))?;
        settings.bins.validate().map_err(|e| invalid(&e))?;
        self.oracle.validate().map_err(|e| invalid(&e))?;
        self.scenario.validate().map_err(|e| invalid(&e))?;
        if !(self.navigation.replan_hz > 0.0 && self.navigation.replan_hz.is_finite()) {
            return Err(ConfigError::Invalid("replan_hz must be positive".into()));
        }
        if self.solver.max_iterations == 0 || self.session.solve_iteration_budget == 0 {
            return Err(ConfigError::Invalid("iteration limits must be positive".into()));
        }
        if !(self.limits.max_force > 0.0 && self.limits.max_torque > 0.0) {
            return Err(ConfigError::Invalid("actuator limits must be positive".into()));
        }
        if self.localization.cols * self.localization.rows < 4 {
            return Err(ConfigError::Invalid("localization grid needs at least four samples".into()));
        }
        if self.vessel.waypoints < 2 || !(self.vessel.hover_offset_mm > 0.0) {
            return Err(ConfigError::Invalid("vessel path needs two waypoints and a positive hover offset".into()));
        }
        Ok(())
    }

    pub fn task_settings(&self) -> TaskSettings {
        let s = &self.solver;
        let model = IntegrationConfig {
            dt: self.cost.dt,
            mass: s.mass,
            inertia: Mat3::from_diagonal(&s.inertia.into()),
        };
        let options = DdpOptions {
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
            ..DdpOptions::default()
        };
        TaskSettings {
            cost: self.cost.to_params(self.limits),
            solver: DdpSolver::new(model, options),
            limits: self.limits,
            nav: self.navigation,
            bins: self.bins,
            oracle: self.oracle,
        }
    }

    /// `RETINAV_LISTEN` if set, else `[session] listen`.
    pub fn listen_address(&self) -> String {
        listen_address_from(std::env::var(LISTEN_ENV).ok(), &self.session.listen)
    }
}

fn listen_address_from(env: Option<String>, configured: &str) -> String {
    match env {
        Some(addr) if !addr.trim().is_empty() => addr.trim().to_string(),
        _ => configured.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_file_matches_defaults() {
        let text = include_str!("../../../retinav.example.toml");
        assert_eq!(Config::from_toml(text).unwrap(), Config::default());
    }

    #[test]
    fn empty_file_gives_library_defaults() {
        let cfg = Config::from_toml("").unwrap();
        let s = cfg.task_settings();
        let d = TaskSettings::default();
        assert_eq!(s.cost, d.cost);
        assert_eq!(s.solver, d.solver);
        assert_eq!(s.nav, d.nav);
        assert_eq!(s.bins, d.bins);
        assert_eq!(s.oracle, d.oracle);
        assert_eq!(cfg.scenario, Scenario::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = Config::default();
        cfg.cost.sclera_weight = 250.0;
        cfg.oracle.seed = 9;
        cfg.session.log_path = Some("run.jsonl".into());
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_override_single_keys() {
        let cfg = Config::from_toml(
            "[cost]\nsclera_weight = 0.0\nsclera_projector_sign = \"literal\"\n\
             [oracle]\nnoise_sigma = [0.05, 0.05, 0.05]\n\
             [scenario.camera]\nscale = 0.02\n",
        )
        .unwrap();
        let s = cfg.task_settings();
        assert_eq!(s.cost.sclera_weight, 0.0);
        assert_eq!(s.cost.sclera_projector, ScleraProjector::Literal);
        assert_eq!(s.cost.collision_weight, 1e4);
        assert_eq!(cfg.scenario.camera.scale, 0.02);
        assert_eq!(cfg.scenario.camera.width, 640);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        assert!(matches!(
            Config::from_toml("[cost]\nsclera_weight = -1.0\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(Config::from_toml("[cost]\nsclera_wieght = 1.0\n"), Err(ConfigError::Parse(_))));
        assert!(Config::from_toml("[navigation]\nreplan_hz = 0.0\n").is_err());
    }

    #[test]
    fn env_overrides_listen_address_only_when_set() {
        assert_eq!(listen_address_from(None, DEFAULT_LISTEN), DEFAULT_LISTEN);
        assert_eq!(listen_address_from(Some("  ".into()), DEFAULT_LISTEN), DEFAULT_LISTEN);
        assert_eq!(listen_address_from(Some("0.0.0.0:9000".into()), DEFAULT_LISTEN), "0.0.0.0:9000");
    }
}
