//! Closed-loop navigation and the three experiments: goal benchmark, eye
//! localization and vessel following, plus randomized scenario generation.

mod collect;
mod localize;
mod navigate;
mod report;
mod scenario;
mod vessel;

pub use collect::{generate_collection_scenarios, CollectionSample, JitterMode};
pub use localize::{localization_points, run_localization, run_localization_trials};
pub use navigate::{
    closed_loop_navigate, run_navigation_benchmark, NavOutcome, NavPhase, NavStep, NavigationConfig, Navigator,
};
pub use report::{GoalEntry, LocalizationEntry, NavigationSummary, RunReport, TaskKind, Timing, VesselEntry};
pub use scenario::{PixelGrid, Scenario, Simulator};
pub use vessel::{
    hover_waypoints, plan_vessel, run_vessel_following, VesselOutcome, VesselPath, VesselPlan, VesselSchedule,
};

use thiserror::Error;

use crate::cost::{CostError, CostParams};
use crate::ddp::{DdpError, DdpSolver};
use crate::eye::{FitError, GeometryError};
use crate::oracle::{DiscretizationSpec, OracleConfig, OracleError};
use crate::se3::{ActuatorLimits, KinematicsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("goal not reached within {0} replans")]
    MaxIterExceeded(usize),
    #[error("goal pixel does not hit the retina")]
    GoalOffRetina,
    #[error("vessel path pixel {0} does not hit the fitted retina")]
    PathOffRetina(usize),
    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),
    #[error(transparent)]
    Oracle(OracleError),
    #[error(transparent)]
    Solver(#[from] DdpError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Geometry(GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

impl TaskError {
    fn from_goal(e: GeometryError) -> Self {
        match e {
            GeometryError::NoIntersection | GeometryError::PixelOutOfBounds(..) => TaskError::GoalOffRetina,
            other => TaskError::Geometry(other),
        }
    }
}

impl From<OracleError> for TaskError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::GoalOffRetina | OracleError::PixelOutOfBounds(..) => TaskError::GoalOffRetina,
            other => TaskError::Oracle(other),
        }
    }
}

impl From<GeometryError> for TaskError {
    fn from(e: GeometryError) -> Self {
        TaskError::Geometry(e)
    }
}

impl From<CostError> for TaskError {
    fn from(e: CostError) -> Self {
        TaskError::Solver(DdpError::Cost(e))
    }
}

/// Everything a task run needs besides the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSettings {
    pub cost: CostParams,
    pub solver: DdpSolver,
    pub limits: ActuatorLimits,
    pub nav: NavigationConfig,
    pub bins: DiscretizationSpec,
    pub oracle: OracleConfig,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            cost: CostParams::default(),
            solver: DdpSolver::default(),
            limits: ActuatorLimits::default(),
            nav: NavigationConfig::default(),
            bins: DiscretizationSpec::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl TaskSettings {
    /// Cost parameters bound to a scenario's port, with the given collision sphere.
    pub fn cost_for(&self, scenario: &Scenario, eye: Option<crate::eye::EyeGeometry>) -> CostParams {
        CostParams {
            sclera_point: scenario.sclera_point,
            eye,
            ..self.cost.clone()
        }
    }
}

/// Independent seed for stream `stream` of run `index`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
