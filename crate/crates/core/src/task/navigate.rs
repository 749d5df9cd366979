use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::cost::{sclera_residual_with, CostParams};
use crate::ddp::{DdpSolver, Objective, SolveReport, Trajectory};
use crate::eye::Pixel;
use crate::oracle::{OracleConfig, PerceptionOracle};
use crate::se3::{ControlInput, ToolState, Vec3};

use super::report::{GoalEntry, RunReport};
use super::{derive_seed, Scenario, Simulator, TaskError, TaskSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationConfig {
    pub replan_hz: f64,
    /// Replanning stops once the predicted goal is this close along the view axis (mm).
    pub z_guard_mm: f64,
    pub max_replans: usize,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            replan_hz: 5.0,
            z_guard_mm: 0.1,
            max_replans: 200,
        }
    }
}

impl NavigationConfig {
    pub fn steps_per_replan(&self, dt: f64) -> usize {
        ((1.0 / (self.replan_hz * dt)).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NavPhase {
    Tracking,
    FinalApproach,
    Reached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavStep {
    pub replanned: bool,
    pub phase: NavPhase,
    pub applied: ControlInput,
}

/// Replanning controller for one goal, advanced one simulation step at a time.
#[derive(Debug, Clone)]
pub struct Navigator {
    goal: Pixel,
    cost: CostParams,
    solver: DdpSolver,
    nav: NavigationConfig,
    oracle: PerceptionOracle,
    plan: Option<Trajectory>,
    cursor: usize,
    since_replan: usize,
    replans: usize,
    solver_iterations: usize,
    phase: NavPhase,
    waypoint: Option<Vec3>,
    last_solve: Option<SolveReport>,
}

impl Navigator {
    pub fn new(goal: Pixel, cost: CostParams, solver: DdpSolver, nav: NavigationConfig, oracle: PerceptionOracle) -> Self {
        Self {
            goal,
            cost,
            solver,
            nav,
            oracle,
            plan: None,
            cursor: 0,
            since_replan: 0,
            replans: 0,
            solver_iterations: 0,
            phase: NavPhase::Tracking,
            waypoint: None,
            last_solve: None,
        }
    }

    pub fn goal(&self) -> Pixel {
        self.goal
    }

    pub fn phase(&self) -> NavPhase {
        self.phase
    }

    pub fn replans(&self) -> usize {
        self.replans
    }

    pub fn solver_iterations(&self) -> usize {
        self.solver_iterations
    }

    pub fn waypoint(&self) -> Option<Vec3> {
        self.waypoint
    }

    pub fn last_solve(&self) -> Option<&SolveReport> {
        self.last_solve.as_ref()
    }

    pub fn cost(&self) -> &CostParams {
        &self.cost
    }

    /// Remaining planned states from the current step on.
    pub fn plan_preview(&self) -> &[ToolState] {
        match &self.plan {
            Some(p) => &p.states[self.cursor.min(p.states.len() - 1)..],
            None => &[],
        }
    }

    /// Replaces the cost parameters used by subsequent replans.
    pub fn set_cost(&mut self, cost: CostParams) {
        self.cost = cost;
    }

    fn replan(&mut self, sim: &Simulator, scenario: &Scenario, iteration_cap: Option<usize>) -> Result<(), TaskError> {
        if self.replans >= self.nav.max_replans {
            return Err(TaskError::MaxIterExceeded(self.replans));
        }
        let x = sim.state;
        let prediction = self.oracle.predict(&scenario.scene(x), &self.goal)?;
        let waypoint = prediction.goal_in_base(&x);
        let warm: Option<Vec<ControlInput>> = self.plan.as_ref().map(|p| p.controls[self.cursor.min(p.controls.len())..].to_vec());
        let mut solver = self.solver;
        if let Some(cap) = iteration_cap {
            solver.options.max_iterations = solver.options.max_iterations.min(cap);
        }
        let (traj, report) = solver.solve(&x, &Objective::reach(waypoint, &self.cost), warm.as_deref())?;
        self.replans += 1;
        self.solver_iterations += report.iterations;
        self.plan = Some(traj);
        self.cursor = 0;
        self.since_replan = 0;
        self.waypoint = Some(waypoint);
        self.last_solve = Some(report);
        let z_distance = (waypoint - x.position).dot(&scenario.camera.view_direction).abs();
        if z_distance <= self.nav.z_guard_mm {
            self.phase = NavPhase::FinalApproach;
        }
        Ok(())
    }

    /// Advances the plant by one step, replanning on schedule.
    pub fn step(&mut self, sim: &mut Simulator, scenario: &Scenario) -> Result<NavStep, TaskError> {
        self.step_with_budget(sim, scenario, None)
    }

    /// As [`Navigator::step`], with replans capped at `iteration_cap` solver iterations.
    pub fn step_with_budget(
        &mut self,
        sim: &mut Simulator,
        scenario: &Scenario,
        iteration_cap: Option<usize>,
    ) -> Result<NavStep, TaskError> {
        if self.phase == NavPhase::Reached {
            return Ok(NavStep {
                replanned: false,
                phase: self.phase,
                applied: ControlInput::zero(),
            });
        }
        let due = self.nav.steps_per_replan(sim.cfg.dt);
        let mut replanned = false;
        if self.plan.is_none() || (self.phase == NavPhase::Tracking && self.since_replan >= due) {
            self.replan(sim, scenario, iteration_cap)?;
            replanned = true;
        }
        let plan = self.plan.as_ref().expect("plan exists after replanning");
        let u = plan.controls.get(self.cursor).copied().unwrap_or_else(ControlInput::zero);
        let applied = sim.step(&u)?;
        self.cursor += 1;
        self.since_replan += 1;
        if self.phase == NavPhase::FinalApproach && self.cursor >= plan.controls.len() {
            self.phase = NavPhase::Reached;
        }
        Ok(NavStep {
            replanned,
            phase: self.phase,
            applied,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavOutcome {
    /// Executed states and applied controls.
    pub executed: Trajectory,
    pub entry: GoalEntry,
}

/// Drives the tool from `start` to the retina under pixel `g` with periodic
/// re-prediction and replanning.
pub fn closed_loop_navigate(
    scenario: &Scenario,
    start: &ToolState,
    g: &Pixel,
    settings: &TaskSettings,
) -> Result<NavOutcome, TaskError> {
    navigate_indexed(scenario, start, g, settings, &settings.oracle, 0)
}

fn navigate_indexed(
    scenario: &Scenario,
    start: &ToolState,
    g: &Pixel,
    settings: &TaskSettings,
    oracle_cfg: &OracleConfig,
    index: usize,
) -> Result<NavOutcome, TaskError> {
    scenario.validate()?;
    let target = scenario.target_point(g)?;
    let cost = settings.cost_for(scenario, None);
    cost.validate()?;
    let oracle = PerceptionOracle::new(settings.bins, *oracle_cfg)?;
    let mut sim = Simulator::new(*start, settings.solver.integration(&cost), settings.limits)?;
    let mut nav = Navigator::new(*g, cost.clone(), settings.solver, settings.nav, oracle);

    let mut states = vec![*start];
    let mut controls = Vec::new();
    let mut stage_costs = Vec::new();
    while nav.phase() != NavPhase::Reached {
        let x = sim.state;
        let step = nav.step(&mut sim, scenario)?;
        stage_costs.push(cost.dt * crate::cost::stage_cost(&x, &step.applied, &cost)?);
        controls.push(step.applied);
        states.push(sim.state);
    }
    let sclera: Vec<f64> = states
        .iter()
        .map(|x| sclera_residual_with(x, &cost.sclera_point, cost.sclera_projector).norm())
        .collect();
    let entry = GoalEntry::landed(
        index,
        g,
        &target,
        &sim.state.position,
        &scenario.camera,
        &sclera,
        nav.replans(),
        nav.solver_iterations(),
        sim.steps,
    );
    let total_cost = stage_costs.iter().sum();
    Ok(NavOutcome {
        executed: Trajectory {
            states,
            controls,
            stage_costs,
            total_cost,
        },
        entry,
    })
}

/// Navigates to every goal from independently randomized starts. Goal `i`
/// uses seeds derived from `(seed, i)`, so results do not depend on scheduling.
pub fn run_navigation_benchmark(
    scenario: &Scenario,
    goals: &[Pixel],
    settings: &TaskSettings,
    seed: u64,
) -> Result<RunReport, TaskError> {
    scenario.validate()?;
    let run_one = |(i, g): (usize, &Pixel)| -> GoalEntry {
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, 0, i as u64));
        let start = scenario.start_state(&mut rng);
        let oracle_cfg = OracleConfig {
            seed: derive_seed(seed ^ settings.oracle.seed, 1, i as u64),
            ..settings.oracle
        };
        match navigate_indexed(scenario, &start, g, settings, &oracle_cfg, i) {
            Ok(outcome) => outcome.entry,
            Err(e) => GoalEntry::failed(i, g, scenario.target_point(g).ok(), &e),
        }
    };
    #[cfg(feature = "parallel")]
    let entries: Vec<GoalEntry> = goals.par_iter().enumerate().map(run_one).collect();
    #[cfg(not(feature = "parallel"))]
    let entries: Vec<GoalEntry> = goals.iter().enumerate().map(run_one).collect();
    Ok(RunReport::navigation(seed, settings, scenario, entries))
}
