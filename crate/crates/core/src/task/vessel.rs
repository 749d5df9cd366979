use serde::{Deserialize, Serialize};

use crate::cost::{sclera_residual_with, CostParams, Knot};
use crate::ddp::{Objective, SolveReport, Trajectory};
use crate::eye::{raycast_sphere, CameraModel, FitResult, Pixel};
use crate::se3::{ToolState, Vec3};

use super::report::{RunReport, TaskKind, VesselEntry};
use super::{Scenario, Simulator, TaskError, TaskSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselPath {
    pub pixels: Vec<Pixel>,
    /// Radial clearance (mm) kept above the fitted surface.
    pub hover_offset: f64,
}

impl VesselPath {
    pub fn new(pixels: Vec<Pixel>, hover_offset: f64) -> Result<Self, TaskError> {
        let path = Self { pixels, hover_offset };
        path.validate()?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.pixels.len() < 2 {
            return Err(TaskError::InvalidScenario("a vessel path needs at least two pixels"));
        }
        if !(self.hover_offset > 0.0 && self.hover_offset.is_finite()) {
            return Err(TaskError::InvalidScenario("hover offset must be positive"));
        }
        Ok(())
    }

    /// `n` evenly spaced pixels on a straight image segment through `centre`,
    /// from (−2, −1.5) mm to (2, 1.5) mm.
    pub fn straight(camera: &CameraModel, centre: &Pixel, n: usize) -> Self {
        let (ax, ay, bx, by) = (-2.0, -1.5, 2.0, 1.5);
        let pixels = (0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                Pixel::new(
                    centre.x + camera.mm_to_pixel(ax + t * (bx - ax)),
                    centre.y + camera.mm_to_pixel(ay + t * (by - ay)),
                )
            })
            .collect();
        Self {
            pixels,
            hover_offset: 0.2,
        }
    }
}

/// Equal time per segment: the first waypoint is reached after
/// `approach_steps`, each later one `segment_steps` after its predecessor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselSchedule {
    pub approach_steps: usize,
    pub segment_steps: usize,
    pub knot_gain: f64,
}

impl Default for VesselSchedule {
    fn default() -> Self {
        Self {
            approach_steps: 200,
            segment_steps: 75,
            knot_gain: 1e4,
        }
    }
}

impl VesselSchedule {
    pub fn knot_steps(&self, waypoints: usize) -> Vec<usize> {
        (0..waypoints)
            .map(|i| self.approach_steps + i * self.segment_steps)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselOutcome {
    pub waypoints: Vec<Vec3>,
    pub knot_steps: Vec<usize>,
    pub planned: Trajectory,
    pub executed: Vec<ToolState>,
    pub solve: SolveReport,
}

/// Hover waypoints: each path pixel cast onto the fitted sphere, then moved
/// radially onto the sphere shrunk by the hover offset.
pub fn hover_waypoints(scenario: &Scenario, path: &VesselPath, fit: &FitResult) -> Result<Vec<Vec3>, TaskError> {
    let hover = fit.eye.shrunk(path.hover_offset);
    path.pixels
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let hit = raycast_sphere(&scenario.camera, g, &fit.eye).map_err(|_| TaskError::PathOffRetina(i))?;
            hover.project(&hit).ok_or(TaskError::PathOffRetina(i))
        })
        .collect()
}

/// A single plan through all hover waypoints, zero velocity only at the last.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselPlan {
    pub waypoints: Vec<Vec3>,
    pub knot_steps: Vec<usize>,
    /// Cost bound to the shrunk fitted sphere.
    pub cost: CostParams,
    pub planned: Trajectory,
    pub solve: SolveReport,
}

pub fn plan_vessel(
    scenario: &Scenario,
    start: &ToolState,
    path: &VesselPath,
    fit: &FitResult,
    settings: &TaskSettings,
    schedule: &VesselSchedule,
) -> Result<VesselPlan, TaskError> {
    scenario.validate()?;
    path.validate()?;
    let waypoints = hover_waypoints(scenario, path, fit)?;
    let knot_steps = schedule.knot_steps(waypoints.len());
    let mut cost = settings.cost_for(scenario, Some(fit.eye.shrunk(path.hover_offset)));
    cost.horizon = *knot_steps.last().expect("path has waypoints");
    let knots: Vec<Knot> = waypoints
        .iter()
        .zip(&knot_steps)
        .take(waypoints.len() - 1)
        .map(|(w, s)| Knot {
            step: *s,
            position: *w,
            gain: schedule.knot_gain,
        })
        .collect();
    let objective = Objective {
        goal: *waypoints.last().unwrap(),
        params: &cost,
        knots: &knots,
    };
    let (planned, solve) = settings.solver.solve(start, &objective, None)?;
    Ok(VesselPlan {
        waypoints,
        knot_steps,
        cost,
        planned,
        solve,
    })
}

impl VesselPlan {
    /// Scores executed states (starting at the plan's initial state) against
    /// the waypoints and the true eye.
    pub fn entry(&self, scenario: &Scenario, fit: &FitResult, executed: &[ToolState]) -> VesselEntry {
        let cost = &self.cost;
        let sclera: Vec<f64> = executed
            .iter()
            .map(|x| sclera_residual_with(x, &cost.sclera_point, cost.sclera_projector).norm())
            .collect();
        let true_eye = scenario.true_eye;
        let penetrations = executed
            .iter()
            .filter(|x| (x.position - true_eye.center).norm() > true_eye.radius)
            .count();
        let mut max_err = Vec3::zeros();
        let mut sum_err = Vec3::zeros();
        let mut min_radius = f64::INFINITY;
        let mut reached = 0;
        for (w, s) in self.waypoints.iter().zip(&self.knot_steps) {
            let Some(x) = executed.get(*s) else { break };
            let e = (x.position - w).abs();
            max_err = max_err.sup(&e);
            sum_err += e;
            min_radius = min_radius.min((x.position - fit.eye.center).norm());
            reached += 1;
        }
        let max_radius = executed
            .iter()
            .map(|x| (x.position - true_eye.center).norm())
            .fold(0.0, f64::max);
        VesselEntry {
            waypoints: self.waypoints.len(),
            hover_radius_mm: cost.eye.map_or(f64::NAN, |e| e.radius),
            max_tracking_error_mm: max_err,
            mean_tracking_error_mm: sum_err / reached.max(1) as f64,
            mean_sclera_mm: sclera.iter().sum::<f64>() / sclera.len().max(1) as f64,
            max_sclera_mm: sclera.iter().copied().fold(0.0, f64::max),
            penetrations,
            min_waypoint_radius_mm: min_radius,
            max_radius_mm: max_radius,
            solver_iterations: self.solve.iterations,
            converged: self.solve.converged,
        }
    }
}

/// Plans through all hover waypoints and executes the plan on the plant.
pub fn run_vessel_following(
    scenario: &Scenario,
    start: &ToolState,
    path: &VesselPath,
    fit: &FitResult,
    settings: &TaskSettings,
    schedule: &VesselSchedule,
) -> Result<(VesselOutcome, RunReport), TaskError> {
    let plan = plan_vessel(scenario, start, path, fit, settings, schedule)?;
    let mut sim = Simulator::new(*start, settings.solver.integration(&plan.cost), settings.limits)?;
    let mut executed = vec![*start];
    for u in &plan.planned.controls {
        sim.step(u)?;
        executed.push(sim.state);
    }

    let mut report = RunReport::empty(TaskKind::Vessel, settings.oracle.seed, settings, scenario);
    report.timing.sim_steps = sim.steps;
    report.timing.sim_time_s = sim.time();
    report.timing.replans = 1;
    report.timing.solver_iterations = plan.solve.iterations;
    report.vessel = Some(plan.entry(scenario, fit, &executed));
    Ok((
        VesselOutcome {
            waypoints: plan.waypoints,
            knot_steps: plan.knot_steps,
            planned: plan.planned,
            executed,
            solve: plan.solve,
        },
        report,
    ))
}
