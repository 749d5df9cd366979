//! Iterative LQR (Gauss-Newton DDP) over the rigid-body tool model.
//!
//! Each iteration linearizes the dynamics and expands the cost around the
//! current nominal trajectory, runs a Riccati-style backward pass with
//! Levenberg regularization on `Q_uu`, then a forward pass with backtracking
//! over `α ∈ {1, ½, …, 2⁻¹⁰}`. A forward pass is accepted only if it lowers the
//! total cost.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    add_knot, stage_cost, stage_expansion, terminal_cost, terminal_expansion, CostError, CostParams, HessianMode,
    Knot,
};
use crate::se3::{
    linearize, rollout, step_unchecked, ControlInput, ControlJacobian, ControlVector, IntegrationConfig,
    KinematicsError, StateJacobian, TangentVector, ToolState, Vec3, CONTROL_DIM, TANGENT_DIM,
};

type FeedbackGain = SMatrix<f64, CONTROL_DIM, TANGENT_DIM>;
type ControlHessian = SMatrix<f64, CONTROL_DIM, CONTROL_DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdpError {
    #[error("rollout produced a non-finite cost")]
    NonFiniteCost,
    #[error("backward pass failed at the regularization ceiling")]
    RegularizationCeiling,
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve is converged.
    pub tolerance: f64,
    pub mu_initial: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_factor: f64,
    /// Number of backtracking halvings after the full step.
    pub line_search_halvings: u32,
    pub hessian: HessianMode,
}

impl Default for DdpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            mu_initial: 0.0,
            mu_min: 1e-6,
            mu_max: 1e8,
            mu_factor: 10.0,
            line_search_halvings: 10,
            hessian: HessianMode::GaussNewton,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ToolState>,
    pub controls: Vec<ControlInput>,
    /// Per-step running cost (already multiplied by `dt`, knots included).
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &ToolState {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Largest position deviation between the stored states and a re-rollout
    /// of the stored controls.
    pub fn consistency_error(&self, cfg: &IntegrationConfig) -> Result<f64, KinematicsError> {
        let replay = rollout(&self.states[0], &self.controls, cfg)?;
        Ok(replay
            .iter()
            .zip(&self.states)
            .map(|(a, b)| (a.position - b.position).amax())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
    pub cost_history: Vec<f64>,
    pub regularization_final: f64,
}

/// What to optimize: reach `goal` at the final step, pass the knots on the way.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub goal: Vec3,
    pub params: &'a CostParams,
    pub knots: &'a [Knot],
}

impl<'a> Objective<'a> {
    pub fn reach(goal: Vec3, params: &'a CostParams) -> Self {
        Self {
            goal,
            params,
            knots: &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdpSolver {
    /// Mass and inertia; `dt` is taken from the cost parameters.
    pub model: IntegrationConfig,
    pub options: DdpOptions,
}

struct Gains {
    feedforward: Vec<ControlVector>,
    feedback: Vec<FeedbackGain>,
    /// Linear and quadratic coefficients of the expected decrease in `α`.
    expected: (f64, f64),
}

struct Evaluated {
    states: Vec<ToolState>,
    controls: Vec<ControlInput>,
    stage_costs: Vec<f64>,
    total: f64,
}

impl DdpSolver {
    pub fn new(model: IntegrationConfig, options: DdpOptions) -> Self {
        Self { model, options }
    }

    pub fn integration(&self, cp: &CostParams) -> IntegrationConfig {
        IntegrationConfig {
            dt: cp.dt,
            ..self.model
        }
    }

    pub fn solve(
        &self,
        x0: &ToolState,
        objective: &Objective<'_>,
        warm_start: Option<&[ControlInput]>,
    ) -> Result<(Trajectory, SolveReport), DdpError> {
        let cp = objective.params;
        cp.validate()?;
        let cfg = self.integration(cp);
        cfg.validate()?;
        if !x0.is_finite() {
            return Err(KinematicsError::InvalidState("non-finite initial state").into());
        }
        let n = cp.horizon;
        let inertia_inv = cfg.inertia_inverse();
        let knots = knot_table(objective.knots, n);

        let mut controls = vec![ControlInput::zero(); n];
        if let Some(warm) = warm_start {
            for (slot, u) in controls.iter_mut().zip(warm) {
                *slot = *u;
            }
        }
        let states = simulate(x0, &controls, &cfg, &inertia_inv);
        let mut current = evaluate(states, controls, objective, &knots)?;
        if !current.total.is_finite() {
            return Err(DdpError::NonFiniteCost);
        }

        let opts = &self.options;
        let mut history = vec![current.total];
        let mut mu = opts.mu_initial;
        let mut converged = false;
        let mut iterations = 0;

        while iterations < opts.max_iterations {
            iterations += 1;
            let (lin, stage, terminal) = self.expand(&current, objective, &knots, &cfg, &inertia_inv)?;

            let gains = loop {
                match backward_pass(&lin, &stage, &terminal, mu) {
                    Some(g) => break g,
                    None => {
                        mu = (mu * opts.mu_factor).max(opts.mu_min);
                        if mu > opts.mu_max {
                            return Err(DdpError::RegularizationCeiling);
                        }
                    }
                }
            };

            let expected_full = -(gains.expected.0 + gains.expected.1);
            if expected_full.abs() <= opts.tolerance * current.total.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }

            let mut accepted = None;
            let mut alpha = 1.0;
            for _ in 0..=opts.line_search_halvings {
                let (states, controls) = forward_pass(&current, &gains, alpha, &cfg, &inertia_inv);
                if let Ok(candidate) = evaluate(states, controls, objective, &knots) {
                    if candidate.total.is_finite() && candidate.total < current.total {
                        accepted = Some(candidate);
                        break;
                    }
                }
                alpha *= 0.5;
            }

            match accepted {
                Some(next) => {
                    let decrease = (current.total - next.total) / current.total.abs().max(f64::MIN_POSITIVE);
                    current = next;
                    history.push(current.total);
                    mu /= opts.mu_factor;
                    if mu < opts.mu_min {
                        mu = 0.0;
                    }
                    if decrease < opts.tolerance {
                        converged = true;
                        break;
                    }
                }
                None => {
                    mu = (mu * opts.mu_factor).max(opts.mu_min);
                    if mu > opts.mu_max {
                        break;
                    }
                }
            }
        }

        let report = SolveReport {
            iterations,
            converged,
            final_cost: current.total,
            cost_history: history,
            regularization_final: mu,
        };
        let trajectory = Trajectory {
            states: current.states,
            controls: current.controls,
            stage_costs: current.stage_costs,
            total_cost: current.total,
        };
        Ok((trajectory, report))
    }

    #[allow(clippy::type_complexity)]
    fn expand(
        &self,
        nominal: &Evaluated,
        objective: &Objective<'_>,
        knots: &[Option<Knot>],
        cfg: &IntegrationConfig,
        inertia_inv: &crate::se3::Mat3,
    ) -> Result<
        (
            Vec<(StateJacobian, ControlJacobian)>,
            Vec<(TangentVector, ControlVector, StateJacobian, ControlHessian)>,
            (TangentVector, StateJacobian),
        ),
        DdpError,
    > {
        let cp = objective.params;
        let n = nominal.controls.len();
        let mut lin = Vec::with_capacity(n);
        let mut stage = Vec::with_capacity(n);
        for k in 0..n {
            let x = &nominal.states[k];
            let u = &nominal.controls[k];
            lin.push(linearize(x, u, cfg, inertia_inv));
            let e = stage_expansion(x, u, cp, self.options.hessian)?;
            let mut lx = e.lx * cp.dt;
            let mut lxx = e.lxx * cp.dt;
            if let Some(knot) = &knots[k] {
                let mut unused = 0.0;
                add_knot(x, knot, &mut unused, &mut lx, &mut lxx);
            }
            stage.push((lx, e.lu * cp.dt, lxx, e.luu * cp.dt));
        }
        let xn = &nominal.states[n];
        let t = terminal_expansion(xn, cp, &objective.goal);
        let (mut lx, mut lxx) = (t.lx, t.lxx);
        if let Some(knot) = &knots[n] {
            let mut unused = 0.0;
            add_knot(xn, knot, &mut unused, &mut lx, &mut lxx);
        }
        Ok((lin, stage, (lx, lxx)))
    }
}

fn knot_table(knots: &[Knot], horizon: usize) -> Vec<Option<Knot>> {
    let mut table = vec![None; horizon + 1];
    for knot in knots {
        if knot.step <= horizon {
            table[knot.step] = Some(*knot);
        }
    }
    table
}

fn simulate(
    x0: &ToolState,
    controls: &[ControlInput],
    cfg: &IntegrationConfig,
    inertia_inv: &crate::se3::Mat3,
) -> Vec<ToolState> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = step_unchecked(states.last().unwrap(), u, cfg, inertia_inv);
        states.push(next);
    }
    states
}

fn evaluate(
    states: Vec<ToolState>,
    controls: Vec<ControlInput>,
    objective: &Objective<'_>,
    knots: &[Option<Knot>],
) -> Result<Evaluated, DdpError> {
    let cp = objective.params;
    let n = controls.len();
    let mut stage_costs = Vec::with_capacity(n);
    let mut total = 0.0;
    for k in 0..n {
        let mut c = cp.dt * stage_cost(&states[k], &controls[k], cp)?;
        if let Some(knot) = &knots[k] {
            c += 0.5 * knot.gain * (states[k].position - knot.position).norm_squared();
        }
        stage_costs.push(c);
        total += c;
    }
    total += terminal_cost(&states[n], cp, &objective.goal);
    if let Some(knot) = &knots[n] {
        total += 0.5 * knot.gain * (states[n].position - knot.position).norm_squared();
    }
    Ok(Evaluated {
        states,
        controls,
        stage_costs,
        total,
    })
}

fn backward_pass(
    lin: &[(StateJacobian, ControlJacobian)],
    stage: &[(TangentVector, ControlVector, StateJacobian, ControlHessian)],
    terminal: &(TangentVector, StateJacobian),
    mu: f64,
) -> Option<Gains> {
    let n = lin.len();
    let mut vx = terminal.0;
    let mut vxx = terminal.1;
    let mut feedforward = vec![ControlVector::zeros(); n];
    let mut feedback = vec![FeedbackGain::zeros(); n];
    let (mut dv1, mut dv2) = (0.0, 0.0);

    for k in (0..n).rev() {
        let (a, b) = &lin[k];
        let (lx, lu, lxx, luu) = &stage[k];
        let vxx_a = vxx * a;
        let vxx_b = vxx * b;
        let qx = lx + a.tr_mul(&vx);
        let qu = lu + b.tr_mul(&vx);
        let qxx = lxx + a.tr_mul(&vxx_a);
        let qux: FeedbackGain = b.tr_mul(&vxx_a);
        let quu = luu + b.tr_mul(&vxx_b);
        let quu = 0.5 * (quu + quu.transpose());
        let reg = quu + ControlHessian::identity() * mu;
        let chol = reg.cholesky()?;
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);
        if !kff.iter().chain(kfb.iter()).all(|v| v.is_finite()) {
            return None;
        }
        dv1 += kff.dot(&qu);
        dv2 += 0.5 * kff.dot(&(quu * kff));
        vx = qx + kfb.tr_mul(&(quu * kff)) + kfb.tr_mul(&qu) + qux.tr_mul(&kff);
        let v = qxx + kfb.tr_mul(&(quu * kfb)) + kfb.tr_mul(&qux) + qux.tr_mul(&kfb);
        vxx = 0.5 * (v + v.transpose());
        feedforward[k] = kff;
        feedback[k] = kfb;
    }
    Some(Gains {
        feedforward,
        feedback,
        expected: (dv1, dv2),
    })
}

fn forward_pass(
    nominal: &Evaluated,
    gains: &Gains,
    alpha: f64,
    cfg: &IntegrationConfig,
    inertia_inv: &crate::se3::Mat3,
) -> (Vec<ToolState>, Vec<ControlInput>) {
    let n = nominal.controls.len();
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut x = nominal.states[0];
    states.push(x);
    for k in 0..n {
        let dx: SVector<f64, TANGENT_DIM> = nominal.states[k].local(&x);
        let u = nominal.controls[k].to_vector() + alpha * gains.feedforward[k] + gains.feedback[k] * dx;
        let u = ControlInput::from_vector(&u);
        x = step_unchecked(&x, &u, cfg, inertia_inv);
        controls.push(u);
        states.push(x);
    }
    (states, controls)
}

/// Solves with the unit-mass, unit-inertia tool model and default options.
pub fn ddp_solve(
    x0: &ToolState,
    p_goal: &Vec3,
    cp: &CostParams,
    warm_start: Option<&[ControlInput]>,
) -> Result<(Trajectory, SolveReport), DdpError> {
    DdpSolver::default().solve(x0, &Objective::reach(*p_goal, cp), warm_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::sclera_residual;
    use crate::eye::EyeGeometry;
    use crate::se3::Mat3;

    fn port() -> Vec3 {
        Vec3::new(-9.33, 0.0, 9.33)
    }

    fn mean_sclera(traj: &Trajectory, p_s: &Vec3) -> f64 {
        traj.states.iter().map(|x| sclera_residual(x, p_s).norm()).sum::<f64>() / traj.states.len() as f64
    }

    #[test]
    fn start_at_goal_needs_no_control() {
        let cp = CostParams {
            sclera_point: port(),
            ..CostParams::default()
        };
        let goal = Vec3::new(0.0, 0.0, -11.0);
        let x0 = ToolState::through_port(goal, cp.sclera_point);
        let (traj, report) = ddp_solve(&x0, &goal, &cp, None).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert!(traj.controls.iter().all(|u| u.to_vector().amax() < 1e-9));
    }

    #[test]
    fn reaches_goal_with_zero_velocity() {
        let cp = CostParams {
            sclera_point: port(),
            ..CostParams::default()
        };
        let x0 = ToolState::through_port(Vec3::new(0.0, 0.0, -9.7), cp.sclera_point);
        let goal = Vec3::new(0.4, -0.3, -10.5);
        let (traj, report) = ddp_solve(&x0, &goal, &cp, None).unwrap();
        assert!(report.converged, "{report:?}");
        let xf = traj.final_state();
        assert!((xf.position - goal).norm() < 1e-2, "{:?}", xf.position - goal);
        assert!(xf.velocity.norm() < 0.1);
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        let cfg = IntegrationConfig::with_dt(cp.dt);
        assert!(traj.consistency_error(&cfg).unwrap() <= 1e-9);
        assert_eq!(traj.states.len(), cp.horizon + 1);
        assert_eq!(traj.stage_costs.len(), cp.horizon);
    }

    #[test]
    fn high_sclera_weight_keeps_axis_on_port() {
        let base = CostParams {
            sclera_point: port(),
            ..CostParams::default()
        };
        let eye = EyeGeometry::default();
        let x0 = ToolState::through_port(Vec3::new(0.0, 0.0, -9.7), base.sclera_point);
        let goal = eye.project(&Vec3::new(1.0, 1.5, -12.0)).unwrap();

        let stiff = CostParams {
            sclera_weight: 1e4,
            ..base.clone()
        };
        let (traj, _) = ddp_solve(&x0, &goal, &stiff, None).unwrap();
        let with = mean_sclera(&traj, &base.sclera_point);

        let loose = CostParams {
            sclera_weight: 0.0,
            ..base.clone()
        };
        let (traj, _) = ddp_solve(&x0, &goal, &loose, None).unwrap();
        let without = mean_sclera(&traj, &base.sclera_point);
        assert!(with <= 0.1, "{with}");
        assert!(without > 0.1, "{without}");
    }

    #[test]
    fn sclera_residual_non_increasing_in_weight() {
        let x0 = ToolState::through_port(Vec3::new(0.0, 0.0, -9.7), port());
        let goal = Vec3::new(-1.0, 1.0, -12.5);
        let residuals: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&w| {
                let cp = CostParams {
                    sclera_point: port(),
                    sclera_weight: w,
                    ..CostParams::default()
                };
                let (traj, _) = ddp_solve(&x0, &goal, &cp, None).unwrap();
                mean_sclera(&traj, &port())
            })
            .collect();
        assert!(residuals.windows(2).all(|w| w[1] <= w[0]), "{residuals:?}");
    }

    #[test]
    fn warm_start_from_solution_converges_immediately() {
        let cp = CostParams {
            sclera_point: port(),
            ..CostParams::default()
        };
        let x0 = ToolState::through_port(Vec3::new(0.0, 0.0, -9.7), cp.sclera_point);
        let goal = Vec3::new(0.2, 0.2, -10.2);
        let (traj, _) = ddp_solve(&x0, &goal, &cp, None).unwrap();
        let (again, report) = ddp_solve(&x0, &goal, &cp, Some(&traj.controls)).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 3);
        assert!(again.total_cost <= traj.total_cost);
    }

    #[test]
    fn knots_pull_the_path_through_waypoints() {
        let cp = CostParams {
            sclera_point: port(),
            horizon: 120,
            ..CostParams::default()
        };
        let x0 = ToolState::through_port(Vec3::new(0.0, 0.0, -10.0), cp.sclera_point);
        let via = Vec3::new(0.5, 0.5, -10.5);
        let goal = Vec3::new(1.0, 0.0, -10.8);
        let knots = [Knot {
            step: 60,
            position: via,
            gain: 1e3,
        }];
        let solver = DdpSolver::default();
        let (traj, report) = solver
            .solve(&x0, &Objective { goal, params: &cp, knots: &knots }, None)
            .unwrap();
        assert!(report.converged);
        assert!((traj.states[60].position - via).amax() < 0.02);
        assert!((traj.final_state().position - goal).amax() < 0.02);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let cp = CostParams {
            collision_margin: -1.0,
            ..CostParams::default()
        };
        let x0 = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        assert!(matches!(
            ddp_solve(&x0, &Vec3::zeros(), &cp, None),
            Err(DdpError::Cost(CostError::InvalidParams(_)))
        ));
    }

    #[test]
    fn center_singularity_propagates() {
        let cp = CostParams {
            eye: Some(EyeGeometry::default()),
            ..CostParams::default()
        };
        let x0 = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        assert_eq!(
            ddp_solve(&x0, &Vec3::new(0.0, 0.0, -5.0), &cp, None).unwrap_err(),
            DdpError::Cost(CostError::CenterSingularity)
        );
    }
}
