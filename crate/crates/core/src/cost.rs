//! Penalized navigation cost: control effort, sclera (remote-centre) penalty,
//! retinal collision penalty and the terminal goal/zero-velocity term.
//!
//! Derivatives are taken in the tangent coordinates of [`crate::se3`]. Every
//! penalty is a squared residual; [`HessianMode::GaussNewton`] keeps only the
//! `JᵀJ` part while [`HessianMode::Exact`] adds the residual-curvature terms.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye::EyeGeometry;
use crate::se3::{
    hat, ActuatorLimits, ControlInput, ControlVector, Mat3, StateJacobian, TangentVector, ToolState, Vec3,
    CONTROL_DIM, P, PHI, V, W,
};

pub type TerminalGain = SMatrix<f64, 9, 9>;
pub type ControlGain = SMatrix<f64, CONTROL_DIM, CONTROL_DIM>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("tool tip coincides with the eye centre; collision direction undefined")]
    CenterSingularity,
    #[error("invalid cost parameters: {0}")]
    InvalidParams(&'static str),
}

/// Which projector multiplies `p_s − p` in the sclera residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScleraProjector {
    /// `I − r rᵀ`: the component of `p_s − p` orthogonal to the tool axis.
    #[default]
    Orthogonal,
    /// `I + r rᵀ`; does not vanish when the port lies on the tool axis.
    Literal,
}

impl ScleraProjector {
    fn sign(self) -> f64 {
        match self {
            Self::Orthogonal => -1.0,
            Self::Literal => 1.0,
        }
    }
}

/// Soft actuator bound: `weight·max(0, ‖u‖ − limit)²` per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorPenalty {
    pub limits: ActuatorLimits,
    pub weight: f64,
}

impl Default for ActuatorPenalty {
    fn default() -> Self {
        Self {
            limits: ActuatorLimits::default(),
            weight: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    /// Over the stacked error `[p − p_goal; v; ω]`.
    pub terminal_gain: TerminalGain,
    pub control_gain: ControlGain,
    pub sclera_weight: f64,
    pub collision_weight: f64,
    /// mm.
    pub collision_margin: f64,
    pub sclera_point: Vec3,
    pub eye: Option<EyeGeometry>,
    pub horizon: usize,
    pub dt: f64,
    pub sclera_projector: ScleraProjector,
    pub actuator: ActuatorPenalty,
}

impl Default for CostParams {
    fn default() -> Self {
        Self::with_gains(1e3, 1e2, 1e-3)
    }
}

impl CostParams {
    /// Defaults with the given position / velocity terminal gains and control gain.
    pub fn with_gains(position_gain: f64, velocity_gain: f64, control_gain: f64) -> Self {
        let mut terminal_gain = TerminalGain::zeros();
        for i in 0..3 {
            terminal_gain[(i, i)] = position_gain;
            terminal_gain[(3 + i, 3 + i)] = velocity_gain;
            terminal_gain[(6 + i, 6 + i)] = velocity_gain;
        }
        Self {
            terminal_gain,
            control_gain: ControlGain::identity() * control_gain,
            sclera_weight: 1e4,
            collision_weight: 1e4,
            collision_margin: 0.2,
            sclera_point: Vec3::zeros(),
            eye: None,
            horizon: 100,
            dt: 0.01,
            sclera_projector: ScleraProjector::Orthogonal,
            actuator: ActuatorPenalty::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let sym = |m: &dyn Fn(usize, usize) -> f64, n: usize| {
            (0..n).all(|i| (0..n).all(|j| (m(i, j) - m(j, i)).abs() <= 1e-12 * (1.0 + m(i, j).abs())))
        };
        if !sym(&|i, j| self.terminal_gain[(i, j)], 9) {
            return Err(CostError::InvalidParams("terminal gain must be symmetric"));
        }
        if self.terminal_gain.symmetric_eigenvalues().min() < -1e-12 {
            return Err(CostError::InvalidParams("terminal gain must be positive semidefinite"));
        }
        if !sym(&|i, j| self.control_gain[(i, j)], CONTROL_DIM) || self.control_gain.cholesky().is_none() {
            return Err(CostError::InvalidParams("control gain must be symmetric positive definite"));
        }
        if !(self.sclera_weight >= 0.0 && self.sclera_weight.is_finite()) {
            return Err(CostError::InvalidParams("sclera weight must be non-negative"));
        }
        if !(self.collision_weight >= 0.0 && self.collision_weight.is_finite()) {
            return Err(CostError::InvalidParams("collision weight must be non-negative"));
        }
        if !(self.collision_margin > 0.0 && self.collision_margin.is_finite()) {
            return Err(CostError::InvalidParams("collision margin must be positive"));
        }
        if !(self.actuator.weight >= 0.0) {
            return Err(CostError::InvalidParams("actuator weight must be non-negative"));
        }
        if self.horizon < 2 {
            return Err(CostError::InvalidParams("horizon must be at least 2 steps"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CostError::InvalidParams("dt must be positive"));
        }
        if let Some(eye) = &self.eye {
            if !(eye.radius > 0.0) {
                return Err(CostError::InvalidParams("eye radius must be positive"));
            }
        }
        Ok(())
    }
}

/// Position waypoint enforced as a quadratic cost on the state at `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub step: usize,
    pub position: Vec3,
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    #[default]
    GaussNewton,
    Exact,
}

/// Second-order model of a stage cost. The cross term `l_ux` vanishes for
/// every term in this cost, so it is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StageExpansion {
    pub value: f64,
    pub lx: TangentVector,
    pub lu: ControlVector,
    pub lxx: StateJacobian,
    pub luu: ControlGain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalExpansion {
    pub value: f64,
    pub lx: TangentVector,
    pub lxx: StateJacobian,
}

fn residual_with(x: &ToolState, p_s: &Vec3, projector: ScleraProjector) -> Vec3 {
    let a = p_s - x.position;
    let r = x.tool_axis();
    a + projector.sign() * r * r.dot(&a)
}

/// Component of `p_s − p` orthogonal to the tool axis.
pub fn sclera_residual(x: &ToolState, p_s: &Vec3) -> Vec3 {
    residual_with(x, p_s, ScleraProjector::Orthogonal)
}

pub fn sclera_residual_with(x: &ToolState, p_s: &Vec3, projector: ScleraProjector) -> Vec3 {
    residual_with(x, p_s, projector)
}

fn collision_penalty(p: &Vec3, eye: &EyeGeometry, margin: f64) -> Result<f64, CostError> {
    let n = (p - eye.center).norm();
    if n == 0.0 {
        return Err(CostError::CenterSingularity);
    }
    Ok(if n > eye.radius - margin {
        (n - eye.radius).powi(2)
    } else {
        0.0
    })
}

fn hinge(v: &Vec3, limit: f64) -> f64 {
    (v.norm() - limit).max(0.0).powi(2)
}

/// Integrand of the running cost:
/// `½uᵀR_u u + w_s‖s‖² + w_e·𝟙{‖d_c‖ > r−ε}·(‖d_c‖ − r)²`, plus the soft
/// actuator bound, which is zero whenever the controls are within limits.
pub fn stage_cost(x: &ToolState, u: &ControlInput, cp: &CostParams) -> Result<f64, CostError> {
    let uv = u.to_vector();
    let mut cost = 0.5 * uv.dot(&(cp.control_gain * uv));
    cost += cp.sclera_weight * residual_with(x, &cp.sclera_point, cp.sclera_projector).norm_squared();
    if let Some(eye) = &cp.eye {
        cost += cp.collision_weight * collision_penalty(&x.position, eye, cp.collision_margin)?;
    }
    let act = &cp.actuator;
    if act.weight > 0.0 {
        cost += act.weight * (hinge(&u.force, act.limits.max_force) + hinge(&u.torque, act.limits.max_torque));
    }
    Ok(cost)
}

/// `½eᵀP_f e` with `e = [p − p_goal; v; ω]`.
pub fn terminal_cost(x: &ToolState, cp: &CostParams, p_goal: &Vec3) -> f64 {
    let e = terminal_error(x, p_goal);
    0.5 * e.dot(&(cp.terminal_gain * e))
}

fn terminal_error(x: &ToolState, p_goal: &Vec3) -> SVector<f64, 9> {
    let mut e = SVector::<f64, 9>::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(x.position - p_goal));
    e.fixed_rows_mut::<3>(3).copy_from(&x.velocity);
    e.fixed_rows_mut::<3>(6).copy_from(&x.angular_velocity);
    e
}

/// Tangent slots of the terminal error components.
const TERMINAL_SLOTS: [usize; 3] = [P, V, W];

pub fn terminal_expansion(x: &ToolState, cp: &CostParams, p_goal: &Vec3) -> TerminalExpansion {
    let e = terminal_error(x, p_goal);
    let g = cp.terminal_gain * e;
    let mut lx = TangentVector::zeros();
    let mut lxx = StateJacobian::zeros();
    for (bi, &si) in TERMINAL_SLOTS.iter().enumerate() {
        lx.fixed_rows_mut::<3>(si).copy_from(&g.fixed_rows::<3>(3 * bi));
        for (bj, &sj) in TERMINAL_SLOTS.iter().enumerate() {
            lxx.fixed_view_mut::<3, 3>(si, sj)
                .copy_from(&cp.terminal_gain.fixed_view::<3, 3>(3 * bi, 3 * bj));
        }
    }
    TerminalExpansion {
        value: 0.5 * e.dot(&g),
        lx,
        lxx,
    }
}

/// Adds `½·gain·‖p − target‖²` to a value/gradient/Hessian triple.
pub fn add_knot(x: &ToolState, knot: &Knot, value: &mut f64, lx: &mut TangentVector, lxx: &mut StateJacobian) {
    let e = x.position - knot.position;
    *value += 0.5 * knot.gain * e.norm_squared();
    let mut g = lx.fixed_rows_mut::<3>(P);
    g += knot.gain * e;
    let mut h = lxx.fixed_view_mut::<3, 3>(P, P);
    h += knot.gain * Mat3::identity();
}

/// Gradient and Hessian of `weight·max(0, ‖v‖ − limit)²`; always PSD.
fn hinge_derivatives(v: &Vec3, limit: f64, weight: f64) -> (f64, Vec3, Mat3) {
    let n = v.norm();
    if n <= limit || weight == 0.0 {
        return (0.0, Vec3::zeros(), Mat3::zeros());
    }
    let dir = v / n;
    let excess = n - limit;
    let outer = dir * dir.transpose();
    let hess = 2.0 * weight * (outer + (excess / n) * (Mat3::identity() - outer));
    (weight * excess * excess, 2.0 * weight * excess * dir, hess)
}

pub fn stage_expansion(
    x: &ToolState,
    u: &ControlInput,
    cp: &CostParams,
    mode: HessianMode,
) -> Result<StageExpansion, CostError> {
    let uv = u.to_vector();
    let ru = cp.control_gain * uv;
    let mut out = StageExpansion {
        value: 0.5 * uv.dot(&ru),
        lx: TangentVector::zeros(),
        lu: ru,
        lxx: StateJacobian::zeros(),
        luu: cp.control_gain,
    };

    if cp.sclera_weight > 0.0 {
        add_sclera(x, cp, mode, &mut out);
    }
    if let Some(eye) = &cp.eye {
        add_collision(x, eye, cp, mode, &mut out)?;
    }
    let act = &cp.actuator;
    for (offset, v, limit) in [(0, u.force, act.limits.max_force), (3, u.torque, act.limits.max_torque)] {
        let (value, grad, hess) = hinge_derivatives(&v, limit, act.weight);
        out.value += value;
        let mut g = out.lu.fixed_rows_mut::<3>(offset);
        g += grad;
        let mut h = out.luu.fixed_view_mut::<3, 3>(offset, offset);
        h += hess;
    }
    Ok(out)
}

fn add_sclera(x: &ToolState, cp: &CostParams, mode: HessianMode, out: &mut StageExpansion) {
    let w = cp.sclera_weight;
    let kappa = cp.sclera_projector.sign();
    let a = cp.sclera_point - x.position;
    let r = x.tool_axis();
    let ra = r.dot(&a);
    let s = a + kappa * r * ra;

    // ∂r/∂δφ for r = R·exp(δφ^)·e_x.
    let g_rot = -x.orientation * hat(&Vec3::x());
    let ds_dp = -(Mat3::identity() + kappa * r * r.transpose());
    let ds_dr = kappa * (ra * Mat3::identity() + r * a.transpose());
    let ds_dphi = ds_dr * g_rot;

    out.value += w * s.norm_squared();
    let mut gp = out.lx.fixed_rows_mut::<3>(P);
    gp += 2.0 * w * ds_dp.transpose() * s;
    let mut gphi = out.lx.fixed_rows_mut::<3>(PHI);
    gphi += 2.0 * w * ds_dphi.transpose() * s;

    let mut hpp = ds_dp.transpose() * ds_dp;
    let mut hpphi = ds_dp.transpose() * ds_dphi;
    let mut hphiphi = ds_dphi.transpose() * ds_dphi;

    if mode == HessianMode::Exact {
        // Curvature of h = λᵀs with λ = s held fixed.
        let lambda = s;
        let lr = lambda.dot(&r);
        let d2_da_dr = kappa * (r * lambda.transpose() + lr * Mat3::identity());
        let d2_dr2 = kappa * (lambda * a.transpose() + a * lambda.transpose());
        let dh_dr = kappa * (lambda * a.dot(&r) + a * lr);
        let b = x.orientation.transpose() * dh_dr;
        let e = Vec3::x();
        let second_order = 0.5 * (b * e.transpose() + e * b.transpose()) - b.dot(&e) * Mat3::identity();
        hpphi += -d2_da_dr * g_rot;
        hphiphi += g_rot.transpose() * d2_dr2 * g_rot + second_order;
    }
    hpp *= 2.0 * w;
    hpphi *= 2.0 * w;
    hphiphi *= 2.0 * w;

    let mut block = out.lxx.fixed_view_mut::<3, 3>(P, P);
    block += hpp;
    let mut block = out.lxx.fixed_view_mut::<3, 3>(P, PHI);
    block += hpphi;
    let mut block = out.lxx.fixed_view_mut::<3, 3>(PHI, P);
    block += hpphi.transpose();
    let mut block = out.lxx.fixed_view_mut::<3, 3>(PHI, PHI);
    block += 0.5 * (hphiphi + hphiphi.transpose());
}

fn add_collision(
    x: &ToolState,
    eye: &EyeGeometry,
    cp: &CostParams,
    mode: HessianMode,
    out: &mut StageExpansion,
) -> Result<(), CostError> {
    let d = x.position - eye.center;
    let n = d.norm();
    if n == 0.0 {
        return Err(CostError::CenterSingularity);
    }
    if n <= eye.radius - cp.collision_margin {
        return Ok(());
    }
    let w = cp.collision_weight;
    let dir = d / n;
    let outer = dir * dir.transpose();
    let gap = n - eye.radius;
    out.value += w * gap * gap;
    let mut g = out.lx.fixed_rows_mut::<3>(P);
    g += 2.0 * w * gap * dir;
    let tangential = Mat3::identity() - outer;
    let hess = match mode {
        // Residual d − r·d̂ has Jacobian d̂d̂ᵀ + (1 − r/n)(I − d̂d̂ᵀ).
        HessianMode::GaussNewton => 2.0 * w * (outer + (gap / n).powi(2) * tangential),
        HessianMode::Exact => 2.0 * w * (outer + (gap / n) * tangential),
    };
    let mut h = out.lxx.fixed_view_mut::<3, 3>(P, P);
    h += hess;
    Ok(())
}
