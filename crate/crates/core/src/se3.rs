//! Rigid-body state of the tool end-effector and its discrete-time dynamics.
//!
//! The state is `x = (p, R, v, ω)`: tip position and translational velocity in
//! the robot base frame, orientation as a rotation matrix, and angular velocity
//! in the end-effector frame. The tool axis is the first column of `R`.
//!
//! Linearizations are expressed in local tangent coordinates
//! `δx = (δp, δφ, δv, δω) ∈ ℝ¹²` with the rotation perturbed on the right,
//! `R ⊕ δφ = R·exp(δφ^)`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const TANGENT_DIM: usize = 12;
pub const CONTROL_DIM: usize = 6;

pub type TangentVector = SVector<f64, TANGENT_DIM>;
pub type ControlVector = SVector<f64, CONTROL_DIM>;
pub type StateJacobian = SMatrix<f64, TANGENT_DIM, TANGENT_DIM>;
pub type ControlJacobian = SMatrix<f64, TANGENT_DIM, CONTROL_DIM>;

/// Offsets of the tangent blocks.
pub const P: usize = 0;
pub const PHI: usize = 3;
pub const V: usize = 6;
pub const W: usize = 9;

const SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid state: {0}")]
    InvalidState(&'static str),
    #[error("invalid integration config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    /// Tip position, mm, base frame.
    pub position: Vec3,
    pub orientation: Mat3,
    /// mm/s, base frame.
    pub velocity: Vec3,
    /// rad/s, end-effector frame.
    pub angular_velocity: Vec3,
}

impl ToolState {
    pub fn at_rest(position: Vec3, orientation: Mat3) -> Self {
        Self {
            position,
            orientation,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    /// Tool at rest with its axis pointing from `port` through `tip`.
    ///
    /// The second axis is the component of base `+y` orthogonal to the tool
    /// axis (base `+x` when the axis is vertical-ish in `y`).
    pub fn through_port(tip: Vec3, port: Vec3) -> Self {
        Self::at_rest(tip, frame_from_axis(tip - port))
    }

    /// First column of the orientation.
    pub fn tool_axis(&self) -> Vec3 {
        self.orientation.column(0).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// Max-norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.orientation.transpose() * self.orientation - Mat3::identity()).amax()
    }

    /// `x ⊕ δ`.
    pub fn retract(&self, delta: &TangentVector) -> Self {
        Self {
            position: self.position + delta.fixed_rows::<3>(P),
            orientation: self.orientation * so3_exp(&delta.fixed_rows::<3>(PHI).into_owned()),
            velocity: self.velocity + delta.fixed_rows::<3>(V),
            angular_velocity: self.angular_velocity + delta.fixed_rows::<3>(W),
        }
    }

    /// `other ⊖ self`, the tangent vector taking `self` to `other`.
    pub fn local(&self, other: &Self) -> TangentVector {
        let mut d = TangentVector::zeros();
        d.fixed_rows_mut::<3>(P)
            .copy_from(&(other.position - self.position));
        d.fixed_rows_mut::<3>(PHI)
            .copy_from(&so3_log(&(self.orientation.transpose() * other.orientation)));
        d.fixed_rows_mut::<3>(V)
            .copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(W)
            .copy_from(&(other.angular_velocity - self.angular_velocity));
        d
    }
}

/// Force and torque, both in the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub force: Vec3,
    pub torque: Vec3,
}

impl ControlInput {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(u: &ControlVector) -> Self {
        Self {
            force: u.fixed_rows::<3>(0).into_owned(),
            torque: u.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> ControlVector {
        let mut u = ControlVector::zeros();
        u.fixed_rows_mut::<3>(0).copy_from(&self.force);
        u.fixed_rows_mut::<3>(3).copy_from(&self.torque);
        u
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }

    /// Scales force and torque independently so that neither exceeds its limit.
    pub fn saturated(&self, limits: &ActuatorLimits) -> Self {
        Self {
            force: clamp_norm(self.force, limits.max_force),
            torque: clamp_norm(self.torque, limits.max_torque),
        }
    }

    pub fn within(&self, limits: &ActuatorLimits) -> bool {
        self.force.norm() <= limits.max_force && self.torque.norm() <= limits.max_torque
    }
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorLimits {
    pub max_force: f64,
    pub max_torque: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            max_force: 10.0,
            max_torque: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Seconds.
    pub dt: f64,
    pub mass: f64,
    pub inertia: Mat3,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            mass: 1.0,
            inertia: Mat3::identity(),
        }
    }
}

impl IntegrationConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(KinematicsError::InvalidConfig("dt must be positive"));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(KinematicsError::InvalidConfig("mass must be positive"));
        }
        let symmetric = (self.inertia - self.inertia.transpose()).amax() <= 1e-12 * self.inertia.amax();
        if !symmetric || self.inertia.cholesky().is_none() {
            return Err(KinematicsError::InvalidConfig("inertia must be symmetric positive definite"));
        }
        Ok(())
    }

    pub fn inertia_inverse(&self) -> Mat3 {
        self.inertia
            .try_inverse()
            .expect("inertia is validated as positive definite")
    }
}

/// Skew-symmetric matrix with `hat(a) * b == a × b`.
pub fn hat(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Exponential map of so(3) (Rodrigues), with a second-order series for tiny angles.
pub fn so3_exp(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < SERIES_THRESHOLD {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + a * k + b * k * k
}

/// Logarithm of a rotation matrix, returning the rotation vector.
pub fn so3_log(r: &Mat3) -> Vec3 {
    // atan2 keeps full precision at small angles, where acos of the trace does not.
    let s = 0.5 * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let c = 0.5 * (r.trace() - 1.0);
    let sin = s.norm();
    let theta = sin.atan2(c);
    if theta > 3.0 {
        return nalgebra::Rotation3::from_matrix_unchecked(*r).scaled_axis();
    }
    if sin < 1e-12 {
        return s;
    }
    s * (theta / sin)
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ)·exp(J_r(φ)·δ)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = hat(phi);
    if theta < 1e-6 {
        return Mat3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    Mat3::identity() - ((1.0 - theta.cos()) / t2) * k + ((theta - theta.sin()) / (t2 * theta)) * k * k
}

/// One Newton step of the polar decomposition, `R ← ½R(3I − RᵀR)`.
fn reorthonormalize(r: &Mat3) -> Mat3 {
    0.5 * r * (3.0 * Mat3::identity() - r.transpose() * r)
}

/// Orientation whose first column is `axis` (normalized).
pub fn frame_from_axis(axis: Vec3) -> Mat3 {
    let x = axis.normalize();
    let hint = if x.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
    let y = (hint - x * x.dot(&hint)).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

/// One semi-implicit Euler step.
pub fn step_dynamics(
    x: &ToolState,
    u: &ControlInput,
    cfg: &IntegrationConfig,
) -> Result<ToolState, KinematicsError> {
    if !x.is_finite() {
        return Err(KinematicsError::InvalidState("non-finite state"));
    }
    if !u.is_finite() {
        return Err(KinematicsError::InvalidState("non-finite control"));
    }
    cfg.validate()?;
    Ok(step_unchecked(x, u, cfg, &cfg.inertia_inverse()))
}

pub(crate) fn step_unchecked(
    x: &ToolState,
    u: &ControlInput,
    cfg: &IntegrationConfig,
    inertia_inv: &Mat3,
) -> ToolState {
    let dt = cfg.dt;
    let velocity = x.velocity + (dt / cfg.mass) * (x.orientation * u.force);
    let position = x.position + dt * velocity;
    let w = x.angular_velocity;
    let angular_velocity = w + dt * inertia_inv * (u.torque - w.cross(&(cfg.inertia * w)));
    let orientation = reorthonormalize(&(x.orientation * so3_exp(&(dt * angular_velocity))));
    ToolState {
        position,
        orientation,
        velocity,
        angular_velocity,
    }
}

/// Forward simulation; the result has `controls.len() + 1` states.
pub fn rollout(
    x0: &ToolState,
    controls: &[ControlInput],
    cfg: &IntegrationConfig,
) -> Result<Vec<ToolState>, KinematicsError> {
    if controls.is_empty() {
        return Err(KinematicsError::InvalidState("empty control sequence"));
    }
    cfg.validate()?;
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    for u in controls {
        let next = step_dynamics(states.last().unwrap(), u, cfg)?;
        states.push(next);
    }
    Ok(states)
}

/// Jacobians of [`step_dynamics`] in tangent coordinates, `δx' ≈ A δx + B δu`.
pub fn linearize(
    x: &ToolState,
    u: &ControlInput,
    cfg: &IntegrationConfig,
    inertia_inv: &Mat3,
) -> (StateJacobian, ControlJacobian) {
    let dt = cfg.dt;
    let r = x.orientation;
    let w = x.angular_velocity;
    let inertia = cfg.inertia;

    let dw_dw = Mat3::identity() - dt * inertia_inv * (hat(&w) * inertia - hat(&(inertia * w)));
    let dw_du = dt * inertia_inv;
    let w_next = w + dt * inertia_inv * (u.torque - w.cross(&(inertia * w)));
    let step_rot = so3_exp(&(dt * w_next));
    let jr = right_jacobian(&(dt * w_next));

    let dv_dphi = -(dt / cfg.mass) * r * hat(&u.force);
    let dv_du = (dt / cfg.mass) * r;

    let mut a = StateJacobian::zeros();
    let mut b = ControlJacobian::zeros();

    a.fixed_view_mut::<3, 3>(P, P).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(P, PHI).copy_from(&(dt * dv_dphi));
    a.fixed_view_mut::<3, 3>(P, V).copy_from(&(dt * Mat3::identity()));
    b.fixed_view_mut::<3, 3>(P, 0).copy_from(&(dt * dv_du));

    a.fixed_view_mut::<3, 3>(PHI, PHI).copy_from(&step_rot.transpose());
    a.fixed_view_mut::<3, 3>(PHI, W).copy_from(&(dt * jr * dw_dw));
    b.fixed_view_mut::<3, 3>(PHI, 3).copy_from(&(dt * jr * dw_du));

    a.fixed_view_mut::<3, 3>(V, PHI).copy_from(&dv_dphi);
    a.fixed_view_mut::<3, 3>(V, V).copy_from(&Mat3::identity());
    b.fixed_view_mut::<3, 3>(V, 0).copy_from(&dv_du);

    a.fixed_view_mut::<3, 3>(W, W).copy_from(&dw_dw);
    b.fixed_view_mut::<3, 3>(W, 3).copy_from(&dw_du);

    (a, b)
}

/// Convenience wrapper around [`linearize`] that inverts the inertia itself.
pub fn dynamics_jacobians(
    x: &ToolState,
    u: &ControlInput,
    cfg: &IntegrationConfig,
) -> (StateJacobian, ControlJacobian) {
    linearize(x, u, cfg, &cfg.inertia_inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_rotation(a: f64, b: f64, c: f64) -> Mat3 {
        so3_exp(&Vec3::new(a, b, c))
    }

    #[test]
    fn resting_state_is_a_fixed_point() {
        let x = ToolState::at_rest(Vec3::new(1.0, -2.0, 3.0), random_rotation(0.3, -0.2, 1.1));
        let cfg = IntegrationConfig::default();
        let next = step_dynamics(&x, &ControlInput::zero(), &cfg).unwrap();
        assert!((next.position - x.position).amax() < 1e-15);
        assert!((next.orientation - x.orientation).amax() < 1e-14);
        assert_eq!(next.velocity, Vec3::zeros());
        assert_eq!(next.angular_velocity, Vec3::zeros());
    }

    #[test]
    fn pure_drift_moves_position() {
        let mut x = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        x.velocity = Vec3::new(1.0, 0.0, 0.0);
        let cfg = IntegrationConfig::with_dt(0.1);
        let next = step_dynamics(&x, &ControlInput::zero(), &cfg).unwrap();
        assert!((next.position - Vec3::new(0.1, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn constant_force_matches_discrete_double_integrator() {
        let cfg = IntegrationConfig {
            dt: 0.02,
            mass: 2.0,
            inertia: Mat3::identity(),
        };
        let u = ControlInput {
            force: Vec3::new(0.6, -1.0, 0.25),
            torque: Vec3::zeros(),
        };
        let n = 37;
        let states = rollout(&ToolState::at_rest(Vec3::zeros(), Mat3::identity()), &vec![u; n], &cfg).unwrap();
        let accel = u.force / cfg.mass;
        for (k, s) in states.iter().enumerate() {
            let k = k as f64;
            // v_k = k·dt·a, p_k = dt²·a·k(k+1)/2
            let v = k * cfg.dt * accel;
            let p = cfg.dt * cfg.dt * accel * (k * (k + 1.0) / 2.0);
            assert!((s.velocity - v).amax() < 1e-13);
            assert!((s.position - p).amax() < 1e-13);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = so3_exp(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        assert!((r * Vec3::x() - Vec3::y()).amax() < 1e-15);
    }

    fn series_exp(phi: &Vec3) -> Mat3 {
        let k = hat(phi);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..40 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    proptest! {
        #[test]
        fn exp_matches_power_series(a in -1.5f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5) {
            let phi = Vec3::new(a, b, c);
            prop_assert!((so3_exp(&phi) - series_exp(&phi)).amax() < 1e-12);
        }

        #[test]
        fn log_inverts_exp(a in -1.5f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5) {
            let phi = Vec3::new(a, b, c);
            prop_assert!((so3_log(&so3_exp(&phi)) - phi).amax() < 1e-12);
        }

        #[test]
        fn retract_then_local_round_trips(d in proptest::collection::vec(-0.5f64..0.5, 12)) {
            let x = ToolState::through_port(Vec3::new(0.5, 1.0, -9.0), Vec3::new(-9.0, 0.0, 9.0));
            let delta = TangentVector::from_column_slice(&d);
            prop_assert!((x.local(&x.retract(&delta)) - delta).amax() < 1e-12);
        }
    }

    #[test]
    fn tiny_angle_exp_is_orthonormal() {
        let r = so3_exp(&Vec3::new(1e-9, -2e-9, 5e-10));
        assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-16);
    }

    #[test]
    fn single_step_rollout_equals_step() {
        let x = ToolState::through_port(Vec3::new(1.0, 0.0, -8.0), Vec3::new(-9.0, 0.0, 9.0));
        let u = ControlInput {
            force: Vec3::new(0.1, 0.2, -0.3),
            torque: Vec3::new(-0.5, 0.1, 0.0),
        };
        let cfg = IntegrationConfig::default();
        let states = rollout(&x, &[u], &cfg).unwrap();
        assert_eq!(states.len(), 2);
        assert_eq!(states[0], x);
        assert_eq!(states[1], step_dynamics(&x, &u, &cfg).unwrap());
    }

    #[test]
    fn rollout_equals_iterated_steps() {
        let x0 = ToolState::through_port(Vec3::new(1.0, 0.0, -8.0), Vec3::new(-9.0, 0.0, 9.0));
        let cfg = IntegrationConfig::default();
        let controls: Vec<_> = (0..50)
            .map(|k| {
                let t = k as f64 * 0.1;
                ControlInput {
                    force: Vec3::new(t.sin(), t.cos(), -t),
                    torque: Vec3::new(0.2 * t.cos(), -0.1, 0.3 * t.sin()),
                }
            })
            .collect();
        let states = rollout(&x0, &controls, &cfg).unwrap();
        let folded = controls
            .iter()
            .fold(x0, |x, u| step_dynamics(&x, u, &cfg).unwrap());
        assert_eq!(states.len(), controls.len() + 1);
        assert_eq!(*states.last().unwrap(), folded);
    }

    #[test]
    fn constant_zero_controls_keep_state() {
        let x0 = ToolState::at_rest(Vec3::new(0.0, 0.0, -9.7), frame_from_axis(Vec3::new(0.4, 0.0, -0.9)));
        let states = rollout(&x0, &[ControlInput::zero(); 20], &IntegrationConfig::default()).unwrap();
        for s in &states {
            assert!((s.position - x0.position).amax() < 1e-15);
            assert!((s.orientation - x0.orientation).amax() < 1e-14);
        }
    }

    #[test]
    fn empty_rollout_is_rejected() {
        let x0 = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        assert!(rollout(&x0, &[], &IntegrationConfig::default()).is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        x.velocity.x = f64::NAN;
        assert_eq!(
            step_dynamics(&x, &ControlInput::zero(), &IntegrationConfig::default()),
            Err(KinematicsError::InvalidState("non-finite state"))
        );
        let x = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        let u = ControlInput {
            force: Vec3::new(f64::INFINITY, 0.0, 0.0),
            torque: Vec3::zeros(),
        };
        assert!(step_dynamics(&x, &u, &IntegrationConfig::default()).is_err());
    }

    #[test]
    fn rejects_bad_inertia() {
        let mut cfg = IntegrationConfig::default();
        cfg.inertia[(0, 0)] = -1.0;
        assert!(cfg.validate().is_err());
        cfg.inertia = Mat3::identity();
        cfg.inertia[(0, 1)] = 0.5;
        assert!(cfg.validate().is_err());
        cfg.inertia = Mat3::identity();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn orientation_stays_orthonormal_over_long_rollouts() {
        let cfg = IntegrationConfig {
            dt: 0.01,
            mass: 1.0,
            inertia: Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 0.5)),
        };
        let mut x = ToolState::at_rest(Vec3::zeros(), random_rotation(0.1, 0.2, 0.3));
        x.angular_velocity = Vec3::new(0.3, -0.2, 0.25);
        for k in 0..10_000 {
            let t = k as f64 * 0.013;
            let u = ControlInput {
                force: Vec3::new(t.sin(), 0.5, -t.cos()),
                torque: 0.05 * Vec3::new(2.0 * t.cos(), -t.sin(), 0.7 * (0.5 * t).sin()),
            };
            x = step_dynamics(&x, &u, &cfg).unwrap();
            assert!(x.orthonormality_error() <= 1e-9, "step {k}");
        }
        assert!(x.orientation.determinant() > 0.0);
    }

    #[test]
    fn free_motion_conserves_speed_with_spherical_inertia() {
        let cfg = IntegrationConfig::default();
        let mut x = ToolState::at_rest(Vec3::zeros(), random_rotation(0.4, -0.3, 0.2));
        x.velocity = Vec3::new(0.3, -0.7, 1.2);
        x.angular_velocity = Vec3::new(-2.0, 0.5, 1.0);
        let (v0, w0) = (x.velocity.norm(), x.angular_velocity.norm());
        let states = rollout(&x, &[ControlInput::zero(); 2000], &cfg).unwrap();
        for s in states {
            assert!(close(s.velocity.norm(), v0, 1e-12));
            assert!(close(s.angular_velocity.norm(), w0, 1e-12));
        }
    }

    fn terminal_after(x0: &ToolState, horizon: f64, dt: f64) -> ToolState {
        let cfg = IntegrationConfig {
            dt,
            mass: 1.0,
            inertia: Mat3::from_diagonal(&Vec3::new(1.0, 1.5, 2.0)),
        };
        let n = (horizon / dt).round() as usize;
        let mut x = *x0;
        for k in 0..n {
            let t = k as f64 * dt;
            let u = ControlInput {
                force: Vec3::new(t.cos(), 1.0 - t, 0.5 * t),
                torque: Vec3::new(0.3, -0.2 * t, 0.1),
            };
            x = step_dynamics(&x, &u, &cfg).unwrap();
        }
        x
    }

    #[test]
    fn halving_dt_halves_the_error() {
        let mut x0 = ToolState::at_rest(Vec3::zeros(), Mat3::identity());
        x0.angular_velocity = Vec3::new(0.5, 0.2, -0.3);
        let dt = 0.02;
        let reference = terminal_after(&x0, 1.0, dt / 64.0);
        let err = |h: f64| reference.local(&terminal_after(&x0, 1.0, h)).norm();
        let ratio = err(dt) / err(dt / 2.0);
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let cfg = IntegrationConfig {
            dt: 0.01,
            mass: 1.3,
            inertia: Mat3::new(1.0, 0.1, 0.0, 0.1, 2.0, 0.2, 0.0, 0.2, 1.5),
        };
        let mut x = ToolState::through_port(Vec3::new(0.5, 1.0, -9.0), Vec3::new(-9.0, 0.0, 9.0));
        x.velocity = Vec3::new(1.0, -2.0, 0.5);
        x.angular_velocity = Vec3::new(0.4, -0.8, 1.5);
        let u = ControlInput {
            force: Vec3::new(3.0, -1.0, 2.0),
            torque: Vec3::new(-0.5, 1.0, 0.3),
        };
        let (a, b) = dynamics_jacobians(&x, &u, &cfg);
        let nominal = step_dynamics(&x, &u, &cfg).unwrap();
        let h = 1e-6;
        for j in 0..TANGENT_DIM {
            let mut d = TangentVector::zeros();
            d[j] = h;
            let plus = step_dynamics(&x.retract(&d), &u, &cfg).unwrap();
            let minus = step_dynamics(&x.retract(&-d), &u, &cfg).unwrap();
            let col = (nominal.local(&plus) - nominal.local(&minus)) / (2.0 * h);
            assert!((col - a.column(j)).amax() < 1e-7, "A column {j}");
        }
        for j in 0..CONTROL_DIM {
            let mut du = ControlVector::zeros();
            du[j] = h;
            let up = ControlInput::from_vector(&(u.to_vector() + du));
            let um = ControlInput::from_vector(&(u.to_vector() - du));
            let plus = step_dynamics(&x, &up, &cfg).unwrap();
            let minus = step_dynamics(&x, &um, &cfg).unwrap();
            let col = (nominal.local(&plus) - nominal.local(&minus)) / (2.0 * h);
            assert!((col - b.column(j)).amax() < 1e-7, "B column {j}");
        }
    }

    #[test]
    fn saturation_clamps_each_channel() {
        let limits = ActuatorLimits::default();
        let u = ControlInput {
            force: Vec3::new(30.0, 40.0, 0.0),
            torque: Vec3::new(0.0, 1.0, 0.0),
        };
        let s = u.saturated(&limits);
        assert!(close(s.force.norm(), 10.0, 1e-12));
        assert_eq!(s.torque, u.torque);
        assert!(s.within(&limits));
        assert!(!u.within(&limits));
    }

    #[test]
    fn port_frame_axis_points_from_port_to_tip() {
        let port = Vec3::new(-9.0, 0.0, 9.0);
        let tip = Vec3::new(1.0, 2.0, -9.0);
        let x = ToolState::through_port(tip, port);
        assert!((x.tool_axis() - (tip - port).normalize()).amax() < 1e-15);
        assert!(x.orthonormality_error() < 1e-15);
        assert!((x.orientation.determinant() - 1.0).abs() < 1e-14);
    }
}
