//! Rigid-body simulation of an X-configuration quadrotor.
//!
//! Frames: world is z-up, body is x-forward / y-left / z-up. The rotation
//! matrix maps body vectors into the world frame. Motors are indexed
//! front-left, front-right, rear-right, rear-left. Front-left and
//! rear-right spin counter-clockwise seen from above, the other pair
//! clockwise, so the rotor reaction torque about body z is
//! `yaw_torque_coeff * ((T_fr + T_rl) - (T_fl + T_rr))`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Command bound shared by every motor channel.
pub const PWM_LIMIT: f64 = 100.0;

pub const MOTOR_FRONT_LEFT: usize = 0;
pub const MOTOR_FRONT_RIGHT: usize = 1;
pub const MOTOR_REAR_RIGHT: usize = 2;
pub const MOTOR_REAR_LEFT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid quad parameter: {0}")]
    InvalidParams(String),
    #[error("control step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

/// Coefficients of the PWM-to-thrust polynomial `a2*pwm^2 + a1*pwm + a0` (newtons).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThrustCoeffs {
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl Default for ThrustCoeffs {
    fn default() -> Self {
        Self {
            a2: 1.5618e-4,
            a1: 1.0395e-2,
            a0: 0.13894,
        }
    }
}

impl ThrustCoeffs {
    pub const ZERO: ThrustCoeffs = ThrustCoeffs {
        a2: 0.0,
        a1: 0.0,
        a0: 0.0,
    };
}

/// Physical constants of the vehicle.
///
/// Mass, inertia and arm length default to representative values for a
/// small indoor quadrotor; every field can be overridden from the `[quad]`
/// section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// Principal moments about body x, y, z (kg·m²).
    pub inertia_diag: [f64; 3],
    /// Distance from the centre of mass to each rotor hub (m).
    pub arm_length: f64,
    /// m/s²
    pub gravity: f64,
    pub thrust_coeffs: ThrustCoeffs,
    /// Rotor drag torque per newton of thrust (m).
    pub yaw_torque_coeff: f64,
    /// N·s/m
    pub linear_drag_coeff: f64,
    /// N·m·s/rad
    pub angular_drag_coeff: f64,
    /// Integration substeps per control step.
    pub physics_substeps: u32,
    /// Clamp negative polynomial thrust to zero.
    pub clamp_thrust_at_zero: bool,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 0.45,
            inertia_diag: [2.4e-3, 2.4e-3, 4.5e-3],
            arm_length: 0.178,
            gravity: 9.81,
            thrust_coeffs: ThrustCoeffs::default(),
            yaw_torque_coeff: 0.016,
            linear_drag_coeff: 0.1,
            angular_drag_coeff: 0.01,
            physics_substeps: 10,
            clamp_thrust_at_zero: false,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidParams(msg.to_string()));
        let all_finite = [
            self.mass,
            self.arm_length,
            self.gravity,
            self.thrust_coeffs.a2,
            self.thrust_coeffs.a1,
            self.thrust_coeffs.a0,
            self.yaw_torque_coeff,
            self.linear_drag_coeff,
            self.angular_drag_coeff,
        ]
        .iter()
        .chain(self.inertia_diag.iter())
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("all parameters must be finite");
        }
        if self.mass <= 0.0 {
            return bad("mass must be > 0");
        }
        if self.inertia_diag.iter().any(|&i| i <= 0.0) {
            return bad("inertia_diag components must be > 0");
        }
        if self.arm_length <= 0.0 {
            return bad("arm_length must be > 0");
        }
        if self.physics_substeps < 1 {
            return bad("physics_substeps must be >= 1");
        }
        if self.linear_drag_coeff < 0.0 || self.angular_drag_coeff < 0.0 {
            return bad("drag coefficients must be >= 0");
        }
        Ok(())
    }

    /// PWM at which four equal rotors exactly carry the vehicle's weight.
    ///
    /// Larger root of `4*Tr(p) = m*g`; `None` if the polynomial never
    /// reaches the required thrust.
    pub fn hover_pwm(&self) -> Option<f64> {
        let ThrustCoeffs { a2, a1, a0 } = self.thrust_coeffs;
        let c = a0 - self.mass * self.gravity / 4.0;
        if a2 == 0.0 {
            return if a1 == 0.0 { None } else { Some(-c / a1) };
        }
        let disc = a1 * a1 - 4.0 * a2 * c;
        if disc < 0.0 {
            return None;
        }
        Some((-a1 + disc.sqrt()) / (2.0 * a2))
    }
}

/// Evaluate the PWM-to-thrust polynomial exactly as written (no output clamp).
pub fn thrust_from_pwm(pwm: f64, coeffs: &ThrustCoeffs) -> f64 {
    coeffs.a2 * pwm * pwm + coeffs.a1 * pwm + coeffs.a0
}

/// Per-motor PWM command in motor order FL, FR, RR, RL.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotorCommand {
    pub pwm: [f64; 4],
}

impl MotorCommand {
    pub fn new(pwm: [f64; 4]) -> Self {
        Self { pwm }
    }

    pub fn uniform(pwm: f64) -> Self {
        Self { pwm: [pwm; 4] }
    }

    /// Copy with every channel clamped to [-100, 100].
    pub fn clamped(&self) -> Self {
        Self {
            pwm: self.pwm.map(|p| p.clamp(-PWM_LIMIT, PWM_LIMIT)),
        }
    }

    /// Swap left and right motors.
    pub fn mirror_left_right(&self) -> Self {
        let [fl, fr, rr, rl] = self.pwm;
        Self { pwm: [fr, fl, rl, rr] }
    }

    /// Swap front and rear motors.
    pub fn mirror_front_rear(&self) -> Self {
        let [fl, fr, rr, rl] = self.pwm;
        Self { pwm: [rl, rr, fr, fl] }
    }
}

/// Full 6-DoF state of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    /// World frame (m).
    pub position: Vector3<f64>,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// World frame (m/s).
    pub lin_vel: Vector3<f64>,
    /// Body frame (rad/s): roll rate p, pitch rate q, yaw rate r.
    pub ang_vel: Vector3<f64>,
}

impl RigidState {
    /// At rest at `position` with the given Z-Y-X Euler attitude.
    pub fn at_rest(position: Vector3<f64>, euler: [f64; 3]) -> Self {
        Self {
            position,
            rotation: rotation_from_euler(euler[0], euler[1], euler[2]),
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
        }
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn euler(&self) -> [f64; 3] {
        euler_from_rotation(&self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.lin_vel.iter().all(|v| v.is_finite())
            && self.ang_vel.iter().all(|v| v.is_finite())
    }
}

/// Rotor thrusts (N) for a command, in motor order.
pub fn rotor_thrusts(cmd: &MotorCommand, params: &QuadParams) -> [f64; 4] {
    cmd.pwm.map(|p| {
        let t = thrust_from_pwm(p, &params.thrust_coeffs);
        if params.clamp_thrust_at_zero {
            t.max(0.0)
        } else {
            t
        }
    })
}

/// Body-frame torque produced by a set of rotor thrusts.
///
/// Sums are grouped so that mirroring the motors negates the roll or pitch
/// component bit-exactly.
pub fn thrust_torque(thrusts: &[f64; 4], params: &QuadParams) -> Vector3<f64> {
    let [fl, fr, rr, rl] = *thrusts;
    let d = params.arm_length * std::f64::consts::FRAC_1_SQRT_2;
    let roll = d * ((fl + rl) - (fr + rr));
    let pitch = d * ((rr + rl) - (fl + fr));
    let yaw = params.yaw_torque_coeff * ((fr + rl) - (fl + rr));
    Vector3::new(roll, pitch, yaw)
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues formula for `exp([phi]x)`.
fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta_sq < 1e-12 {
        // Taylor expansions of sin(t)/t and (1-cos(t))/t^2
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        let theta = theta_sq.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Gram-Schmidt on the columns, third column rebuilt as a cross product so det = +1.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = r.column(0).normalize();
    let c1_raw = r.column(1) - c0 * c0.dot(&r.column(1));
    let c1 = c1_raw.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Advance the vehicle by one control step of length `dt_control`.
///
/// Thrusts are held constant over the step. Each substep updates the
/// velocities from the current forces first, then moves the position with
/// the mean of old and new velocity and the attitude with the new body
/// rate via the exponential map.
pub fn step_physics(
    state: &RigidState,
    cmd: &MotorCommand,
    params: &QuadParams,
    dt_control: f64,
) -> Result<RigidState, DynamicsError> {
    if !(dt_control > 0.0 && dt_control.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt_control));
    }
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if cmd.pwm.iter().any(|p| !p.is_finite()) {
        return Err(DynamicsError::NonFinite("motor command"));
    }
    let cmd = cmd.clamped();
    let thrusts = rotor_thrusts(&cmd, params);
    let total_thrust = (thrusts[0] + thrusts[1]) + (thrusts[2] + thrusts[3]);
    let rotor_torque = thrust_torque(&thrusts, params);
    let inertia = Vector3::from(params.inertia_diag);
    let gravity = Vector3::new(0.0, 0.0, -params.mass * params.gravity);

    let n = params.physics_substeps.max(1);
    let h = dt_control / f64::from(n);
    let mut s = *state;
    for _ in 0..n {
        let thrust_world = s.rotation.column(2) * total_thrust;
        let force = thrust_world + gravity - s.lin_vel * params.linear_drag_coeff;
        let v_new = s.lin_vel + force * (h / params.mass);
        s.position += (s.lin_vel + v_new) * (0.5 * h);
        s.lin_vel = v_new;

        let w = s.ang_vel;
        let gyro = w.cross(&inertia.component_mul(&w));
        let torque = rotor_torque - w * params.angular_drag_coeff - gyro;
        s.ang_vel = w + torque.component_div(&inertia) * h;
        s.rotation *= so3_exp(&(s.ang_vel * h));
    }
    s.rotation = orthonormalize(&s.rotation);
    if !s.is_finite() {
        return Err(DynamicsError::NonFinite("state after step"));
    }
    Ok(s)
}

/// Z-Y-X intrinsic (yaw, pitch, roll) rotation: `Rz(psi) * Ry(theta) * Rx(phi)`.
pub fn rotation_from_euler(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        cp * ct,
        cp * st * sf - sp * cf,
        cp * st * cf + sp * sf,
        sp * ct,
        sp * st * sf + cp * cf,
        sp * st * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

/// Inverse of [`rotation_from_euler`]; returns `(phi, theta, psi)`.
///
/// At gimbal lock (|theta| = pi/2) the representative with psi = 0 is returned.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> [f64; 3] {
    let cos_theta = r[(0, 0)].hypot(r[(1, 0)]);
    let theta = (-r[(2, 0)]).atan2(cos_theta);
    if cos_theta < 1e-12 {
        let phi = if r[(2, 0)] < 0.0 {
            r[(0, 1)].atan2(r[(1, 1)])
        } else {
            (-r[(0, 1)]).atan2(r[(1, 1)])
        };
        return [phi, theta, 0.0];
    }
    let phi = r[(2, 1)].atan2(r[(2, 2)]);
    let psi = r[(1, 0)].atan2(r[(0, 0)]);
    [phi, theta, psi]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn thrust_polynomial_values() {
        let c = ThrustCoeffs::default();
        assert!((thrust_from_pwm(0.0, &c) - 0.13894).abs() < 1e-12);
        // exact decimal evaluation: 1.5618 + 1.0395 + 0.13894 and 1.5618 - 1.0395 + 0.13894
        assert!((thrust_from_pwm(100.0, &c) - 2.74024).abs() < 1e-12);
        assert!((thrust_from_pwm(-100.0, &c) - 0.66124).abs() < 1e-12);
        // the polynomial dips below zero around -33 and is not clamped
        assert!(thrust_from_pwm(-33.28, &c) < 0.0);
    }

    #[test]
    fn clamp_flag_removes_negative_thrust() {
        let mut p = QuadParams::default();
        let cmd = MotorCommand::uniform(-33.0);
        assert!(rotor_thrusts(&cmd, &p)[0] < 0.0);
        p.clamp_thrust_at_zero = true;
        assert_eq!(rotor_thrusts(&cmd, &p)[0], 0.0);
    }

    #[test]
    fn default_params_are_valid_and_can_hover() {
        let p = QuadParams::default();
        p.validate().unwrap();
        let hover = p.hover_pwm().unwrap();
        let total = 4.0 * thrust_from_pwm(hover, &p.thrust_coeffs);
        assert!((total - p.mass * p.gravity).abs() < 1e-12);
        assert!(hover > 0.0 && hover < PWM_LIMIT);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = QuadParams::default();
        p.mass = 0.0;
        assert!(p.validate().is_err());
        let mut p = QuadParams::default();
        p.inertia_diag[2] = -1.0;
        assert!(p.validate().is_err());
        let mut p = QuadParams::default();
        p.physics_substeps = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let p = QuadParams::default();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.0), [0.0; 3]);
        let bad_cmd = MotorCommand::new([0.0, f64::NAN, 0.0, 0.0]);
        assert_eq!(
            step_physics(&s, &bad_cmd, &p, 0.05),
            Err(DynamicsError::NonFinite("motor command"))
        );
        let mut bad_state = s;
        bad_state.lin_vel.x = f64::INFINITY;
        assert!(step_physics(&bad_state, &MotorCommand::default(), &p, 0.05).is_err());
        assert!(step_physics(&s, &MotorCommand::default(), &p, 0.0).is_err());
    }

    #[test]
    fn free_fall_half_second() {
        let p = QuadParams {
            thrust_coeffs: ThrustCoeffs::ZERO,
            linear_drag_coeff: 0.0,
            ..QuadParams::default()
        };
        let z0 = 3.0;
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, z0), [0.0; 3]);
        let next = step_physics(&s, &MotorCommand::default(), &p, 0.5).unwrap();
        assert!((next.position.z - (z0 - 1.22625)).abs() < 1e-3);
        assert!((next.lin_vel.z + 9.81 * 0.5).abs() < 1e-9);
    }

    #[test]
    fn small_step_limit_zero_thrust() {
        let p = QuadParams {
            thrust_coeffs: ThrustCoeffs::ZERO,
            ..QuadParams::default()
        };
        let s = RigidState::at_rest(Vector3::new(0.5, -0.2, 1.0), [0.0; 3]);
        let dt = 1e-6;
        let next = step_physics(&s, &MotorCommand::default(), &p, dt).unwrap();
        assert!((next.position - s.position).norm() < 1e-10);
        let expected = -9.81 * dt;
        assert!(next.lin_vel.xy().norm() == 0.0);
        // drag contributes O(dt) relative error
        assert!((next.lin_vel.z - expected).abs() < 1e-6 * expected.abs());
    }

    #[test]
    fn zero_command_still_produces_constant_thrust() {
        let p = QuadParams::default();
        let s = RigidState::at_rest(Vector3::new(0.0, 0.0, 1.0), [0.0; 3]);
        let dt = 1e-6;
        let next = step_physics(&s, &MotorCommand::default(), &p, dt).unwrap();
        let accel = 4.0 * 0.13894 / p.mass - p.gravity;
        assert!((next.lin_vel.z - accel * dt).abs() < 1e-6 * (accel * dt).abs());
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let p = QuadParams::default();
        let cmd = MotorCommand::uniform(p.hover_pwm().unwrap());
        let mut s = RigidState::at_rest(Vector3::new(0.3, -0.4, 1.7), [0.0; 3]);
        for _ in 0..100 {
            let next = step_physics(&s, &cmd, &p, 0.05).unwrap();
            assert!((next.position - s.position).norm() < 1e-6);
            assert!(next.ang_vel.norm() < 1e-12);
            s = next;
        }
    }

    #[test]
    fn mirrored_commands_negate_torques() {
        let p = QuadParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let cmd = MotorCommand::new([(); 4].map(|_| rng.gen_range(-100.0..100.0)));
            let base = thrust_torque(&rotor_thrusts(&cmd, &p), &p);
            let lr = thrust_torque(&rotor_thrusts(&cmd.mirror_left_right(), &p), &p);
            let fb = thrust_torque(&rotor_thrusts(&cmd.mirror_front_rear(), &p), &p);
            assert_eq!(lr.x, -base.x);
            assert_eq!(lr.y, base.y);
            assert_eq!(fb.y, -base.y);
            assert_eq!(fb.x, base.x);
        }
    }

    #[test]
    fn roll_torque_sign_convention() {
        // more thrust on the left side rolls the vehicle right-side down (+x torque)
        let p = QuadParams::default();
        let cmd = MotorCommand::new([60.0, 40.0, 40.0, 60.0]);
        let tau = thrust_torque(&rotor_thrusts(&cmd, &p), &p);
        assert!(tau.x > 0.0);
        assert!(tau.y.abs() < 1e-15);
        // more thrust on the rear pitches the nose down (+y torque)
        let cmd = MotorCommand::new([40.0, 40.0, 60.0, 60.0]);
        let tau = thrust_torque(&rotor_thrusts(&cmd, &p), &p);
        assert!(tau.y > 0.0);
        // clockwise pair (FR, RL) faster yields positive yaw torque
        let cmd = MotorCommand::new([40.0, 60.0, 40.0, 60.0]);
        let tau = thrust_torque(&rotor_thrusts(&cmd, &p), &p);
        assert!(tau.z > 0.0);
        assert_eq!(tau.x, 0.0);
        assert_eq!(tau.y, 0.0);
    }

    #[test]
    fn step_is_bit_reproducible() {
        let p = QuadParams::default();
        let s = RigidState {
            position: Vector3::new(0.1, 0.2, 1.5),
            rotation: rotation_from_euler(0.2, -0.1, 0.4),
            lin_vel: Vector3::new(0.3, -0.2, 0.1),
            ang_vel: Vector3::new(1.0, -0.5, 0.2),
        };
        let cmd = MotorCommand::new([10.0, 70.0, -30.0, 55.0]);
        let a = step_physics(&s, &cmd, &p, 0.05).unwrap();
        let b = step_physics(&s, &cmd, &p, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn euler_identity_and_half_turn() {
        assert_eq!(euler_from_rotation(&Matrix3::identity()), [0.0, 0.0, 0.0]);
        assert_eq!(rotation_from_euler(0.0, 0.0, 0.0), Matrix3::identity());
        let r = rotation_from_euler(std::f64::consts::PI, 0.0, 0.0);
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!(max_abs(&(r - expected)) < 1e-12);
    }

    #[test]
    fn euler_round_trip() {
        let e = euler_from_rotation(&rotation_from_euler(0.1, 0.2, 0.3));
        for (got, want) in e.iter().zip([0.1, 0.2, 0.3]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gimbal_lock_returns_zero_yaw() {
        for theta in [std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2] {
            let r = rotation_from_euler(0.4, theta, 0.0);
            let [phi, th, psi] = euler_from_rotation(&r);
            assert_eq!(psi, 0.0);
            assert!((th - theta).abs() < 1e-7);
            assert!(max_abs(&(rotation_from_euler(phi, th, psi) - r)) < 1e-9);
        }
    }

    #[test]
    fn orthonormalize_repairs_drift() {
        let mut r = rotation_from_euler(0.3, 0.2, -1.0);
        r[(0, 1)] += 1e-4;
        r[(2, 2)] -= 2e-4;
        let q = orthonormalize(&r);
        assert!(max_abs(&(q * q.transpose() - Matrix3::identity())) < 1e-14);
        assert!((q.determinant() - 1.0).abs() < 1e-14);
    }
}
