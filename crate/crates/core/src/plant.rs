//! Control-affine plant models and a fixed-step integrator.
//!
//! A plant is the pair of maps `f` (drift) and `g` (control matrix) in
//! `xdot = f(x) + g(x) u`. Two concrete plants are provided: an n-dimensional
//! single integrator and a 12-state quadrotor derived from the Newton-Euler
//! rigid-body equations. Both are immutable function bundles that can be
//! evaluated from any thread.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

type DriftFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type ControlFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;

/// Plant in control-affine form.
#[derive(Clone)]
pub struct ControlAffineModel {
    state_dim: usize,
    input_dim: usize,
    drift: Arc<DriftFn>,
    control: Arc<ControlFn>,
    /// Stored for completeness; no control law reads the output map.
    output: Option<Arc<DriftFn>>,
}

impl fmt::Debug for ControlAffineModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("has_output_map", &self.output.is_some())
            .finish()
    }
}

impl ControlAffineModel {
    pub fn new<F, G>(state_dim: usize, input_dim: usize, drift: F, control: G) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self {
            state_dim,
            input_dim,
            drift: Arc::new(drift),
            control: Arc::new(control),
            output: None,
        }
    }

    pub fn with_output_map<H>(mut self, output: H) -> Self
    where
        H: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.output = Some(Arc::new(output));
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn has_output_map(&self) -> bool {
        self.output.is_some()
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state has length {}, plant expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Drift term `f(x)`.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        (self.drift)(x)
    }

    /// Control matrix `g(x)` of shape `state_dim x input_dim`.
    pub fn control_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        (self.control)(x)
    }

    /// Full state derivative `f(x) + g(x) u`.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, plant expects {}",
                u.len(),
                self.input_dim
            )));
        }
        Ok(self.drift(x)? + self.control_matrix(x)? * u)
    }

    /// Output map `h(x)` if one was attached.
    pub fn output(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.check_state(x)?;
        self.output.as_ref().map(|h| h(x)).transpose()
    }
}

/// `xdot = u`: zero drift, identity control matrix.
pub fn single_integrator(n: usize) -> Result<ControlAffineModel> {
    if n == 0 {
        return Err(Error::Plant("integrator dimension must be at least 1".into()));
    }
    Ok(ControlAffineModel::new(
        n,
        n,
        move |_x| Ok(DVector::zeros(n)),
        move |_x| Ok(DMatrix::identity(n, n)),
    ))
}

/// Rigid-body parameters for the quadrotor plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// m
    pub arm_length: f64,
    /// kg m^2, principal moments (Ixx, Iyy, Izz)
    pub inertia: [f64; 3],
    /// m/s^2
    pub gravity: f64,
}

impl Default for QuadrotorParams {
    /// Crazyflie 2.1 rigid-body constants.
    fn default() -> Self {
        Self {
            mass: 0.028,
            arm_length: 0.046,
            inertia: [6.4893e-6, 16.4562e-6, 29.5435e-6],
            gravity: 9.81,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.arm_length > 0.0
            && self.gravity > 0.0
            && self.inertia.iter().all(|&i| i > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Plant(
                "quadrotor parameters must all be strictly positive".into(),
            ))
        }
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.inertia[0],
            self.inertia[1],
            self.inertia[2],
        ))
    }

    /// Raw thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }
}

/// Thrust input convention of the quadrotor plant.
///
/// `Raw` takes the total thrust force directly, so hovering needs
/// `u = (m g, 0, 0, 0)` and the zero state free-falls. `GravityCompensated`
/// shifts the thrust input by the hover force, which moves the hover
/// equilibrium to `u = 0` and makes the origin an open-loop equilibrium of
/// the drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrustFrame {
    Raw,
    GravityCompensated,
}

/// State vector layout of the 12-state quadrotor:
/// `(x, y, z, vx, vy, vz, roll, pitch, yaw, p, q, r)`.
pub mod quad {
    pub const POS: usize = 0;
    pub const VEL: usize = 3;
    pub const ATT: usize = 6;
    pub const RATE: usize = 9;
    pub const STATE_DIM: usize = 12;
    pub const INPUT_DIM: usize = 4;
    pub const YAW: usize = 8;
}

/// Structured view of a 12-state quadrotor vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// roll, pitch, yaw (rad)
    pub attitude: Vector3<f64>,
    /// body rates p, q, r (rad/s)
    pub rates: Vector3<f64>,
}

impl QuadrotorState {
    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if x.len() != quad::STATE_DIM {
            return Err(Error::Dimension(format!(
                "quadrotor state needs {} entries, got {}",
                quad::STATE_DIM,
                x.len()
            )));
        }
        Ok(Self {
            position: Vector3::new(x[0], x[1], x[2]),
            velocity: Vector3::new(x[3], x[4], x[5]),
            attitude: Vector3::new(x[6], x[7], x[8]),
            rates: Vector3::new(x[9], x[10], x[11]),
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            quad::STATE_DIM,
            self.position
                .iter()
                .chain(self.velocity.iter())
                .chain(self.attitude.iter())
                .chain(self.rates.iter())
                .copied(),
        )
    }
}

/// Map body-frame angular rates to Euler-angle rates (ZYX convention).
pub fn euler_rate_transform(attitude: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let (roll, pitch) = (attitude.x, attitude.y);
    if !pitch.is_finite() || pitch.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::PitchSingularity { theta: pitch });
    }
    let (sr, cr) = roll.sin_cos();
    let (tp, cp) = (pitch.tan(), pitch.cos());
    Ok(Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    ))
}

/// Body z-axis expressed in the inertial frame for a ZYX Euler attitude;
/// this is the direction along which total thrust acts.
pub fn body_z_in_inertial(attitude: &Vector3<f64>) -> Vector3<f64> {
    let (sr, cr) = attitude.x.sin_cos();
    let (sp, cp) = attitude.y.sin_cos();
    let (sy, cy) = attitude.z.sin_cos();
    Vector3::new(cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
}

/// Newton-Euler quadrotor in control-affine form with input
/// `u = (thrust, tau_x, tau_y, tau_z)` under the chosen [`ThrustFrame`].
pub fn quadrotor_model(params: &QuadrotorParams, frame: ThrustFrame) -> Result<ControlAffineModel> {
    params.validate()?;
    let p = *params;
    let inertia = p.inertia_matrix();
    let inv_inertia = Matrix3::from_diagonal(&Vector3::new(
        1.0 / p.inertia[0],
        1.0 / p.inertia[1],
        1.0 / p.inertia[2],
    ));

    let drift = move |x: &DVector<f64>| -> Result<DVector<f64>> {
        let s = QuadrotorState::from_vector(x)?;
        let transform = euler_rate_transform(&s.attitude)?;
        let accel = match frame {
            ThrustFrame::Raw => Vector3::new(0.0, 0.0, -p.gravity),
            ThrustFrame::GravityCompensated => {
                p.gravity * (body_z_in_inertial(&s.attitude) - Vector3::z())
            }
        };
        let att_rate = transform * s.rates;
        let gyro = inv_inertia * (-s.rates.cross(&(inertia * s.rates)));
        let mut out = DVector::zeros(quad::STATE_DIM);
        out.rows_mut(quad::POS, 3).copy_from(&s.velocity);
        out.rows_mut(quad::VEL, 3).copy_from(&accel);
        out.rows_mut(quad::ATT, 3).copy_from(&att_rate);
        out.rows_mut(quad::RATE, 3).copy_from(&gyro);
        Ok(out)
    };

    let control = move |x: &DVector<f64>| -> Result<DMatrix<f64>> {
        let s = QuadrotorState::from_vector(x)?;
        if s.attitude.y.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::PitchSingularity { theta: s.attitude.y });
        }
        let thrust_dir = body_z_in_inertial(&s.attitude) / p.mass;
        let mut g = DMatrix::zeros(quad::STATE_DIM, quad::INPUT_DIM);
        g[(quad::VEL, 0)] = thrust_dir.x;
        g[(quad::VEL + 1, 0)] = thrust_dir.y;
        g[(quad::VEL + 2, 0)] = thrust_dir.z;
        g[(quad::RATE, 1)] = 1.0 / p.inertia[0];
        g[(quad::RATE + 1, 2)] = 1.0 / p.inertia[1];
        g[(quad::RATE + 2, 3)] = 1.0 / p.inertia[2];
        Ok(g)
    };

    Ok(ControlAffineModel::new(
        quad::STATE_DIM,
        quad::INPUT_DIM,
        drift,
        control,
    ))
}

/// Classical fourth-order Runge-Kutta step with the input held constant.
pub fn step_rk4(
    model: &ControlAffineModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Numeric(format!("step size must be positive, got {dt}")));
    }
    if !x.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite state or input".into()));
    }
    let k1 = model.derivative(x, u)?;
    let k2 = model.derivative(&(x + &k1 * (dt / 2.0)), u)?;
    let k3 = model.derivative(&(x + &k2 * (dt / 2.0)), u)?;
    let k4 = model.derivative(&(x + &k3 * dt), u)?;
    Ok(x + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrator_has_zero_drift_identity_control() {
        let m1 = single_integrator(1).unwrap();
        assert_eq!(
            m1.drift(&nalgebra::dvector![5.0]).unwrap(),
            nalgebra::dvector![0.0]
        );
        let m3 = single_integrator(3).unwrap();
        let x = nalgebra::dvector![1.0, -2.0, 0.5];
        assert_eq!(m3.control_matrix(&x).unwrap(), DMatrix::identity(3, 3));
        assert_eq!(m3.drift(&DVector::zeros(3)).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn raw_quadrotor_hover_input_cancels_gravity() {
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::Raw).unwrap();
        let x = DVector::zeros(12);
        let u = nalgebra::dvector![p.hover_thrust(), 0.0, 0.0, 0.0];
        let dx = model.derivative(&x, &u).unwrap();
        assert!(dx.norm() <= 1e-12, "hover derivative norm {}", dx.norm());
    }

    #[test]
    fn raw_quadrotor_free_falls_with_zero_input() {
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::Raw).unwrap();
        let dx = model
            .derivative(&DVector::zeros(12), &DVector::zeros(4))
            .unwrap();
        assert_relative_eq!(dx[quad::VEL + 2], -p.gravity, epsilon = 1e-14);
        assert_relative_eq!(dx[quad::VEL], 0.0);
        assert_relative_eq!(dx[quad::VEL + 1], 0.0);
    }

    #[test]
    fn compensated_quadrotor_origin_is_equilibrium() {
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::GravityCompensated).unwrap();
        let dx = model.drift(&DVector::zeros(12)).unwrap();
        assert_eq!(dx, DVector::zeros(12));
    }

    #[test]
    fn principal_axis_spin_has_zero_angular_acceleration() {
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::Raw).unwrap();
        let mut x = DVector::zeros(12);
        x[quad::RATE] = 1.0;
        let dx = model.derivative(&x, &DVector::zeros(4)).unwrap();
        assert_eq!(dx.rows(quad::RATE, 3), DVector::zeros(3).rows(0, 3));
    }

    #[test]
    fn euler_rate_transform_cases() {
        let t = euler_rate_transform(&Vector3::zeros()).unwrap();
        assert_relative_eq!(t, Matrix3::identity(), epsilon = 1e-14);

        let t = euler_rate_transform(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0)).unwrap();
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(t, expected, epsilon = 1e-12);

        let t = euler_rate_transform(&Vector3::new(0.3, 0.0, 0.0)).unwrap();
        assert_relative_eq!(t.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_rate_transform_rejects_singular_pitch() {
        let err =
            euler_rate_transform(&Vector3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0)).unwrap_err();
        assert!(matches!(err, Error::PitchSingularity { .. }));
    }

    #[test]
    fn rk4_exact_for_constant_input_integrator() {
        let model = single_integrator(1).unwrap();
        let x1 = step_rk4(
            &model,
            &nalgebra::dvector![0.0],
            &nalgebra::dvector![1.0],
            0.1,
        )
        .unwrap();
        assert_eq!(x1[0], 0.1);
    }

    #[test]
    fn rk4_quadrotor_hover_is_fixed_point() {
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::Raw).unwrap();
        let x = DVector::zeros(12);
        let u = nalgebra::dvector![p.hover_thrust(), 0.0, 0.0, 0.0];
        let x1 = step_rk4(&model, &x, &u, 1e-3).unwrap();
        assert!((x1 - x).norm() <= 1e-12);
    }

    #[test]
    fn rk4_matches_exponential_drift() {
        // test drift xdot = x, closed form e^t
        let model = ControlAffineModel::new(
            1,
            1,
            |x| Ok(x.clone()),
            |_x| Ok(DMatrix::identity(1, 1)),
        );
        let x1 = step_rk4(
            &model,
            &nalgebra::dvector![1.0],
            &nalgebra::dvector![0.0],
            0.01,
        )
        .unwrap();
        assert_relative_eq!(x1[0], (0.01_f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn rk4_rejects_bad_inputs() {
        let model = single_integrator(2).unwrap();
        let x = DVector::zeros(2);
        let u = nalgebra::dvector![f64::NAN, 0.0];
        assert!(matches!(
            step_rk4(&model, &x, &u, 0.1),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            step_rk4(&model, &x, &DVector::zeros(2), 0.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn drift_control_split_is_affine() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let p = QuadrotorParams::default();
        let model = quadrotor_model(&p, ThrustFrame::Raw).unwrap();
        for _ in 0..25 {
            let x = DVector::from_fn(12, |i, _| {
                if (quad::ATT..quad::RATE).contains(&i) {
                    rng.gen_range(-0.5..0.5)
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            });
            let u1 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let u2 = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let alpha: f64 = rng.gen_range(0.0..1.0);
            let mixed = model
                .derivative(&x, &(&u1 * alpha + &u2 * (1.0 - alpha)))
                .unwrap();
            let combo =
                model.derivative(&x, &u1).unwrap() * alpha + model.derivative(&x, &u2).unwrap() * (1.0 - alpha);
            assert!((mixed - combo).norm() <= 1e-12);
        }
    }
}
