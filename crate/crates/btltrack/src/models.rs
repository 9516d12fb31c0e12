//! Motion and sensor models: planar coordinated turn with unknown turn
//! rate, range-bearing radar at the origin, and linear adapters used by
//! the closed-form oracles in the test suites.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CovMatrix, MeasVec, StateVec};

/// State layout of the coordinated-turn model: `[x, vx, y, vy, omega]`
/// in meters, m/s and rad/s.
pub const CT_STATE_DIM: usize = 5;

/// Measurement layout of the range-bearing sensor: `[range_m, bearing_rad]`.
pub const RB_MEAS_DIM: usize = 2;

/// Index of the bearing component within a range-bearing measurement.
pub const BEARING_COMPONENT: usize = 1;

/// Coordinated-turn process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtModelConfig {
    /// Sampling interval, seconds.
    pub t_s: f64,
    /// Position/velocity process noise density, m^2/s^4.
    pub q1: f64,
    /// Turn-rate process noise density, rad^2/s^3.
    pub q2: f64,
    /// Below this |omega| the analytic constant-velocity limit is used.
    pub omega_epsilon: f64,
}

impl CtModelConfig {
    pub fn new(t_s: f64, q1: f64, q2: f64) -> Result<Self> {
        let cfg = CtModelConfig {
            t_s,
            q1,
            q2,
            omega_epsilon: 1e-8,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_s > 0.0) || !self.t_s.is_finite() {
            return Err(Error::invalid("t_s", "must be positive and finite"));
        }
        if self.q1 < 0.0 || self.q2 < 0.0 || !self.q1.is_finite() || !self.q2.is_finite() {
            return Err(Error::invalid("q1/q2", "must be nonnegative and finite"));
        }
        if !(self.omega_epsilon > 0.0) {
            return Err(Error::invalid("omega_epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// One range-bearing sensor: base noise scales `sigma_r`, `sigma_zeta`
/// and a dimensionless intensity multiplying the base covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub sigma_r: f64,
    pub sigma_zeta: f64,
    pub intensity: f64,
}

impl SensorModel {
    pub fn new(sigma_r: f64, sigma_zeta: f64, intensity: f64) -> Result<Self> {
        let s = SensorModel {
            sigma_r,
            sigma_zeta,
            intensity,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r > 0.0) || !(self.sigma_zeta > 0.0) {
            return Err(Error::invalid("sigma_r/sigma_zeta", "must be positive"));
        }
        if !(self.intensity > 0.0) || !self.intensity.is_finite() {
            return Err(Error::invalid("intensity", "must be positive and finite"));
        }
        Ok(())
    }

    /// Base covariance `B_w = diag(sigma_r^2, sigma_zeta^2)`.
    pub fn base_cov(&self) -> CovMatrix {
        CovMatrix::from_diagonal(&[self.sigma_r * self.sigma_r, self.sigma_zeta * self.sigma_zeta])
            .expect("diagonal covariance")
    }
}

/// Measurement covariance `Q_w = intensity * B_w`.
pub fn meas_cov(sensor: &SensorModel) -> CovMatrix {
    CovMatrix::from_diagonal(&[
        sensor.intensity * sensor.sigma_r * sensor.sigma_r,
        sensor.intensity * sensor.sigma_zeta * sensor.sigma_zeta,
    ])
    .expect("diagonal covariance")
}

pub(crate) fn ct_apply(x: &DVector<f64>, cfg: &CtModelConfig) -> Result<DVector<f64>> {
    if x.len() != CT_STATE_DIM {
        return Err(Error::DimensionMismatch {
            context: "ct_transition",
            expected: CT_STATE_DIM,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "ct_transition",
        });
    }
    let t = cfg.t_s;
    let (px, vx, py, vy, omega) = (x[0], x[1], x[2], x[3], x[4]);
    let (a, b, s, c) = if omega.abs() < cfg.omega_epsilon {
        // Analytic limits: sin(wT)/w -> T, (1 - cos(wT))/w -> 0.
        (t, 0.0, 0.0, 1.0)
    } else {
        let wt = omega * t;
        let (sin_wt, cos_wt) = wt.sin_cos();
        (sin_wt / omega, (1.0 - cos_wt) / omega, sin_wt, cos_wt)
    };
    Ok(DVector::from_column_slice(&[
        px + a * vx - b * vy,
        c * vx - s * vy,
        py + b * vx + a * vy,
        s * vx + c * vy,
        omega,
    ]))
}

/// Deterministic part of the coordinated-turn transition, `F(omega) x`.
pub fn ct_transition(x: &StateVec, cfg: &CtModelConfig) -> Result<StateVec> {
    StateVec::new(ct_apply(x.as_vector(), cfg)?)
}

/// Process noise covariance of the coordinated-turn model:
/// `q1 * [T^4/4, T^3/2; T^3/2, T^2]` on each position/velocity pair and
/// `q2 * T` on the turn rate.
pub fn ct_process_cov(cfg: &CtModelConfig) -> CovMatrix {
    let t = cfg.t_s;
    let t2 = t * t;
    let a = cfg.q1 * t2 * t2 / 4.0;
    let b = cfg.q1 * t2 * t / 2.0;
    let c = cfg.q1 * t2;
    let mut m = DMatrix::zeros(CT_STATE_DIM, CT_STATE_DIM);
    m[(0, 0)] = a;
    m[(0, 1)] = b;
    m[(1, 0)] = b;
    m[(1, 1)] = c;
    m[(2, 2)] = a;
    m[(2, 3)] = b;
    m[(3, 2)] = b;
    m[(3, 3)] = c;
    m[(4, 4)] = cfg.q2 * t;
    CovMatrix::new(m).expect("process covariance is symmetric by construction")
}

/// Planar radar at the origin: `[sqrt(x^2 + y^2), atan2(y, x)]`,
/// bearing in `(-pi, pi]`.
pub fn range_bearing(x: &StateVec) -> Result<MeasVec> {
    MeasVec::new(range_bearing_apply(x.as_vector())?)
}

pub(crate) fn range_bearing_apply(x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != CT_STATE_DIM {
        return Err(Error::DimensionMismatch {
            context: "range_bearing",
            expected: CT_STATE_DIM,
            got: x.len(),
        });
    }
    let (px, py) = (x[0], x[2]);
    let range = px.hypot(py);
    if range < 1e-9 {
        return Err(Error::OriginSingularity { range });
    }
    Ok(DVector::from_column_slice(&[range, py.atan2(px)]))
}

/// `(a - b)` wrapped into `(-pi, pi]`.
pub fn wrap_angle_residual(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = (a - b).rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Componentwise `a - b` with the listed components wrapped into `(-pi, pi]`.
pub(crate) fn residual_with_wrap(
    a: &DVector<f64>,
    b: &DVector<f64>,
    angular: &[usize],
) -> DVector<f64> {
    let mut d = a - b;
    for &i in angular {
        d[i] = wrap_angle_residual(a[i], b[i]);
    }
    d
}

pub(crate) fn wrap_components_in_place(v: &mut DVector<f64>, angular: &[usize]) {
    for &i in angular {
        v[i] = wrap_angle_residual(v[i], 0.0);
    }
}

/// Deterministic state transition applied pointwise to sigma points.
pub trait ProcessModel {
    fn state_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Measurement function applied pointwise to sigma points. Components
/// listed by `angular_components` are treated as angles: all residuals
/// and weighted means involving them are computed with wrapping.
pub trait MeasurementModel {
    fn meas_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn angular_components(&self) -> &[usize] {
        &[]
    }
}

/// Coordinated-turn process model (see [`ct_transition`]).
#[derive(Debug, Clone, Copy)]
pub struct CoordinatedTurn {
    pub cfg: CtModelConfig,
}

impl ProcessModel for CoordinatedTurn {
    fn state_dim(&self) -> usize {
        CT_STATE_DIM
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        ct_apply(x, &self.cfg)
    }
}

/// Range-bearing sensor model (see [`range_bearing`]).
#[derive(Debug, Clone, Copy, Default)]
pub struct RangeBearing;

const RB_ANGULAR: [usize; 1] = [BEARING_COMPONENT];

impl MeasurementModel for RangeBearing {
    fn meas_dim(&self) -> usize {
        RB_MEAS_DIM
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        range_bearing_apply(x)
    }
    fn angular_components(&self) -> &[usize] {
        &RB_ANGULAR
    }
}

/// Linear process `x' = A x`, used by the closed-form Kalman oracles.
#[derive(Debug, Clone)]
pub struct LinearProcess {
    pub matrix: DMatrix<f64>,
}

impl ProcessModel for LinearProcess {
    fn state_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * x)
    }
}

/// Linear measurement `z = H x`, no angular components.
#[derive(Debug, Clone)]
pub struct LinearMeasurement {
    pub matrix: DMatrix<f64>,
}

impl MeasurementModel for LinearMeasurement {
    fn meas_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.matrix * x)
    }
}
