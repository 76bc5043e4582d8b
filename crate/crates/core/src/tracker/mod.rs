//! Extended Kalman filter over the pupil state `s = (x, dx, y, dy)`.
//!
//! Dynamics are constant velocity, `s_k = A s_{k−1} + q_k` with
//!
//! ```text
//!     | 1 T 0 0 |
//! A = | 0 1 0 0 |        H = | 1 0 0 0 |
//!     | 0 0 1 T |            | 0 0 1 0 |
//!     | 0 0 0 1 |
//! ```
//!
//! and the detector output is modelled as `c_k = h_k(s_k) + r_k` where,
//! componentwise with `m = H s`,
//!
//! ```text
//! h_k(s)_i = exp(−b (m_i − c_{k−1,i})) · m_i .
//! ```
//!
//! `b = 0` reduces the filter to an ordinary linear Kalman filter.

mod em;
mod fit_b;

pub use em::{em_fit, log_likelihood, EmConfig, EmResult};
pub use fit_b::{fit_b, fit_b_sequence, BSample, DEFAULT_B_MAX};

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2, Vector4};
use thiserror::Error;

/// Bound on `|b (m_i − c_i)|` before exponentiation.
pub const EXPONENT_LIMIT: f64 = 30.0;

/// χ² 99% quantile with two degrees of freedom.
pub const GATE_CHI2_99: f64 = 9.21;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("EM diverged at iteration {iteration}: log-likelihood is not finite")]
    EmDiverged { iteration: usize },
    #[error("{0}")]
    InvalidInput(&'static str),
}

/// The constant selection matrix `H`.
pub fn selection() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    /// `(x, dx, y, dy)` in pixels and pixels per period.
    pub s: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub k: usize,
}

impl TrackState {
    pub fn position(&self) -> (f64, f64) {
        (self.s[0], self.s[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub period: f64,
    pub q: Matrix4<f64>,
}

impl DynamicsModel {
    pub fn new(period: f64, q: Matrix4<f64>) -> Self {
        Self { period, q }
    }

    pub fn transition(&self) -> Matrix4<f64> {
        let t = self.period;
        Matrix4::new(
            1.0, t, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, t, //
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    /// Exponent parameter, per pixel.
    pub b: f64,
    pub r: Matrix2<f64>,
    /// Previous measurement `c_{k−1}`.
    pub c_prev: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub c: Vector2<f64>,
    /// False when the detector found nothing in this frame.
    pub valid: bool,
}

impl Measurement {
    pub fn valid(x: f64, y: f64) -> Self {
        Self { c: Vector2::new(x, y), valid: true }
    }

    pub fn missing() -> Self {
        Self { c: Vector2::zeros(), valid: false }
    }

    pub fn from_option(c: Option<(f64, f64)>) -> Self {
        c.map_or_else(Self::missing, |(x, y)| Self::valid(x, y))
    }
}

#[inline]
fn clamped_exponent(b: f64, m: f64, c: f64) -> f64 {
    (-b * (m - c)).clamp(-EXPONENT_LIMIT, EXPONENT_LIMIT)
}

/// `h(s)`.
pub fn observe(s: &Vector4<f64>, obs: &ObservationModel) -> Vector2<f64> {
    let m = selection() * s;
    Vector2::from_fn(|i, _| clamped_exponent(obs.b, m[i], obs.c_prev[i]).exp() * m[i])
}

/// `∂h/∂sᵀ`: row `i` is `exp(−b (m_i − c_i)) (1 − b m_i)` times row `i` of `H`.
/// Where the exponent clamp is active the exponential is treated as constant.
pub fn observe_jacobian(s: &Vector4<f64>, obs: &ObservationModel) -> Matrix2x4<f64> {
    let m = selection() * s;
    let mut jac = Matrix2x4::zeros();
    for (i, col) in [(0, 0), (1, 2)] {
        let raw = -obs.b * (m[i] - obs.c_prev[i]);
        let e = clamped_exponent(obs.b, m[i], obs.c_prev[i]).exp();
        jac[(i, col)] = if raw.abs() > EXPONENT_LIMIT { e } else { e * (1.0 - obs.b * m[i]) };
    }
    jac
}

pub fn predict(state: &TrackState, dynamics: &DynamicsModel) -> TrackState {
    let a = dynamics.transition();
    TrackState {
        s: a * state.s,
        p: symmetrize(&(a * state.p * a.transpose() + dynamics.q)),
        k: state.k + 1,
    }
}

/// Innovation `c − h(ŝ)`, its covariance `S`, and the Jacobian at `ŝ`.
pub fn innovation(
    pred: &TrackState,
    c: &Vector2<f64>,
    obs: &ObservationModel,
) -> (Vector2<f64>, Matrix2<f64>, Matrix2x4<f64>) {
    let jac = observe_jacobian(&pred.s, obs);
    let nu = c - observe(&pred.s, obs);
    let s = symmetrize2(&(jac * pred.p * jac.transpose() + obs.r));
    (nu, s, jac)
}

/// Normalized innovation squared `νᵀ S⁻¹ ν`, `None` when `S` is singular.
pub fn normalized_innovation(pred: &TrackState, c: &Vector2<f64>, obs: &ObservationModel) -> Option<f64> {
    let (nu, s, _) = innovation(pred, c, obs);
    s.try_inverse().map(|inv| (nu.transpose() * inv * nu)[0])
}

/// Measurement update at the predicted state. On success `obs.c_prev`
/// advances to this measurement.
pub fn update(
    pred: &TrackState,
    meas: &Measurement,
    obs: &mut ObservationModel,
) -> Result<TrackState, TrackError> {
    let (nu, s, jac) = innovation(pred, &meas.c, obs);
    let s_inv = s.try_inverse().ok_or(TrackError::SingularInnovation)?;
    let gain: Matrix4x2<f64> = pred.p * jac.transpose() * s_inv;
    let p = (Matrix4::identity() - gain * jac) * pred.p;
    obs.c_prev = meas.c;
    Ok(TrackState { s: pred.s + gain * nu, p: symmetrize(&p), k: pred.k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Updated,
    /// Measurement present but rejected by the innovation gate.
    Gated,
    Missing,
}

/// Predict, then update with the measurement if it is valid and passes the
/// gate; otherwise coast on the prediction with `c_prev` advanced to `H ŝ`.
pub fn step_frame(
    state: &TrackState,
    meas: &Measurement,
    dynamics: &DynamicsModel,
    obs: &mut ObservationModel,
    gate: Option<f64>,
) -> (TrackState, StepOutcome) {
    let pred = predict(state, dynamics);
    let coast = |pred: TrackState, obs: &mut ObservationModel, outcome| {
        obs.c_prev = selection() * pred.s;
        (pred, outcome)
    };
    if !meas.valid {
        return coast(pred, obs, StepOutcome::Missing);
    }
    if let Some(threshold) = gate {
        match normalized_innovation(&pred, &meas.c, obs) {
            Some(nis) if nis <= threshold => {}
            _ => return coast(pred, obs, StepOutcome::Gated),
        }
    }
    match update(&pred, meas, obs) {
        Ok(next) => (next, StepOutcome::Updated),
        Err(_) => coast(pred, obs, StepOutcome::Gated),
    }
}

pub fn symmetrize(p: &Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

fn symmetrize2(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// Symmetric part with eigenvalues raised to at least `floor`.
pub fn project_psd4(p: &Matrix4<f64>, floor: f64) -> Matrix4<f64> {
    let eig = SymmetricEigen::new(symmetrize(p));
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(eig.eigenvectors * Matrix4::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

pub fn project_psd2(p: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(symmetrize2(p));
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize2(&(eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

/// Initial belief: position from the first detection, zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialBelief {
    pub p0: Matrix4<f64>,
}

impl Default for InitialBelief {
    fn default() -> Self {
        Self { p0: Matrix4::from_diagonal(&Vector4::new(4.0, 25.0, 4.0, 25.0)) }
    }
}

impl InitialBelief {
    pub fn state_at(&self, c: &Vector2<f64>, k: usize) -> TrackState {
        TrackState { s: Vector4::new(c[0], 0.0, c[1], 0.0), p: self.p0, k }
    }
}

/// A filter instance that owns its models and carries state across frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub dynamics: DynamicsModel,
    pub observation: ObservationModel,
    pub init: InitialBelief,
    pub gate: Option<f64>,
    state: Option<TrackState>,
    frame: usize,
}

impl Tracker {
    pub fn new(
        dynamics: DynamicsModel,
        observation: ObservationModel,
        init: InitialBelief,
        gate: Option<f64>,
    ) -> Self {
        Self { dynamics, observation, init, gate, state: None, frame: 0 }
    }

    pub fn state(&self) -> Option<&TrackState> {
        self.state.as_ref()
    }

    /// Consume one frame's measurement. Returns `None` until the first valid
    /// measurement initializes the filter.
    pub fn step(&mut self, meas: &Measurement) -> Option<(TrackState, StepOutcome)> {
        let frame = self.frame;
        self.frame += 1;
        let result = match &self.state {
            None if meas.valid => {
                self.observation.c_prev = meas.c;
                (self.init.state_at(&meas.c, frame), StepOutcome::Updated)
            }
            None => return None,
            Some(state) => step_frame(state, meas, &self.dynamics, &mut self.observation, self.gate),
        };
        self.state = Some(result.0.clone());
        Some(result)
    }
}
