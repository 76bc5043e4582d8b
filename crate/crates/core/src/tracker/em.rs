//! Expectation-maximization for the noise covariances `Q` and `R`.
//!
//! The E-step is an extended RTS smoother: the EKF forward pass followed by
//! the Rauch–Tung–Striebel backward pass. The M-step re-estimates `Q` from
//! the smoothed transition residual moments and `R` from the smoothed
//! measurement residuals, linearizing `h` at the smoothed states.
//!
//! The filter starts at the first valid measurement with the prior of
//! [`InitialBelief`], exactly as [`super::Tracker`] does. That measurement
//! only seeds the prior, so the likelihood counts the frames after it.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};

use super::{
    innovation, observe, observe_jacobian, project_psd2, project_psd4, selection, symmetrize,
    DynamicsModel, InitialBelief, Measurement, ObservationModel, TrackError, TrackState,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub iterations: usize,
    /// Smallest eigenvalue allowed in the re-estimated `Q` and `R`.
    pub floor: f64,
    pub init: InitialBelief,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { iterations: 20, floor: 1e-9, init: InitialBelief::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    /// Log-likelihood of the initial parameters and after each iteration.
    pub log_likelihoods: Vec<f64>,
}

struct Forward {
    m_pred: Vec<Vector4<f64>>,
    p_pred: Vec<Matrix4<f64>>,
    m: Vec<Vector4<f64>>,
    p: Vec<Matrix4<f64>>,
    /// `c_{k−1}` as seen by the observation model at frame `k`.
    c_prev: Vec<Vector2<f64>>,
    log_likelihood: f64,
}

fn forward(
    meas: &[Measurement],
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    init: &InitialBelief,
) -> Result<Forward, TrackError> {
    let n = meas.len();
    let mut out = Forward {
        m_pred: Vec::with_capacity(n),
        p_pred: Vec::with_capacity(n),
        m: Vec::with_capacity(n),
        p: Vec::with_capacity(n),
        c_prev: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let first = init.state_at(&meas[0].c, 0);
    let mut obs = ObservationModel { c_prev: meas[0].c, ..obs.clone() };
    let log_2pi = (2.0 * std::f64::consts::PI).ln();
    let a = dynamics.transition();

    out.m_pred.push(first.s);
    out.p_pred.push(first.p);
    out.m.push(first.s);
    out.p.push(first.p);
    out.c_prev.push(meas[0].c);
    let mut state = first;
    for (k, mk) in meas.iter().enumerate().skip(1) {
        let pred = TrackState {
            s: a * state.s,
            p: symmetrize(&(a * state.p * a.transpose() + dynamics.q)),
            k,
        };
        out.m_pred.push(pred.s);
        out.p_pred.push(pred.p);
        out.c_prev.push(obs.c_prev);
        state = if mk.valid {
            let (nu, s, jac) = innovation(&pred, &mk.c, &obs);
            let chol = s.cholesky().ok_or(TrackError::SingularInnovation)?;
            let s_inv = chol.inverse();
            let det = s.determinant();
            out.log_likelihood -= 0.5 * (2.0 * log_2pi + det.ln() + (nu.transpose() * s_inv * nu)[0]);
            let gain: Matrix4x2<f64> = pred.p * jac.transpose() * s_inv;
            obs.c_prev = mk.c;
            TrackState {
                s: pred.s + gain * nu,
                p: symmetrize(&((Matrix4::identity() - gain * jac) * pred.p)),
                k,
            }
        } else {
            obs.c_prev = selection() * pred.s;
            pred
        };
        out.m.push(state.s);
        out.p.push(state.p);
    }
    Ok(out)
}

/// Trim leading invalid frames; the sequence starts at the first detection.
fn from_first_valid(meas: &[Measurement]) -> Result<&[Measurement], TrackError> {
    let start = meas
        .iter()
        .position(|m| m.valid)
        .ok_or(TrackError::InvalidInput("no valid measurement"))?;
    Ok(&meas[start..])
}

/// Observed-data log-likelihood in innovation form.
pub fn log_likelihood(
    measurements: &[Measurement],
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    init: &InitialBelief,
) -> Result<f64, TrackError> {
    Ok(forward(from_first_valid(measurements)?, dynamics, obs, init)?.log_likelihood)
}

/// Run `cfg.iterations` EM steps starting from `dynamics.q` and `obs.r`.
pub fn em_fit(
    measurements: &[Measurement],
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    cfg: &EmConfig,
) -> Result<EmResult, TrackError> {
    if measurements.len() < 10 {
        return Err(TrackError::InvalidInput("EM needs at least 10 frames"));
    }
    let meas = from_first_valid(measurements)?;
    let n = meas.len();
    if meas.iter().skip(1).filter(|m| m.valid).count() == 0 {
        return Err(TrackError::InvalidInput("EM needs valid measurements after the first"));
    }
    let a = dynamics.transition();
    let mut dynamics = dynamics.clone();
    let mut obs = obs.clone();
    let mut lls = Vec::with_capacity(cfg.iterations + 1);

    for iteration in 0..=cfg.iterations {
        let fw = forward(meas, &dynamics, &obs, &cfg.init).map_err(|e| match e {
            TrackError::SingularInnovation => TrackError::EmDiverged { iteration },
            other => other,
        })?;
        if !fw.log_likelihood.is_finite() {
            return Err(TrackError::EmDiverged { iteration });
        }
        lls.push(fw.log_likelihood);
        if iteration == cfg.iterations {
            break;
        }

        // Backward pass.
        let mut ms = fw.m.clone();
        let mut ps = fw.p.clone();
        let mut gains = vec![Matrix4::zeros(); n];
        for k in (0..n - 1).rev() {
            let pred_inv = fw.p_pred[k + 1]
                .try_inverse()
                .ok_or(TrackError::EmDiverged { iteration })?;
            let g = fw.p[k] * a.transpose() * pred_inv;
            ms[k] = fw.m[k] + g * (ms[k + 1] - fw.m_pred[k + 1]);
            ps[k] = symmetrize(&(fw.p[k] + g * (ps[k + 1] - fw.p_pred[k + 1]) * g.transpose()));
            gains[k] = g;
        }

        // M-step.
        let mut q_acc = Matrix4::zeros();
        for k in 1..n {
            let e = ms[k] - a * ms[k - 1];
            let cross = ps[k] * gains[k - 1].transpose();
            q_acc += e * e.transpose() + ps[k] - cross * a.transpose() - a * cross.transpose()
                + a * ps[k - 1] * a.transpose();
        }
        let mut r_acc = Matrix2::zeros();
        let mut r_count = 0usize;
        for k in 1..n {
            if !meas[k].valid {
                continue;
            }
            let at_k = ObservationModel { c_prev: fw.c_prev[k], ..obs.clone() };
            let resid = meas[k].c - observe(&ms[k], &at_k);
            let jac = observe_jacobian(&ms[k], &at_k);
            r_acc += resid * resid.transpose() + jac * ps[k] * jac.transpose();
            r_count += 1;
        }
        dynamics.q = project_psd4(&(q_acc / (n - 1) as f64), cfg.floor);
        obs.r = project_psd2(&(r_acc / r_count as f64), cfg.floor);
    }
    Ok(EmResult { q: dynamics.q, r: obs.r, log_likelihoods: lls })
}
