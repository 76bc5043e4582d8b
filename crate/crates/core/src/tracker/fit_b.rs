//! Least-squares fit of the observation exponent `b`.

use nalgebra::{Vector2, Vector4};

use super::{observe, ObservationModel, TrackError};

pub const DEFAULT_B_MAX: f64 = 0.05;

const GRID_STEPS: usize = 500;
const TOLERANCE: f64 = 1e-8;

/// One term of the least-squares objective: a state, the measurement it
/// produced, and the measurement before it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BSample {
    pub state: Vector4<f64>,
    pub measurement: Vector2<f64>,
    pub prev_measurement: Vector2<f64>,
}

fn objective(samples: &[BSample], b: f64) -> f64 {
    samples
        .iter()
        .map(|smp| {
            let obs = ObservationModel { b, r: Default::default(), c_prev: smp.prev_measurement };
            (smp.measurement - observe(&smp.state, &obs)).norm_squared()
        })
        .sum()
}

/// `argmin_{b ∈ [0, b_max]} Σ ‖c_k − h_k(s_k)‖²`.
///
/// A uniform grid locates the best cell, golden-section search refines it to
/// `1e-8`. Ties resolve to the smaller `b`, so an objective that does not
/// depend on `b` yields 0.
pub fn fit_b(samples: &[BSample], b_max: f64) -> Result<f64, TrackError> {
    if samples.is_empty() {
        return Err(TrackError::InvalidInput("fit_b needs at least one sample"));
    }
    if !(b_max.is_finite() && b_max >= 0.0) {
        return Err(TrackError::InvalidInput("b_max must be finite and non-negative"));
    }
    let f = |b: f64| objective(samples, b);
    let step = b_max / GRID_STEPS as f64;
    let grid = |i: usize| if i == GRID_STEPS { b_max } else { i as f64 * step };

    let mut best = (0.0, f(0.0));
    let mut best_i = 0;
    for i in 1..=GRID_STEPS {
        let b = grid(i);
        let v = f(b);
        if v < best.1 {
            best = (b, v);
            best_i = i;
        }
    }

    let (mut lo, mut hi) = (grid(best_i.saturating_sub(1)), grid((best_i + 1).min(GRID_STEPS)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > TOLERANCE {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let refined = 0.5 * (lo + hi);
    let fr = f(refined);
    if fr < best.1 {
        best = (refined, fr);
    }
    Ok(best.0)
}

/// Build samples from consecutive frames: term `k` pairs `states[k]` and
/// `measurements[k]` with `measurements[k − 1]`.
pub fn fit_b_sequence(
    states: &[Vector4<f64>],
    measurements: &[Vector2<f64>],
    b_max: f64,
) -> Result<f64, TrackError> {
    if states.len() != measurements.len() {
        return Err(TrackError::InvalidInput("states and measurements differ in length"));
    }
    if states.len() < 2 {
        return Err(TrackError::InvalidInput("fit_b needs at least two frames"));
    }
    let samples: Vec<BSample> = (1..states.len())
        .map(|k| BSample {
            state: states[k],
            measurement: measurements[k],
            prev_measurement: measurements[k - 1],
        })
        .collect();
    fit_b(&samples, b_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_selection_gives_zero() {
        let states: Vec<_> = (0..10).map(|k| Vector4::new(100.0 + k as f64, 1.0, 50.0, 0.0)).collect();
        let meas: Vec<_> = states.iter().map(|s| Vector2::new(s[0], s[2])).collect();
        assert_eq!(fit_b_sequence(&states, &meas, DEFAULT_B_MAX).unwrap(), 0.0);
    }

    #[test]
    fn flat_objective_ties_to_zero() {
        let s = BSample {
            state: Vector4::new(40.0, 0.0, 30.0, 0.0),
            measurement: Vector2::new(41.0, 29.0),
            prev_measurement: Vector2::new(40.0, 30.0),
        };
        assert_eq!(fit_b(&[s], DEFAULT_B_MAX).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(fit_b(&[], DEFAULT_B_MAX).is_err());
        assert!(fit_b_sequence(&[Vector4::zeros()], &[Vector2::zeros()], DEFAULT_B_MAX).is_err());
    }
}
