//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use pupiltrack::caa::Points;
use pupiltrack::tracker::{DynamicsModel, Measurement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

/// Two blobs of 80 points around (0.1, 0.1, 0.1) and (0.9, 0.9, 0.9), with
/// the sample mean of each blob.
pub fn two_blobs(seed: u64) -> (Points, [f64; 3], [f64; 3]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, 0.02).unwrap();
    let mut rows = Vec::new();
    for center in [0.1, 0.9] {
        for _ in 0..80 {
            rows.push([
                center + spread.sample(&mut rng),
                center + spread.sample(&mut rng),
                center + spread.sample(&mut rng),
            ]);
        }
    }
    let mean = |range: std::ops::Range<usize>| {
        let mut m = [0.0; 3];
        for r in &rows[range.clone()] {
            for d in 0..3 {
                m[d] += r[d] / range.len() as f64;
            }
        }
        m
    };
    let (a, b) = (mean(0..80), mean(80..160));
    (Points::from_rows(&rows), a, b)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Draw from `N(0, cov)` through a Cholesky factor.
fn gaussian<const N: usize>(
    rng: &mut ChaCha8Rng,
    chol: &nalgebra::SMatrix<f64, N, N>,
) -> nalgebra::SVector<f64, N> {
    let z = nalgebra::SVector::<f64, N>::from_fn(|_, _| StandardNormal.sample(rng));
    chol * z
}

fn cholesky_or_zero<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> nalgebra::SMatrix<f64, N, N> {
    if m.iter().all(|&v| v == 0.0) {
        return *m;
    }
    m.cholesky().expect("covariance must be positive definite").l()
}

/// Simulate the linear model `s_k = A s_{k−1} + q`, `c_k = H s_k + r`.
pub fn simulate_linear(
    n: usize,
    s0: Vector4<f64>,
    q: &Matrix4<f64>,
    r: &Matrix2<f64>,
    seed: u64,
) -> (Vec<Vector4<f64>>, Vec<Measurement>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DynamicsModel::new(1.0, *q).transition();
    let (lq, lr) = (cholesky_or_zero(q), cholesky_or_zero(r));
    let mut states = Vec::with_capacity(n);
    let mut meas = Vec::with_capacity(n);
    let mut s = s0;
    for k in 0..n {
        if k > 0 {
            s = a * s + gaussian(&mut rng, &lq);
        }
        let c = Vector2::new(s[0], s[2]) + gaussian(&mut rng, &lr);
        states.push(s);
        meas.push(Measurement::valid(c[0], c[1]));
    }
    (states, meas)
}

/// Random symmetric positive definite matrix `M Mᵀ + εI`.
pub fn random_spd(rng: &mut impl Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale);
    &m * m.transpose() + DMatrix::identity(n, n) * (0.01 * scale * scale)
}

/// Textbook linear Kalman filter on dynamically sized matrices.
pub struct LinearKalman {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl LinearKalman {
    pub fn step(&mut self, z: Option<&DVector<f64>>) {
        self.x = &self.a * &self.x;
        self.p = &self.a * &self.p * self.a.transpose() + &self.q;
        if let Some(z) = z {
            let s = &self.h * &self.p * self.h.transpose() + &self.r;
            let k = &self.p * self.h.transpose() * s.try_inverse().unwrap();
            self.x = &self.x + &k * (z - &self.h * &self.x);
            let i = DMatrix::identity(4, 4);
            self.p = (i - &k * &self.h) * &self.p;
            self.p = (&self.p + self.p.transpose()) * 0.5;
        }
    }
}
