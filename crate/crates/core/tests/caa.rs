mod common;

use common::{dist, two_blobs};
use proptest::prelude::*;
use pupiltrack::caa::{self, CaaConfig, CaaState, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Textbook fuzzy c-means (m = 2) step: memberships from prototypes, then
/// prototypes from memberships.
fn fcm_step(features: &[[f64; 3]], protos: &[[f64; 3]]) -> (Vec<Vec<f64>>, Vec<[f64; 3]>) {
    let d2 = |f: &[f64; 3], p: &[f64; 3]| {
        f.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().max(1e-12)
    };
    let u: Vec<Vec<f64>> = protos
        .iter()
        .map(|p| {
            features
                .iter()
                .map(|f| 1.0 / protos.iter().map(|q| d2(f, p) / d2(f, q)).sum::<f64>())
                .collect()
        })
        .collect();
    let new_protos = u
        .iter()
        .map(|row| {
            let w: f64 = row.iter().map(|x| x * x).sum();
            let mut p = [0.0; 3];
            for (x, f) in row.iter().zip(features) {
                for d in 0..3 {
                    p[d] += x * x * f[d] / w;
                }
            }
            p
        })
        .collect();
    (u, new_protos)
}

#[test]
fn zero_alpha_iteration_is_fuzzy_c_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<[f64; 3]> = (0..60).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let features = Points::from_rows(&rows);
    let cfg = CaaConfig {
        initial_clusters: 4,
        eta0: 0.0,
        cardinality_epsilon: Some(1e-9),
        ..CaaConfig::default()
    };
    let mut state = caa::initial_state(&features, &cfg).unwrap();
    assert_eq!(state.alpha, 0.0);
    let mut protos: Vec<[f64; 3]> = state.prototypes.iter().map(|p| [p[0], p[1], p[2]]).collect();
    for _ in 0..5 {
        let (u, next) = fcm_step(&rows, &protos);
        state = caa::iterate(&state, &features, &cfg);
        assert_eq!(state.cluster_count(), 4);
        for c in 0..4 {
            for j in 0..rows.len() {
                assert!((state.membership(c, j) - u[c][j]).abs() < 1e-12);
            }
            assert!(dist(state.prototypes.point(c), &next[c]) < 1e-12);
        }
        protos = next;
    }
}

#[test]
fn zero_alpha_objective_is_non_increasing() {
    let (features, _, _) = two_blobs(3);
    let cfg = CaaConfig {
        initial_clusters: 6,
        eta0: 0.0,
        cardinality_epsilon: Some(1e-9),
        ..CaaConfig::default()
    };
    let mut state = caa::initial_state(&features, &cfg).unwrap();
    let mut prev = caa::objective(&features, &state.prototypes, &state.memberships, 0.0).unwrap();
    for _ in 0..30 {
        state = caa::iterate(&state, &features, &cfg);
        let j = caa::objective(&features, &state.prototypes, &state.memberships, 0.0).unwrap();
        assert!(j <= prev + 1e-12, "{j} > {prev}");
        prev = j;
    }
}

#[test]
fn two_blobs_agglomerate_to_two_clusters() {
    let mut good = 0;
    for seed in 0..20 {
        let (features, a, b) = two_blobs(seed);
        let cfg = CaaConfig { seed, ..CaaConfig::default() };
        let state = caa::run(&features, &cfg).unwrap();
        let ok = state.cluster_count() == 2
            && state.prototypes.iter().all(|p| dist(p, &a) < 0.05 || dist(p, &b) < 0.05)
            && state.prototypes.iter().any(|p| dist(p, &a) < 0.05)
            && state.prototypes.iter().any(|p| dist(p, &b) < 0.05);
        if !ok {
            eprintln!("seed {seed}: C = {} after {} iterations", state.cluster_count(), state.iteration);
        }
        good += ok as usize;
    }
    assert!(good >= 19, "{good}/20");
}

#[test]
fn single_blob_agglomerates_to_one_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spread = Normal::new(0.0, 0.02).unwrap();
    let rows: Vec<[f64; 3]> = (0..100)
        .map(|_| [0.5 + spread.sample(&mut rng), 0.4 + spread.sample(&mut rng), 0.3 + spread.sample(&mut rng)])
        .collect();
    let state = caa::run(&Points::from_rows(&rows), &CaaConfig::default()).unwrap();
    assert_eq!(state.cluster_count(), 1);
}

fn check_invariants(state: &CaaState, features: &Points, floor: f64) {
    let c_count = state.cluster_count();
    assert!(c_count >= 1);
    for j in 0..features.len() {
        let s: f64 = (0..c_count).map(|c| state.membership(c, j)).sum();
        assert!((s - 1.0).abs() < 1e-12, "column {j} sums to {s}");
    }
    if c_count > 1 {
        assert!(state.cardinalities.iter().all(|&n| n >= floor));
    }
    for d in 0..features.dim() {
        let lo = features.iter().map(|f| f[d]).fold(f64::INFINITY, f64::min);
        let hi = features.iter().map(|f| f[d]).fold(f64::NEG_INFINITY, f64::max);
        for p in state.prototypes.iter() {
            assert!(p[d] >= lo - 1e-12 && p[d] <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_invariants_hold_every_iteration(
        seed in 0u64..1000,
        n in 12usize..80,
        c0 in 2usize..7,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let features = Points::from_rows(&rows);
        let cfg = CaaConfig { initial_clusters: c0, seed, ..CaaConfig::default() };
        let floor = cfg.cardinality_floor(n);
        let mut state = caa::initial_state(&features, &cfg).unwrap();
        let mut count = state.cluster_count();
        for _ in 0..25 {
            state = caa::iterate(&state, &features, &cfg);
            check_invariants(&state, &features, floor);
            prop_assert!(state.cluster_count() <= count);
            count = state.cluster_count();
        }
        prop_assert_eq!(caa::run(&features, &cfg).unwrap(), caa::run(&features, &cfg).unwrap());
    }
}
