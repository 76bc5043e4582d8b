//! Competitive Agglomeration clustering (Frigui & Krishnapuram).
//!
//! Minimizes
//!
//! ```text
//! J = Σ_c Σ_j u_cj² d²(f_j, p_c) − α Σ_c N_c²,     N_c = Σ_j u_cj,
//! ```
//!
//! subject to `Σ_c u_cj = 1` for every point `j`. The first term is the fuzzy
//! c-means objective (fuzzifier 2); the second rewards large clusters, so
//! clusters that lose the competition for points shrink below a cardinality
//! floor and are discarded. The run therefore starts with an over-specified
//! cluster count and ends with the number the data supports.
//!
//! The agglomeration weight follows `α(k) = η₀ e^{−k/τ} · Σ u² d² / Σ N²`,
//! which is strong early (merging) and fades so that the final iterations are
//! plain fuzzy c-means refinement.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MIN_SQ_DIST: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CaaError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot draw {clusters} initial prototypes from {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("invalid clustering configuration: {0}")]
    InvalidConfig(&'static str),
}

/// A set of equal-dimension points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self, CaaError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(CaaError::DimensionMismatch(format!(
                "{} values do not split into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Self {
        Self {
            dim: D,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaaConfig {
    /// Over-specified starting cluster count `C₀`.
    pub initial_clusters: usize,
    pub max_iterations: usize,
    /// Stop once no prototype moves farther than this in one iteration.
    pub convergence_epsilon: f64,
    /// Agglomeration strength `η₀`.
    pub eta0: f64,
    /// Decay time constant `τ` of the agglomeration strength, in iterations.
    pub tau: f64,
    /// Clusters whose cardinality falls below this are discarded.
    /// `None` selects `max(5, J / 50)`.
    pub cardinality_epsilon: Option<f64>,
    pub seed: u64,
}

impl Default for CaaConfig {
    fn default() -> Self {
        Self {
            initial_clusters: 5,
            max_iterations: 100,
            convergence_epsilon: 1e-3,
            eta0: 3.0,
            tau: 10.0,
            cardinality_epsilon: None,
            seed: 0,
        }
    }
}

impl CaaConfig {
    pub fn validate(&self) -> Result<(), CaaError> {
        if self.initial_clusters < 2 {
            return Err(CaaError::InvalidConfig("initial cluster count must be at least 2"));
        }
        if self.max_iterations == 0 {
            return Err(CaaError::InvalidConfig("max_iterations must be at least 1"));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(CaaError::InvalidConfig("convergence_epsilon must be positive"));
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return Err(CaaError::InvalidConfig("eta0 must be non-negative"));
        }
        if !(self.tau > 0.0) {
            return Err(CaaError::InvalidConfig("tau must be positive"));
        }
        if let Some(eps) = self.cardinality_epsilon {
            if !(eps > 0.0) {
                return Err(CaaError::InvalidConfig("cardinality_epsilon must be positive"));
            }
        }
        Ok(())
    }

    pub fn cardinality_floor(&self, points: usize) -> f64 {
        self.cardinality_epsilon
            .unwrap_or_else(|| (points as f64 / 50.0).max(5.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaaState {
    pub prototypes: Points,
    /// `C × J`, row `c` holds the memberships of every point in cluster `c`.
    pub memberships: Vec<f64>,
    pub cardinalities: Vec<f64>,
    pub alpha: f64,
    pub iteration: usize,
    /// Index each surviving cluster had at initialization.
    pub ids: Vec<usize>,
    /// `C × J` squared distances to the current prototypes, floored at 1e-12.
    pub distances: Vec<f64>,
}

impl CaaState {
    pub fn cluster_count(&self) -> usize {
        self.prototypes.len()
    }

    pub fn point_count(&self) -> usize {
        self.memberships.len() / self.cluster_count().max(1)
    }

    #[inline]
    pub fn membership(&self, cluster: usize, point: usize) -> f64 {
        self.memberships[cluster * self.point_count() + point]
    }

    /// Cluster of maximum membership for each point; lowest index on ties.
    pub fn hard_assignments(&self) -> Vec<usize> {
        let (c_count, j_count) = (self.cluster_count(), self.point_count());
        (0..j_count)
            .map(|j| {
                let mut best = 0;
                for c in 1..c_count {
                    if self.memberships[c * j_count + j] > self.memberships[best * j_count + j] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// `Σ_c Σ_j u_cj² ‖f_j − p_c‖² − α Σ_c N_c²` with `memberships` laid out `C × J`.
pub fn objective(
    features: &Points,
    prototypes: &Points,
    memberships: &[f64],
    alpha: f64,
) -> Result<f64, CaaError> {
    if features.dim() != prototypes.dim() {
        return Err(CaaError::DimensionMismatch(format!(
            "features have dimension {}, prototypes {}",
            features.dim(),
            prototypes.dim()
        )));
    }
    let (c_count, j_count) = (prototypes.len(), features.len());
    if memberships.len() != c_count * j_count {
        return Err(CaaError::DimensionMismatch(format!(
            "membership matrix has {} entries, expected {c_count}×{j_count}",
            memberships.len()
        )));
    }
    let mut fuzzy = 0.0;
    let mut reward = 0.0;
    for (c, p) in prototypes.iter().enumerate() {
        let row = &memberships[c * j_count..(c + 1) * j_count];
        let mut n_c = 0.0;
        for (u, f) in row.iter().zip(features.iter()) {
            fuzzy += u * u * sq_dist(f, p);
            n_c += u;
        }
        reward += n_c * n_c;
    }
    Ok(fuzzy - alpha * reward)
}

/// Seeded draw of `clusters` distinct feature indices, without replacement.
pub fn init_prototypes(features: &Points, clusters: usize, seed: u64) -> Result<Points, CaaError> {
    if features.len() < clusters {
        return Err(CaaError::TooFewPoints { points: features.len(), clusters });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, features.len(), clusters);
    let data = picks
        .iter()
        .flat_map(|i| features.point(i).iter().copied())
        .collect();
    Ok(Points { dim: features.dim(), data })
}

fn sq_distances_fixed<const D: usize>(features: &[f64], prototypes: &[f64], out: &mut [f64]) {
    let j_count = features.len() / D;
    for (p, row) in prototypes.chunks_exact(D).zip(out.chunks_exact_mut(j_count)) {
        let p: &[f64; D] = p.try_into().expect("chunk of length D");
        for (o, f) in row.iter_mut().zip(features.chunks_exact(D)) {
            let mut acc = 0.0;
            for d in 0..D {
                let t = f[d] - p[d];
                acc += t * t;
            }
            *o = acc.max(MIN_SQ_DIST);
        }
    }
}

fn sq_distances(features: &Points, prototypes: &Points) -> Vec<f64> {
    let j_count = features.len();
    let mut out = vec![0.0; prototypes.len() * j_count];
    match features.dim() {
        2 => sq_distances_fixed::<2>(&features.data, &prototypes.data, &mut out),
        3 => sq_distances_fixed::<3>(&features.data, &prototypes.data, &mut out),
        _ => {
            for (c, p) in prototypes.iter().enumerate() {
                for (j, f) in features.iter().enumerate() {
                    out[c * j_count + j] = sq_dist(f, p).max(MIN_SQ_DIST);
                }
            }
        }
    }
    out
}

/// `Σ_j u_j² f_j` and `Σ_j u_j²` for one membership row.
fn weighted_sum_fixed<const D: usize>(row: &[f64], features: &[f64], acc: &mut [f64]) -> f64 {
    let mut sums = [0.0; D];
    let mut weight = 0.0;
    for (uv, f) in row.iter().zip(features.chunks_exact(D)) {
        let w = uv * uv;
        weight += w;
        for d in 0..D {
            sums[d] += w * f[d];
        }
    }
    acc.copy_from_slice(&sums);
    weight
}

fn weighted_sum(row: &[f64], features: &Points, acc: &mut [f64]) -> f64 {
    match features.dim() {
        2 => weighted_sum_fixed::<2>(row, &features.data, acc),
        3 => weighted_sum_fixed::<3>(row, &features.data, acc),
        _ => {
            let mut weight = 0.0;
            for (uv, f) in row.iter().zip(features.iter()) {
                let w = uv * uv;
                weight += w;
                for (a, x) in acc.iter_mut().zip(f) {
                    *a += w * x;
                }
            }
            weight
        }
    }
}

fn fcm_column(d2: &[f64], c_count: usize, j_count: usize, j: usize, out: &mut [f64]) {
    let inv_sum: f64 = (0..c_count).map(|c| 1.0 / d2[c * j_count + j]).sum();
    for c in 0..c_count {
        out[c * j_count + j] = (1.0 / d2[c * j_count + j]) / inv_sum;
    }
}

fn cardinalities(memberships: &[f64], c_count: usize, j_count: usize) -> Vec<f64> {
    (0..c_count)
        .map(|c| memberships[c * j_count..(c + 1) * j_count].iter().sum())
        .collect()
}

fn agglomeration_weight(
    eta0: f64,
    tau: f64,
    iteration: usize,
    d2: &[f64],
    memberships: &[f64],
    cards: &[f64],
) -> f64 {
    let fuzzy: f64 = memberships.iter().zip(d2).map(|(u, d)| u * u * d).sum();
    let reward: f64 = cards.iter().map(|n| n * n).sum();
    if reward <= 0.0 {
        return 0.0;
    }
    eta0 * (-(iteration as f64) / tau).exp() * fuzzy / reward
}

/// Initial prototypes, fuzzy c-means memberships and `α` at iteration 0.
pub fn initial_state(features: &Points, config: &CaaConfig) -> Result<CaaState, CaaError> {
    config.validate()?;
    let prototypes = init_prototypes(features, config.initial_clusters, config.seed)?;
    let (c_count, j_count) = (prototypes.len(), features.len());
    let d2 = sq_distances(features, &prototypes);
    let mut memberships = vec![0.0; c_count * j_count];
    for j in 0..j_count {
        fcm_column(&d2, c_count, j_count, j, &mut memberships);
    }
    let cards = cardinalities(&memberships, c_count, j_count);
    let alpha = agglomeration_weight(config.eta0, config.tau, 0, &d2, &memberships, &cards);
    Ok(CaaState {
        prototypes,
        memberships,
        cardinalities: cards,
        alpha,
        iteration: 0,
        ids: (0..c_count).collect(),
        distances: d2,
    })
}

/// One round: membership update with the cardinality bias, clamping,
/// discarding of weak clusters, prototype update, then the new `α`.
pub fn iterate(state: &CaaState, features: &Points, config: &CaaConfig) -> CaaState {
    let j_count = features.len();
    let c_count = state.cluster_count();
    let d2 = &state.distances;
    let cards = &state.cardinalities;

    // (1)-(2) biased memberships, clamped into [0, 1] and renormalized.
    // Row-wise passes over the C × J layout.
    let mut u: Vec<f64> = d2.iter().map(|d| 1.0 / d).collect();
    let mut inv_sum = vec![0.0; j_count];
    let mut mean_card = vec![0.0; j_count];
    for c in 0..c_count {
        let row = &u[c * j_count..(c + 1) * j_count];
        for j in 0..j_count {
            inv_sum[j] += row[j];
            mean_card[j] += row[j] * cards[c];
        }
    }
    // From here on `inv_sum` holds its reciprocal.
    for j in 0..j_count {
        inv_sum[j] = 1.0 / inv_sum[j];
        mean_card[j] *= inv_sum[j];
    }
    let mut col_sum = vec![0.0; j_count];
    for c in 0..c_count {
        let row = &mut u[c * j_count..(c + 1) * j_count];
        for j in 0..j_count {
            let inv = row[j];
            let fcm = inv * inv_sum[j];
            let bias = state.alpha * inv * (cards[c] - mean_card[j]);
            let v = (fcm + bias).clamp(0.0, 1.0);
            row[j] = v;
            col_sum[j] += v;
        }
    }
    let col_scale: Vec<f64> = col_sum
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    for c in 0..c_count {
        let row = &mut u[c * j_count..(c + 1) * j_count];
        for (v, k) in row.iter_mut().zip(&col_scale) {
            *v *= k;
        }
    }
    for j in 0..j_count {
        if col_sum[j] <= 0.0 {
            fcm_column(d2, c_count, j_count, j, &mut u);
        }
    }

    // (3) discard clusters below the cardinality floor and merge clusters
    // whose prototypes coincide; at least one cluster always survives.
    let floor = config.cardinality_floor(j_count);
    let new_cards = cardinalities(&u, c_count, j_count);
    let mut keep: Vec<usize> = (0..c_count).filter(|&c| new_cards[c] >= floor).collect();
    if keep.is_empty() {
        let best = (0..c_count)
            .fold(0, |best, c| if new_cards[c] > new_cards[best] { c } else { best });
        keep.push(best);
    }
    let mut merged_into: Vec<Option<usize>> = vec![None; c_count];
    for (i, &a) in keep.iter().enumerate() {
        if merged_into[a].is_some() {
            continue;
        }
        for &b in &keep[i + 1..] {
            if merged_into[b].is_none()
                && sq_dist(state.prototypes.point(a), state.prototypes.point(b)) <= MIN_SQ_DIST
            {
                merged_into[b] = Some(a);
            }
        }
    }
    let survivors: Vec<usize> = keep.into_iter().filter(|&c| merged_into[c].is_none()).collect();

    let mut memberships = if survivors.len() == c_count {
        u
    } else {
        let s_count = survivors.len();
        let mut m = vec![0.0; s_count * j_count];
        for (si, &c) in survivors.iter().enumerate() {
            m[si * j_count..(si + 1) * j_count].copy_from_slice(&u[c * j_count..(c + 1) * j_count]);
            for (b, target) in merged_into.iter().enumerate() {
                if *target == Some(c) {
                    for j in 0..j_count {
                        m[si * j_count + j] += u[b * j_count + j];
                    }
                }
            }
        }
        let surv_d2: Vec<f64> = survivors
            .iter()
            .flat_map(|&c| d2[c * j_count..(c + 1) * j_count].iter().copied())
            .collect();
        for j in 0..j_count {
            let col_sum: f64 = (0..s_count).map(|s| m[s * j_count + j]).sum();
            if col_sum > 0.0 {
                for s in 0..s_count {
                    m[s * j_count + j] /= col_sum;
                }
            } else {
                fcm_column(&surv_d2, s_count, j_count, j, &mut m);
            }
        }
        m
    };
    let s_count = survivors.len();
    if s_count == 1 {
        memberships.iter_mut().for_each(|v| *v = 1.0);
    }

    // (4) prototypes as u²-weighted means.
    let dim = features.dim();
    let mut proto = vec![0.0; s_count * dim];
    for s in 0..s_count {
        let row = &memberships[s * j_count..(s + 1) * j_count];
        let acc = &mut proto[s * dim..(s + 1) * dim];
        let weight = weighted_sum(row, features, acc);
        if weight > 0.0 {
            acc.iter_mut().for_each(|a| *a /= weight);
        } else {
            acc.copy_from_slice(state.prototypes.point(survivors[s]));
        }
    }
    let prototypes = Points { dim, data: proto };

    // (5) agglomeration weight for the next round.
    let iteration = state.iteration + 1;
    let cards = cardinalities(&memberships, s_count, j_count);
    let d2_new = sq_distances(features, &prototypes);
    let alpha = agglomeration_weight(config.eta0, config.tau, iteration, &d2_new, &memberships, &cards);

    CaaState {
        prototypes,
        memberships,
        cardinalities: cards,
        alpha,
        iteration,
        ids: survivors.iter().map(|&c| state.ids[c]).collect(),
        distances: d2_new,
    }
}

/// Iterate from [`initial_state`] until the cluster set is stable and no
/// prototype moves more than `convergence_epsilon`, or the budget runs out.
pub fn run(features: &Points, config: &CaaConfig) -> Result<CaaState, CaaError> {
    let mut state = initial_state(features, config)?;
    for _ in 0..config.max_iterations {
        let next = iterate(&state, features, config);
        let stable = next.ids.len() == state.ids.len();
        let movement = next
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let prev = state.ids.iter().position(|x| x == id).expect("ids only shrink");
                sq_dist(next.prototypes.point(i), state.prototypes.point(prev)).sqrt()
            })
            .fold(0.0, f64::max);
        state = next;
        if stable && movement < config.convergence_epsilon {
            break;
        }
    }
    Ok(state)
}
