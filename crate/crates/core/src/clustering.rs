//! k-means, silhouette scoring and silhouette-driven choice of the cluster count.
//!
//! Points are clustered with plain Euclidean distance. Callers that want cosine
//! semantics normalize their embeddings first; on the unit sphere Euclidean
//! ordering agrees with cosine distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectors::{squared_distance, EmbeddingVector, TOLERANCE};

pub const DEFAULT_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("no points to cluster")]
    NoPoints,
    #[error("k = {k} is out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("only {distinct} distinct points, cannot form {k} clusters")]
    TooFewDistinctPoints { distinct: usize, k: usize },
    #[error("silhouette needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("assignment list has {found} entries for {expected} points")]
    AssignmentLength { expected: usize, found: usize },
    #[error("invalid candidate range {k_min}..={k_max} for {n} points")]
    InvalidRange { k_min: usize, k_max: usize, n: usize },
    #[error("max_iterations must be at least 1")]
    ZeroIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    /// Independent seedings per K; the lowest-SSE run is kept.
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub k: usize,
    pub silhouette: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    /// `assignments[i]` is the cluster of input point `i`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<EmbeddingVector>,
    pub silhouette: f64,
    pub seed: u64,
    pub iterations_run: usize,
    /// Within-cluster sum of squared distances.
    pub sse: f64,
    /// Filled by [`select_k`] with every K it evaluated, in ascending order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_scores: Vec<CandidateScore>,
}

impl ClusteringResult {
    /// Member indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

fn check_dims(points: &[EmbeddingVector]) -> Result<usize, ClusteringError> {
    let first = points.first().ok_or(ClusteringError::NoPoints)?;
    let expected = first.dim();
    for (index, p) in points.iter().enumerate() {
        if p.dim() != expected {
            return Err(ClusteringError::DimensionMismatch {
                index,
                expected,
                found: p.dim(),
            });
        }
    }
    Ok(expected)
}

fn count_distinct(points: &[EmbeddingVector]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.values().iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Lloyd's k-means with greedy k-means++ seeding.
pub fn kmeans(
    points: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<ClusteringResult, ClusteringError> {
    kmeans_traced(points, k, seed, max_iterations).map(|(r, _)| r)
}

/// Runs `config.restarts` seedings (seed, seed+1, ...) and keeps the lowest SSE.
/// Ties keep the earliest restart.
pub fn kmeans_with_config(
    points: &[EmbeddingVector],
    k: usize,
    seed: u64,
    config: KMeansConfig,
) -> Result<ClusteringResult, ClusteringError> {
    let mut best = kmeans(points, k, seed, config.max_iterations)?;
    for r in 1..config.restarts.max(1) as u64 {
        let run = kmeans(points, k, seed.wrapping_add(r), config.max_iterations)?;
        if run.sse < best.sse - TOLERANCE {
            best = run;
        }
    }
    best.seed = seed;
    Ok(best)
}

/// Same as [`kmeans`] but also returns the SSE after every update step.
pub fn kmeans_traced(
    points: &[EmbeddingVector],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<(ClusteringResult, Vec<f64>), ClusteringError> {
    let dim = check_dims(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(ClusteringError::KOutOfRange { k, n });
    }
    if max_iterations == 0 {
        return Err(ClusteringError::ZeroIterations);
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(ClusteringError::TooFewDistinctPoints { distinct, k });
    }

    let data: Vec<&[f64]> = points.iter().map(|p| p.values()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&data, k, &mut rng);

    let mut assignments = nearest_assignments(&data, &centroids);
    repair_empty(&data, &centroids, &mut assignments, k);

    let mut history = Vec::new();
    let mut iterations_run = 0;
    loop {
        centroids = cluster_means(&data, &assignments, k, dim);
        iterations_run += 1;
        history.push(sse_of(&data, &assignments, &centroids));
        if iterations_run >= max_iterations {
            break;
        }
        let mut next = nearest_assignments(&data, &centroids);
        repair_empty(&data, &centroids, &mut next, k);
        if next == assignments {
            break;
        }
        assignments = next;
    }

    let sse = *history.last().expect("at least one iteration");
    let silhouette = if k >= 2 {
        silhouette_raw(&data, &assignments, k)
    } else {
        0.0
    };
    let centroids = centroids
        .into_iter()
        .map(|c| EmbeddingVector::new(c).expect("means of finite points are finite"))
        .collect();
    Ok((
        ClusteringResult {
            k,
            assignments,
            centroids,
            silhouette,
            seed,
            iterations_run,
            sse,
            candidate_scores: Vec::new(),
        },
        history,
    ))
}

fn seed_plus_plus(data: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let local_trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centers = vec![data[first].to_vec()];
    let mut closest: Vec<f64> = data.iter().map(|p| squared_distance(p, data[first])).collect();

    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..local_trials {
            let candidate = sample_weighted(&closest, total, rng);
            let updated: Vec<f64> = data
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(squared_distance(p, data[candidate])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, candidate, updated));
            }
        }
        let (_, chosen, updated) = best.expect("at least two local trials");
        centers.push(data[chosen].to_vec());
        closest = updated;
    }
    centers
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if acc > target {
                return i;
            }
        }
    }
    last_positive
}

fn nearest_assignments(data: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    data.iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(data: &[&[f64]], centroids: &[Vec<f64>], assignments: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignments.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in data.iter().enumerate() {
            let c = assignments[i];
            if sizes[c] < 2 {
                continue;
            }
            let d = squared_distance(p, &centroids[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

fn cluster_means(data: &[&[f64]], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in data.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    sums
}

fn sse_of(data: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    data.iter()
        .zip(assignments)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

/// Mean Rousseeuw silhouette over all points, Euclidean distance.
///
/// Points in singleton clusters score 0, as do points whose `a` and `b` are both 0.
pub fn silhouette_score(points: &[EmbeddingVector], assignments: &[usize]) -> Result<f64, ClusteringError> {
    check_dims(points)?;
    if assignments.len() != points.len() {
        return Err(ClusteringError::AssignmentLength {
            expected: points.len(),
            found: assignments.len(),
        });
    }
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(ClusteringError::TooFewClusters(k));
    }
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(ClusteringError::EmptyCluster(empty));
    }
    let data: Vec<&[f64]> = points.iter().map(|p| p.values()).collect();
    Ok(silhouette_raw(&data, assignments, k))
}

fn silhouette_raw(data: &[&[f64]], assignments: &[usize], k: usize) -> f64 {
    let n = data.len();
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += squared_distance(data[i], data[j]).sqrt();
            }
        }
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    (total / n as f64).clamp(-1.0, 1.0)
}

/// Clusters for every K in `k_min..=k_max` and keeps the highest silhouette.
///
/// Ties (within [`TOLERANCE`]) go to the smaller K. Candidates larger than the
/// number of distinct points are skipped.
pub fn select_k(
    points: &[EmbeddingVector],
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<ClusteringResult, ClusteringError> {
    select_k_with_config(points, k_min, k_max, seed, KMeansConfig::default())
}

pub fn select_k_with_config(
    points: &[EmbeddingVector],
    k_min: usize,
    k_max: usize,
    seed: u64,
    config: KMeansConfig,
) -> Result<ClusteringResult, ClusteringError> {
    check_dims(points)?;
    let n = points.len();
    if k_min < 2 || k_min > k_max || k_max > n {
        return Err(ClusteringError::InvalidRange { k_min, k_max, n });
    }
    let distinct = count_distinct(points);
    let upper = k_max.min(distinct);
    if upper < k_min {
        return Err(ClusteringError::TooFewDistinctPoints { distinct, k: k_min });
    }

    let runs: Vec<ClusteringResult> = (k_min..=upper)
        .into_par_iter()
        .map(|k| kmeans_with_config(points, k, seed, config))
        .collect::<Result<_, _>>()?;

    let candidate_scores: Vec<CandidateScore> = runs
        .iter()
        .map(|r| CandidateScore {
            k: r.k,
            silhouette: r.silhouette,
            sse: r.sse,
        })
        .collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.silhouette > runs[best].silhouette + TOLERANCE {
            best = i;
        }
    }
    let mut chosen = runs.into_iter().nth(best).expect("non-empty candidate range");
    chosen.candidate_scores = candidate_scores;
    Ok(chosen)
}
