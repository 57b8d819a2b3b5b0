//! Output-space post-processing: k-means clustering of decoded trajectories
//! and horizon-sliced likelihood metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussmath::COV_EPS;
use crate::linalg::log_sum_exp;
use crate::types::{Cov2, PredictionSet, Trajectory, TrajectoryCov, TIMESTEP};

/// Returned by [`mixture_nll`] when every component density underflows.
pub const NLL_SENTINEL: f64 = 1e9;

/// Default Lloyd iteration cap.
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster SSE after every assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeans {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Within-cluster sum of squared distances.
pub fn sse(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

fn plus_plus_init(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < m {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if target < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            argmax(&d2)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// k-means with k-means++ seeding followed by Lloyd iterations until the
/// assignments stop changing or `max_iter` is reached.
pub fn kmeans(points: &[Vec<f64>], m: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if m == 0 {
        return Err(Error::InvalidArgument("k-means needs at least one cluster".into()));
    }
    if points.len() < m {
        return Err(Error::InvalidArgument(format!(
            "{} points cannot form {m} clusters",
            points.len()
        )));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, m, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = vec![sse(points, &centroids, &assignments)];

    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; d]; m];
        let mut counts = vec![0usize; m];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..m {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..m {
            if counts[c] == 0 {
                // Reseed at the point farthest from its own centroid.
                let far: Vec<f64> =
                    points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).collect();
                centroids[c] = points[argmax(&far)].clone();
                reseeded = true;
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let stable = next == assignments;
        assignments = next;
        history.push(sse(points, &centroids, &assignments));
        if stable && !reseeded {
            break;
        }
    }
    Ok(KMeans { centroids, assignments, sse_history: history })
}

/// Clustered candidates with member counts.
#[derive(Debug, Clone)]
pub struct ClusteredPrediction {
    pub prediction: PredictionSet,
    pub counts: Vec<usize>,
}

/// Clusters `K` decoded trajectories into `M` centroid candidates weighted by
/// member ratio, with per-timestep member covariance (+εI).
pub fn cluster_trajectories(decoded: &[Trajectory], m: usize, seed: u64) -> Result<ClusteredPrediction> {
    if decoded.len() < m {
        return Err(Error::InvalidArgument(format!(
            "cannot cluster {} trajectories into {m} candidates",
            decoded.len()
        )));
    }
    let flat: Vec<Vec<f64>> = decoded.iter().map(Trajectory::flatten).collect();
    let km = kmeans(&flat, m, seed, KMEANS_MAX_ITER)?;
    let k = decoded.len();
    let t_len = decoded[0].len();
    let mut counts = vec![0usize; m];
    for &a in &km.assignments {
        counts[a] += 1;
    }
    let mut covariances = Vec::with_capacity(m);
    for c in 0..m {
        let centroid = Trajectory::from_flat(&km.centroids[c]);
        let members: Vec<&Trajectory> =
            decoded.iter().zip(&km.assignments).filter(|(_, &a)| a == c).map(|(t, _)| t).collect();
        let cov: TrajectoryCov = (0..t_len)
            .map(|t| {
                if members.is_empty() {
                    return Cov2::isotropic(COV_EPS);
                }
                let pts: Vec<[f64; 2]> = members.iter().map(|m| m.positions[t]).collect();
                Cov2::from_points(&pts, centroid.positions[t]).regularized(COV_EPS)
            })
            .collect();
        covariances.push(cov);
    }
    let prediction = PredictionSet {
        trajectories: km.centroids.iter().map(|c| Trajectory::from_flat(c)).collect(),
        weights: counts.iter().map(|&n| n as f64 / k as f64).collect(),
        covariances: Some(covariances),
    };
    Ok(ClusteredPrediction { prediction, counts })
}

/// Timestep index of a horizon given in seconds.
pub fn horizon_index(horizon_s: f64, t_len: usize) -> Result<usize> {
    let steps = (horizon_s / TIMESTEP).round() as usize;
    if steps == 0 || steps > t_len {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon_s}s outside trajectory of {t_len} steps"
        )));
    }
    Ok(steps - 1)
}

fn cov_at(pred: &PredictionSet, c: usize, t: usize) -> Cov2 {
    match &pred.covariances {
        Some(covs) => covs[c][t],
        None => Cov2::isotropic(1.0),
    }
}

/// Gaussian NLL of the ground-truth position at the horizon under the
/// candidate closest to it (by displacement at that horizon).
pub fn winner_nll(pred: &PredictionSet, y: &Trajectory, horizon_s: f64) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty prediction set".into()));
    }
    let t = horizon_index(horizon_s, y.len())?;
    let target = y.positions[t];
    let mut best = (0, f64::INFINITY);
    for (c, traj) in pred.trajectories.iter().enumerate() {
        if traj.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: traj.len() });
        }
        let d = crate::types::dist(traj.positions[t], target);
        if d < best.1 {
            best = (c, d);
        }
    }
    let c = best.0;
    Ok(-cov_at(pred, c, t).log_density(pred.trajectories[c].positions[t], target))
}

/// `−log Σ_c w_c N(y_t; centroid_c(t), Σ_c(t))` at the horizon timestep, or
/// [`NLL_SENTINEL`] when every component underflows.
pub fn mixture_nll(pred: &PredictionSet, y: &Trajectory, horizon_s: f64) -> Result<f64> {
    crate::gaussmath::validate_simplex(&pred.weights)?;
    let t = horizon_index(horizon_s, y.len())?;
    let target = y.positions[t];
    let mut terms = Vec::with_capacity(pred.len());
    for (c, traj) in pred.trajectories.iter().enumerate() {
        if traj.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: y.len(), got: traj.len() });
        }
        terms.push(pred.weights[c].ln() + cov_at(pred, c, t).log_density(traj.positions[t], target));
    }
    // Density underflow in linear space, even though the log terms are finite.
    if terms.iter().all(|t| t.exp() == 0.0) {
        return Ok(NLL_SENTINEL);
    }
    Ok(-log_sum_exp(&terms))
}
