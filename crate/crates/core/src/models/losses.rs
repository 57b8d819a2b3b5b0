//! Scalar reference implementations of the training losses.

use crate::error::{Error, Result};
use crate::gaussmath::{kl_diag, kl_discrete, DiscreteDist, HALF_LN_2PI};
use crate::types::{Cov2, OutputGmm, Trajectory, TrajectoryCov};

use super::network::LatentEncoding;

fn check_len(a: &Trajectory, y: &Trajectory) -> Result<()> {
    if a.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: a.len() });
    }
    Ok(())
}

/// `−log N(a; y, σ²I)` over all `2T` coordinates.
fn iso_nll(a: &Trajectory, y: &Trajectory, sigma: f64) -> Result<f64> {
    check_len(a, y)?;
    let sq: f64 = a
        .positions
        .iter()
        .zip(&y.positions)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum();
    let dims = 2.0 * y.len() as f64;
    Ok(sq / (2.0 * sigma * sigma) + dims * (HALF_LN_2PI + sigma.ln()))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Average NLL of the decoded samples under `N(y, σ²I)`.
pub fn loss_rec_samples(decoded: &[Trajectory], y: &Trajectory, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if decoded.is_empty() {
        return Err(Error::InvalidArgument("no decoded trajectories".into()));
    }
    let mut total = 0.0;
    for d in decoded {
        total += iso_nll(d, y, sigma)?;
    }
    Ok(total / decoded.len() as f64)
}

pub fn mean_trajectory(decoded: &[Trajectory]) -> Result<Trajectory> {
    let first = decoded.first().ok_or_else(|| Error::InvalidArgument("no decoded trajectories".into()))?;
    let k = decoded.len() as f64;
    let mut positions = vec![[0.0; 2]; first.len()];
    for d in decoded {
        check_len(d, first)?;
        for (acc, p) in positions.iter_mut().zip(&d.positions) {
            acc[0] += p[0];
            acc[1] += p[1];
        }
    }
    for p in &mut positions {
        p[0] /= k;
        p[1] /= k;
    }
    Ok(Trajectory { positions })
}

/// NLL of the mean decoded trajectory under `N(y, σ²I)`.
pub fn loss_rec_dist(decoded: &[Trajectory], y: &Trajectory, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    iso_nll(&mean_trajectory(decoded)?, y, sigma)
}

/// Component-wise diagonal KL plus the KL between the mixture weights.
pub fn loss_kl_gmm(post: &LatentEncoding, prior: &LatentEncoding) -> Result<f64> {
    if post.components.len() != prior.components.len() {
        return Err(Error::DimensionMismatch { expected: post.components.len(), got: prior.components.len() });
    }
    let mut total = 0.0;
    for (q, p) in post.components.iter().zip(&prior.components) {
        total += kl_diag(q, p)?;
    }
    Ok(total + kl_discrete(&post.weights, &prior.weights)?)
}

/// Index of the centroid with the smallest ADE to `y`; ties go to the lower
/// index.
pub fn winner_by_ade(centroids: &[Trajectory], y: &Trajectory) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for (c, traj) in centroids.iter().enumerate() {
        let d = traj.ade(y)?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best.0)
}

/// Per-timestep Gaussian NLL of `y` under the winning component plus the
/// cross-entropy of its one-hot indicator against `w_φ`.
pub fn loss_rec_gmm(out: &OutputGmm, y: &Trajectory, w_phi: &DiscreteDist) -> Result<f64> {
    if out.centroids.is_empty() || out.centroids.len() != w_phi.len() {
        return Err(Error::DimensionMismatch { expected: out.centroids.len(), got: w_phi.len() });
    }
    let c = winner_by_ade(&out.centroids, y)?;
    let mut nll = 0.0;
    for (t, q) in y.positions.iter().enumerate() {
        nll -= out.covariances[c][t].log_density(out.centroids[c].positions[t], *q);
    }
    let kl = kl_discrete(&DiscreteDist::one_hot(c, w_phi.len()), w_phi)?;
    Ok(nll + kl)
}

/// Output mixture from per-component decoded trajectories: arithmetic-mean
/// centroids and per-timestep sample covariances plus `floor·I`.
pub fn output_gmm(per_component: &[Vec<Trajectory>], weights: DiscreteDist, floor: f64) -> Result<OutputGmm> {
    if per_component.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: weights.len(), got: per_component.len() });
    }
    let mut centroids = Vec::with_capacity(per_component.len());
    let mut covariances = Vec::with_capacity(per_component.len());
    for decoded in per_component {
        let centroid = mean_trajectory(decoded)?;
        let cov: TrajectoryCov = (0..centroid.len())
            .map(|t| {
                let pts: Vec<[f64; 2]> = decoded.iter().map(|d| d.positions[t]).collect();
                Cov2::from_points(&pts, centroid.positions[t]).regularized(floor)
            })
            .collect();
        centroids.push(centroid);
        covariances.push(cov);
    }
    Ok(OutputGmm { weights, centroids, covariances })
}
