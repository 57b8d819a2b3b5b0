//! Trajectory-level domain types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussmath::HALF_LN_2PI;

/// Sampling period of every trajectory, seconds.
pub const TIMESTEP: f64 = 0.1;

/// Sequence of planar positions (meters) at a fixed timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(positions: Vec<[f64; 2]>) -> Result<Self> {
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory has non-finite entries".into()));
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Interleaved `[x0, y0, x1, y1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self { positions: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect() }
    }

    pub fn last(&self) -> [f64; 2] {
        *self.positions.last().expect("non-empty trajectory")
    }

    /// Mean pointwise Euclidean distance.
    pub fn ade(&self, other: &Trajectory) -> Result<f64> {
        self.check_len(other)?;
        let total: f64 = self.positions.iter().zip(&other.positions).map(|(a, b)| dist(*a, *b)).sum();
        Ok(total / self.len() as f64)
    }

    /// Euclidean distance of the final positions.
    pub fn fde(&self, other: &Trajectory) -> Result<f64> {
        self.check_len(other)?;
        Ok(dist(self.last(), other.last()))
    }

    fn check_len(&self, other: &Trajectory) -> Result<()> {
        if self.len() != other.len() || self.is_empty() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(())
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Conditioning input: agent history plus branch-geometry features.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub history: Vec<[f64; 2]>,
    pub scene_features: Vec<f64>,
}

/// Symmetric 2×2 covariance of one planar position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn isotropic(var: f64) -> Self {
        Self { xx: var, xy: 0.0, yy: var }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn regularized(self, eps: f64) -> Self {
        Self { xx: self.xx + eps, xy: self.xy, yy: self.yy + eps }
    }

    /// Log-density of `point` under `N(mean, self)`; `-inf` when singular.
    pub fn log_density(&self, mean: [f64; 2], point: [f64; 2]) -> f64 {
        let det = self.det();
        if !(det > 0.0) || !(self.xx > 0.0) {
            return f64::NEG_INFINITY;
        }
        let (rx, ry) = (point[0] - mean[0], point[1] - mean[1]);
        let maha = (self.yy * rx * rx - 2.0 * self.xy * rx * ry + self.xx * ry * ry) / det;
        -2.0 * HALF_LN_2PI - 0.5 * det.ln() - 0.5 * maha
    }

    /// Biased sample covariance of the points.
    pub fn from_points(points: &[[f64; 2]], mean: [f64; 2]) -> Self {
        let k = points.len() as f64;
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for p in points {
            let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
            xx += dx * dx;
            xy += dx * dy;
            yy += dy * dy;
        }
        Self { xx: xx / k, xy: xy / k, yy: yy / k }
    }
}

/// Per-timestep covariances of one candidate trajectory.
pub type TrajectoryCov = Vec<Cov2>;

/// `M` candidate trajectories with weights, optionally with per-timestep
/// covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub trajectories: Vec<Trajectory>,
    pub weights: Vec<f64>,
    pub covariances: Option<Vec<TrajectoryCov>>,
}

impl PredictionSet {
    /// Equal-weight candidates without covariances.
    pub fn uniform(trajectories: Vec<Trajectory>) -> Self {
        let w = 1.0 / trajectories.len() as f64;
        let weights = vec![w; trajectories.len()];
        Self { trajectories, weights, covariances: None }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Output-space mixture of a latent-GMM model: one centroid trajectory with
/// per-timestep covariance per latent component.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGmm {
    pub weights: crate::gaussmath::DiscreteDist,
    pub centroids: Vec<Trajectory>,
    pub covariances: Vec<TrajectoryCov>,
}

impl OutputGmm {
    pub fn to_prediction_set(&self) -> PredictionSet {
        PredictionSet {
            trajectories: self.centroids.clone(),
            weights: self.weights.probs.clone(),
            covariances: Some(self.covariances.clone()),
        }
    }
}
