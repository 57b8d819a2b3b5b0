//! Conditional ex-post estimation: a joint mixture over posterior-prior
//! latent pairs, conditioned at inference on the prior encoding.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::gaussmath::{condition_mixture, fit_gmm_em, marginal_log_density, DiagGaussian, GaussianMixture};
use crate::models::Model;
use crate::unscented::{sigma_points, sigma_points_full};

pub const EM_MAX_ITER: usize = 200;
pub const EM_TOL: f64 = 1e-6;
/// Conditional components below this weight are dropped in unscented mode.
pub const PRUNE_WEIGHT: f64 = 1e-3;

const COLLECT_BATCH: usize = 256;

/// Rows `[μ_φ; μ_γ]` of dimension `2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingPairSet {
    pub latent_dim: usize,
    pub rows: Vec<Vec<f64>>,
}

impl EncodingPairSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let n = self.latent_dim;
        let mut cols: Vec<String> = (0..n).map(|j| format!("post_{j}")).collect();
        cols.extend((0..n).map(|j| format!("prior_{j}")));
        let mut out = cols.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing header".into() })?;
        let width = head.split(',').count();
        if width % 2 != 0 {
            return Err(Error::Parse { line: 1, msg: format!("odd column count {width}") });
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            if row.len() != width {
                return Err(Error::Parse { line: i + 1, msg: format!("expected {width} fields") });
            }
            rows.push(row);
        }
        Ok(Self { latent_dim: width / 2, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// One row per example: eval-mode posterior mean followed by prior mean.
pub fn collect_pairs(model: &Model, data: &[Example]) -> Result<EncodingPairSet> {
    if model.config.variant.is_gmm() {
        return Err(Error::InvalidArgument("pair collection needs a single-Gaussian latent variant".into()));
    }
    let mut rows = Vec::with_capacity(data.len());
    for chunk in data.chunks(COLLECT_BATCH) {
        let pairs: Vec<_> = chunk.iter().map(|e| (&e.context, &e.future)).collect();
        let contexts: Vec<_> = chunk.iter().map(|e| &e.context).collect();
        let post = model.encode_posterior_batch(&pairs)?;
        let prior = model.encode_prior_batch(&contexts)?;
        for (q, p) in post.iter().zip(&prior) {
            let mut r = q.components[0].mean.clone();
            r.extend_from_slice(&p.components[0].mean);
            rows.push(r);
        }
    }
    Ok(EncodingPairSet { latent_dim: model.latent_dim(), rows })
}

/// EM fit of a `c`-component joint mixture over the pairs.
pub fn fit_joint(pairs: &EncodingPairSet, c: usize, seed: u64) -> Result<GaussianMixture> {
    let needed = c * (2 * pairs.latent_dim + 1);
    if pairs.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "{} encoding pairs are too few for {c} components (need {needed})",
            pairs.len()
        )));
    }
    Ok(fit_gmm_em(&pairs.rows, c, seed, EM_MAX_ITER, EM_TOL)?.mixture)
}

fn check_joint(joint: &GaussianMixture, n: usize) -> Result<()> {
    if joint.dim() != 2 * n {
        return Err(Error::DimensionMismatch { expected: 2 * n, got: joint.dim() });
    }
    Ok(())
}

/// The sigma point of `prior` with the highest density under the joint's
/// prior-block marginal; ties go to the lowest sigma index.
pub fn select_conditioning_sigma(joint: &GaussianMixture, prior: &DiagGaussian) -> Result<Vec<f64>> {
    let n = prior.dim();
    check_joint(joint, n)?;
    let set = sigma_points(prior);
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in set.points.iter().enumerate() {
        let ld = marginal_log_density(joint, n, p)?;
        if ld > best.1 {
            best = (i, ld);
        }
    }
    Ok(set.points[best.0].clone())
}

/// `k` ancestral samples from the joint conditioned on `z_cond`.
pub fn cxp_sample(joint: &GaussianMixture, z_cond: &[f64], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_joint(joint, z_cond.len())?;
    let cond = condition_mixture(joint, z_cond.len(), z_cond)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cond.sample(&mut rng, k)?.into_iter().map(|(_, z)| z).collect())
}

/// Sigma points of every conditional component that survives pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct CxpSigmas {
    /// Renormalized weights of the kept components.
    pub weights: Vec<f64>,
    /// Index of each kept component in the conditional mixture.
    pub components: Vec<usize>,
    /// `2n+1` points per kept component.
    pub points: Vec<Vec<Vec<f64>>>,
}

impl CxpSigmas {
    /// All points with the component each one came from.
    pub fn flatten(&self) -> Vec<(usize, Vec<f64>)> {
        self.components
            .iter()
            .zip(&self.points)
            .flat_map(|(&c, pts)| pts.iter().map(move |p| (c, p.clone())))
            .collect()
    }
}

/// Conditions the joint on `z_cond` and returns full-covariance sigma points
/// of the components with weight at least [`PRUNE_WEIGHT`].
pub fn cxp_sigma(joint: &GaussianMixture, z_cond: &[f64]) -> Result<CxpSigmas> {
    check_joint(joint, z_cond.len())?;
    let cond = condition_mixture(joint, z_cond.len(), z_cond)?;
    let mut keep: Vec<usize> = (0..cond.len()).filter(|&c| cond.weights[c] >= PRUNE_WEIGHT).collect();
    if keep.is_empty() {
        let top = (0..cond.len()).fold(0, |b, c| if cond.weights[c] > cond.weights[b] { c } else { b });
        keep.push(top);
    }
    let total: f64 = keep.iter().map(|&c| cond.weights[c]).sum();
    let weights = keep.iter().map(|&c| cond.weights[c] / total).collect();
    let points = keep
        .iter()
        .map(|&c| sigma_points_full(&cond.components[c]).map(|s| s.points))
        .collect::<Result<_>>()?;
    Ok(CxpSigmas { weights, components: keep, points })
}
