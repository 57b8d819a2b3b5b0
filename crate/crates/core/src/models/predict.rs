use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::output_gmm;
use super::network::Model;
use super::objective::sigma_selection;
use crate::error::{Error, Result};
use crate::expost::{cxp_sample, cxp_sigma, select_conditioning_sigma};
use crate::gaussmath::{DiagGaussian, DiscreteDist, GaussianMixture};
use crate::postprocess::cluster_trajectories;
use crate::types::{OutputGmm, PredictionSet, SceneContext, Trajectory};
use crate::unscented::sigma_points;

/// Where inference-time latents come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// Random samples from the prior.
    Prior,
    /// Sigma points of the prior.
    Sigma,
    /// Conditional ex-post mixture.
    Cxp,
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Self::Prior),
            "sigma" => Ok(Self::Sigma),
            "cxp" => Ok(Self::Cxp),
            _ => Err(Error::InvalidArgument(format!("unknown inference mode `{s}`"))),
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Prior => "prior",
            Self::Sigma => "sigma",
            Self::Cxp => "cxp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub mode: InferenceMode,
    /// Latents decoded (per component for the mixture variants).
    pub samples: usize,
    /// Candidates kept after clustering.
    pub candidates: usize,
    pub cluster: bool,
    /// Seed of random latent draws and sigma subsampling.
    pub seed: u64,
    /// Seed of k-means++ initialization.
    pub cluster_seed: u64,
}

impl PredictOptions {
    pub fn new(mode: InferenceMode, samples: usize) -> Self {
        Self { mode, samples, candidates: 3, cluster: false, seed: 0, cluster_seed: 0 }
    }

    pub fn clustered(mut self, candidates: usize) -> Self {
        self.cluster = true;
        self.candidates = candidates;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub set: PredictionSet,
    /// Output mixture of the mixture variants and of unscented CXP decoding.
    pub output_gmm: Option<OutputGmm>,
    /// Every decoded trajectory before clustering.
    pub decoded: Vec<Trajectory>,
}

fn random_latents<R: Rng>(g: &DiagGaussian, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let sd: Vec<f64> = g.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    (0..k)
        .map(|_| g.mean.iter().zip(&sd).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

fn sigma_latents(g: &DiagGaussian, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let set = sigma_points(g);
    Ok(sigma_selection(g.dim(), k, seed)?.into_iter().map(|i| set.points[i].clone()).collect())
}

impl Model {
    /// Candidate trajectories for one context.
    pub fn predict(
        &self,
        ctx: &SceneContext,
        opts: &PredictOptions,
        joint: Option<&GaussianMixture>,
    ) -> Result<Prediction> {
        if opts.samples == 0 {
            return Err(Error::InvalidArgument("at least one latent sample is needed".into()));
        }
        if opts.cluster && opts.samples < opts.candidates {
            return Err(Error::InvalidArgument(format!(
                "cannot cluster {} samples into {} candidates",
                opts.samples, opts.candidates
            )));
        }
        let prior = self.encode_prior(ctx)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let latents = |g: &DiagGaussian, rng: &mut ChaCha8Rng| -> Result<Vec<Vec<f64>>> {
            match opts.mode {
                InferenceMode::Sigma => sigma_latents(g, opts.samples, opts.seed),
                _ => Ok(random_latents(g, opts.samples, rng)),
            }
        };

        if self.config.variant.is_gmm() {
            if opts.mode == InferenceMode::Cxp {
                return Err(Error::InvalidArgument("ex-post inference needs a single-Gaussian variant".into()));
            }
            let mut per = Vec::with_capacity(prior.components.len());
            for comp in &prior.components {
                per.push(self.decode_many(ctx, &latents(comp, &mut rng)?)?);
            }
            let out = output_gmm(&per, prior.weights.clone(), self.config.cov_floor)?;
            return Ok(Prediction { set: out.to_prediction_set(), output_gmm: Some(out), decoded: per.concat() });
        }

        let g = &prior.components[0];
        let (decoded, out) = match opts.mode {
            InferenceMode::Prior | InferenceMode::Sigma => (self.decode_many(ctx, &latents(g, &mut rng)?)?, None),
            InferenceMode::Cxp => {
                let joint = joint.ok_or_else(|| Error::InvalidArgument("ex-post inference needs a joint mixture".into()))?;
                let z_cond = select_conditioning_sigma(joint, g)?;
                if self.config.variant.is_unscented() {
                    let sig = cxp_sigma(joint, &z_cond)?;
                    let per = sig.points.iter().map(|pts| self.decode_many(ctx, pts)).collect::<Result<Vec<_>>>()?;
                    let out = output_gmm(&per, DiscreteDist::new(sig.weights)?, self.config.cov_floor)?;
                    (per.concat(), Some(out))
                } else {
                    (self.decode_many(ctx, &cxp_sample(joint, &z_cond, opts.samples, opts.seed)?)?, None)
                }
            }
        };
        let set = if opts.cluster {
            cluster_trajectories(&decoded, opts.candidates, opts.cluster_seed)?.prediction
        } else if let Some(out) = &out {
            out.to_prediction_set()
        } else {
            PredictionSet::uniform(decoded.clone())
        };
        Ok(Prediction { set, output_gmm: out, decoded })
    }
}
