use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gaussmath::{DiagGaussian, DiscreteDist};
use crate::neural::{Graph, Mlp, ParamStore, Var};
use crate::types::{SceneContext, Trajectory};

/// Data-dependent sizes fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub history_len: usize,
    pub future_len: usize,
    pub scene_dim: usize,
}

impl Dims {
    pub fn of(ctx: &SceneContext, y: &Trajectory) -> Self {
        Self { history_len: ctx.history.len(), future_len: y.len(), scene_dim: ctx.scene_features.len() }
    }

    pub fn context_width(&self) -> usize {
        2 * self.history_len + self.scene_dim
    }
}

/// A latent encoding: `C` diagonal Gaussians and their mixture weights
/// (`C = 1` with weight 1 for the single-Gaussian variants).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEncoding {
    pub components: Vec<DiagGaussian>,
    pub weights: DiscreteDist,
}

impl LatentEncoding {
    pub fn single(g: DiagGaussian) -> Self {
        Self { components: vec![g], weights: DiscreteDist::one_hot(0, 1) }
    }
}

/// Tape nodes of a batch of latent heads.
pub(crate) struct Heads {
    /// `B·C × n`, rows ordered by scene then component.
    pub mean: Var,
    pub log_var: Var,
    /// `B × C` log-weights (GMM variants).
    pub log_w: Option<Var>,
}

/// Posterior φ, prior γ and decoder θ networks sharing one parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub dims: Dims,
    pub store: ParamStore,
    posterior: Mlp,
    prior: Mlp,
    decoder: Mlp,
    posterior_weights: Option<Mlp>,
    prior_weights: Option<Mlp>,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

pub(crate) fn rows(values: &[Vec<f64>]) -> Array2<f64> {
    let width = values.first().map_or(0, Vec::len);
    Array2::from_shape_fn((values.len(), width), |(r, c)| values[r][c])
}

impl Model {
    pub fn new(config: ModelConfig, dims: Dims) -> Result<Self> {
        config.validate()?;
        if dims.history_len == 0 || dims.future_len == 0 {
            return Err(Error::InvalidArgument("empty history or future".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let n = config.latent_dim;
        let c = config.c();
        let bn = config.batch_norm;
        let ctx = dims.context_width();
        let out = 2 * dims.future_len;
        let posterior = Mlp::new(&mut store, "posterior", &widths(ctx + out, &config.hidden, 2 * n * c), bn, &mut rng);
        let prior = Mlp::new(&mut store, "prior", &widths(ctx, &config.hidden, 2 * n * c), bn, &mut rng);
        let decoder = Mlp::new(&mut store, "decoder", &widths(ctx + n, &config.hidden, out), bn, &mut rng);
        let (posterior_weights, prior_weights) = if config.variant.is_gmm() {
            let w = [2 * n * c, config.weights_hidden, c];
            (
                Some(Mlp::new(&mut store, "posterior_weights", &w, bn, &mut rng)),
                Some(Mlp::new(&mut store, "prior_weights", &w, bn, &mut rng)),
            )
        } else {
            (None, None)
        };
        Ok(Self { config, dims, store, posterior, prior, decoder, posterior_weights, prior_weights })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn components(&self) -> usize {
        self.config.c()
    }

    /// Networks in registration order: posterior, prior, decoder and the
    /// optional weight heads.
    pub fn networks(&self) -> Vec<(&'static str, &Mlp)> {
        let mut out = vec![("posterior", &self.posterior), ("prior", &self.prior), ("decoder", &self.decoder)];
        if let (Some(pw), Some(qw)) = (&self.posterior_weights, &self.prior_weights) {
            out.push(("posterior_weights", pw));
            out.push(("prior_weights", qw));
        }
        out
    }

    fn check_context(&self, ctx: &SceneContext) -> Result<()> {
        if ctx.history.len() != self.dims.history_len {
            return Err(Error::DimensionMismatch { expected: self.dims.history_len, got: ctx.history.len() });
        }
        if ctx.scene_features.len() != self.dims.scene_dim {
            return Err(Error::DimensionMismatch { expected: self.dims.scene_dim, got: ctx.scene_features.len() });
        }
        Ok(())
    }

    /// Network input for a context: scaled history followed by scene features.
    pub fn context_features(&self, ctx: &SceneContext) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        let s = self.config.pos_scale;
        let mut f: Vec<f64> = ctx.history.iter().flat_map(|p| [p[0] / s, p[1] / s]).collect();
        f.extend_from_slice(&ctx.scene_features);
        Ok(f)
    }

    /// Scaled future in the planar layout `[x_1..x_T, y_1..y_T]`.
    pub fn target_features(&self, y: &Trajectory) -> Result<Vec<f64>> {
        let s = self.config.pos_scale;
        Ok(planar(y, self.dims.future_len)?.into_iter().map(|v| v / s).collect())
    }

    pub(crate) fn heads(&self, g: &mut Graph, ctx: Var, y: Option<Var>, train: bool) -> Result<Heads> {
        let (net, weights_net, input) = match y {
            Some(y) => (&self.posterior, &self.posterior_weights, g.concat_cols(ctx, y)),
            None => (&self.prior, &self.prior_weights, ctx),
        };
        let raw = net.forward(g, &self.store, input, train)?;
        let n = self.latent_dim();
        let b = g.value(raw).nrows();
        let per = g.reshape(raw, b * self.components(), 2 * n);
        let mean = g.slice_cols(per, 0, n);
        let log_var = g.slice_cols(per, n, 2 * n);
        let log_w = match weights_net {
            Some(w) => {
                let logits = w.forward(g, &self.store, raw, train)?;
                Some(g.log_softmax(logits))
            }
            None => None,
        };
        Ok(Heads { mean, log_var, log_w })
    }

    /// Decoded futures in meters, planar layout, one row per `(context, z)` row.
    pub(crate) fn decode_var(&self, g: &mut Graph, ctx_rows: Var, z: Var, train: bool) -> Result<Var> {
        let input = g.concat_cols(ctx_rows, z);
        let out = self.decoder.forward(g, &self.store, input, train)?;
        Ok(g.scale(out, self.config.pos_scale))
    }

    fn encodings(&self, g: &Graph, heads: &Heads) -> Result<Vec<LatentEncoding>> {
        let c = self.components();
        let mean = g.value(heads.mean);
        let lv = g.value(heads.log_var);
        let b = mean.nrows() / c;
        (0..b)
            .map(|s| {
                let components = (0..c)
                    .map(|k| DiagGaussian::new(mean.row(s * c + k).to_vec(), lv.row(s * c + k).to_vec()))
                    .collect::<Result<Vec<_>>>()?;
                let weights = match heads.log_w {
                    Some(lw) => DiscreteDist::new(g.value(lw).row(s).iter().map(|v| v.exp()).collect())?,
                    None => DiscreteDist::one_hot(0, 1),
                };
                Ok(LatentEncoding { components, weights })
            })
            .collect()
    }

    /// Eval-mode posterior encodings of many `(context, future)` pairs.
    pub fn encode_posterior_batch(&self, pairs: &[(&SceneContext, &Trajectory)]) -> Result<Vec<LatentEncoding>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let ctx: Vec<Vec<f64>> = pairs.iter().map(|(c, _)| self.context_features(c)).collect::<Result<_>>()?;
        let ys: Vec<Vec<f64>> = pairs.iter().map(|(_, y)| self.target_features(y)).collect::<Result<_>>()?;
        let cv = g.constant(rows(&ctx));
        let yv = g.constant(rows(&ys));
        let heads = self.heads(&mut g, cv, Some(yv), false)?;
        self.encodings(&g, &heads)
    }

    /// Eval-mode prior encodings of many contexts.
    pub fn encode_prior_batch(&self, contexts: &[&SceneContext]) -> Result<Vec<LatentEncoding>> {
        if contexts.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let ctx: Vec<Vec<f64>> = contexts.iter().map(|c| self.context_features(c)).collect::<Result<_>>()?;
        let cv = g.constant(rows(&ctx));
        let heads = self.heads(&mut g, cv, None, false)?;
        self.encodings(&g, &heads)
    }

    pub fn encode_posterior(&self, ctx: &SceneContext, y: &Trajectory) -> Result<LatentEncoding> {
        Ok(self.encode_posterior_batch(&[(ctx, y)])?.remove(0))
    }

    pub fn encode_prior(&self, ctx: &SceneContext) -> Result<LatentEncoding> {
        Ok(self.encode_prior_batch(&[ctx])?.remove(0))
    }

    /// Eval-mode decoding of several latent vectors under one context.
    pub fn decode_many(&self, ctx: &SceneContext, zs: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(z) = zs.iter().find(|z| z.len() != self.latent_dim()) {
            return Err(Error::DimensionMismatch { expected: self.latent_dim(), got: z.len() });
        }
        let f = self.context_features(ctx)?;
        let mut g = Graph::new();
        let cv = g.constant(rows(&vec![f; zs.len()]));
        let zv = g.constant(rows(zs));
        let out = self.decode_var(&mut g, cv, zv, false)?;
        Ok(g.value(out).rows().into_iter().map(|r| from_planar(r.as_slice().expect("contiguous"))).collect())
    }

    pub fn decode(&self, ctx: &SceneContext, z: &[f64]) -> Result<Trajectory> {
        Ok(self.decode_many(ctx, &[z.to_vec()])?.remove(0))
    }
}

/// `[x_1..x_T, y_1..y_T]` layout of a trajectory of length `t`.
pub fn planar(y: &Trajectory, t: usize) -> Result<Vec<f64>> {
    if y.len() != t {
        return Err(Error::DimensionMismatch { expected: t, got: y.len() });
    }
    let mut v: Vec<f64> = y.positions.iter().map(|p| p[0]).collect();
    v.extend(y.positions.iter().map(|p| p[1]));
    Ok(v)
}

pub fn from_planar(v: &[f64]) -> Trajectory {
    let t = v.len() / 2;
    Trajectory { positions: (0..t).map(|i| [v[i], v[t + i]]).collect() }
}
