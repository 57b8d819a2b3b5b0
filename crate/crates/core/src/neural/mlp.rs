use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchNormLayer {
    gamma: ParamId,
    beta: ParamId,
    buffer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
    norm: Option<BatchNormLayer>,
}

/// Dense network: `Linear → [BatchNorm] → ReLU` on hidden layers, linear
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Dense>,
}

/// Glorot-uniform matrix in `±√(6/(fan_in+fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

impl Mlp {
    /// Registers parameters named `{prefix}.{layer}.{weight|bias|gamma|beta}`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        batch_norm: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = store.add(format!("{prefix}.{i}.weight"), glorot(rng, fan_in, fan_out));
            let bias = store.add(format!("{prefix}.{i}.bias"), Array2::zeros((1, fan_out)));
            let hidden = i + 2 < widths.len();
            let norm = (hidden && batch_norm).then(|| BatchNormLayer {
                gamma: store.add(format!("{prefix}.{i}.gamma"), Array2::ones((1, fan_out))),
                beta: store.add(format!("{prefix}.{i}.beta"), Array2::zeros((1, fan_out))),
                buffer: store.add_buffer(format!("{prefix}.{i}.running"), fan_out),
            });
            layers.push(Dense { weight, bias, norm });
        }
        Self { widths: widths.to_vec(), layers }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Output layer ids, for callers that initialize heads specially.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        let last = self.layers.last().unwrap();
        (last.weight, last.bias)
    }

    /// Forward pass over a batch of rows. Batch norm uses batch statistics
    /// when `train` is set and the running buffers otherwise.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Result<Var> {
        let width = g.value(x).ncols();
        if width != self.input_width() {
            return Err(Error::DimensionMismatch { expected: self.input_width(), got: width });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(store, layer.weight);
            let b = g.param(store, layer.bias);
            let lin = g.matmul(h, w);
            h = g.add_row(lin, b);
            if i == last {
                break;
            }
            if let Some(bn) = &layer.norm {
                let gamma = g.param(store, bn.gamma);
                let beta = g.param(store, bn.beta);
                let running = if train {
                    None
                } else {
                    let buf = store.buffer(bn.buffer);
                    Some((buf.mean.as_slice(), buf.var.as_slice()))
                };
                h = g.batch_norm(h, gamma, beta, bn.buffer, running);
            }
            h = g.relu(h);
        }
        Ok(h)
    }

    /// Convenience single-row evaluation without gradients.
    pub fn eval_row(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let input = g.constant(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row"));
        let out = self.forward(&mut g, store, input, false)?;
        Ok(g.value(out).row(0).to_vec())
    }
}
