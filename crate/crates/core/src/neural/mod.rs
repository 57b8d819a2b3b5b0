//! Minimal dense-network core: tape-based reverse-mode gradients, MLPs with
//! optional batch normalization, and Adam.

pub mod adam;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_step, lr_schedule, AdamState};
pub use mlp::Mlp;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Graph, Var};

/// Running-statistics momentum of batch normalization.
pub const BN_MOMENTUM: f64 = 0.9;

/// Serde helper: matrices as `{rows, cols, data}` objects.
pub(crate) mod serde_mats {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    pub struct Mat {
        pub rows: usize,
        pub cols: usize,
        pub data: Vec<f64>,
    }

    impl From<&Array2<f64>> for Mat {
        fn from(a: &Array2<f64>) -> Self {
            Mat { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
        }
    }

    impl TryFrom<Mat> for Array2<f64> {
        type Error = String;
        fn try_from(m: Mat) -> Result<Self, String> {
            Array2::from_shape_vec((m.rows, m.cols), m.data).map_err(|e| e.to_string())
        }
    }

    pub fn serialize<S: Serializer>(mats: &[Array2<f64>], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Mat> = mats.iter().map(Mat::from).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Array2<f64>>, D::Error> {
        let v = Vec::<Mat>::deserialize(d)?;
        v.into_iter().map(|m| Array2::try_from(m).map_err(serde::de::Error::custom)).collect()
    }
}

#[cfg(test)]
mod tests;

use crate::gaussmath::DiagGaussian;

/// `z = μ + exp(½ log σ²) ⊙ ε` on the tape, gradients flowing to `μ` and
/// `log σ²`. All three operands share one shape.
pub fn reparam(g: &mut Graph, mean: Var, log_var: Var, eps: Var) -> Var {
    let half = g.scale(log_var, 0.5);
    let std = g.exp(half);
    let offset = g.mul(std, eps);
    g.add(mean, offset)
}

/// Value-only counterpart of [`reparam`].
pub fn reparam_sample(gauss: &DiagGaussian, eps: &[f64]) -> crate::Result<Vec<f64>> {
    if eps.len() != gauss.dim() {
        return Err(crate::Error::DimensionMismatch { expected: gauss.dim(), got: eps.len() });
    }
    Ok(gauss
        .mean
        .iter()
        .zip(&gauss.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}
