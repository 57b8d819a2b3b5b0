//! Deterministic sigma points of diagonal Gaussians.
//!
//! For `N(μ, diag(σ²))` in `n` dimensions the set has `2n+1` points: the
//! mean at index `n`, and `μ ± √(n σ_j²) e_j` at indices `n ± (j+1)`. No
//! κ/α/β scaling is applied.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussmath::{DiagGaussian, FullGaussian, COV_EPS};
use crate::linalg::{cholesky, regularize};

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: Vec<Vec<f64>>,
    pub center_index: usize,
}

impl SigmaSet {
    /// Latent dimension `n`.
    pub fn dim(&self) -> usize {
        self.center_index
    }

    pub fn center(&self) -> &[f64] {
        &self.points[self.center_index]
    }

    /// Axis and sign of the point at `index`, `None` for the center.
    pub fn axis_of(&self, index: usize) -> Option<(usize, f64)> {
        sigma_axis(self.center_index, index)
    }
}

/// Axis and sign of sigma point `index` in a set of latent dimension `n`.
pub fn sigma_axis(n: usize, index: usize) -> Option<(usize, f64)> {
    use std::cmp::Ordering;
    match index.cmp(&n) {
        Ordering::Equal => None,
        Ordering::Less => Some((n - 1 - index, -1.0)),
        Ordering::Greater => Some((index - n - 1, 1.0)),
    }
}

/// Index of the sigma point on `axis` with the given sign.
pub fn sigma_index(n: usize, axis: usize, positive: bool) -> usize {
    if positive {
        n + axis + 1
    } else {
        n - axis - 1
    }
}

pub fn sigma_points(g: &DiagGaussian) -> SigmaSet {
    let n = g.dim();
    let scale: Vec<f64> = g.log_var.iter().map(|lv| (n as f64 * lv.exp()).sqrt()).collect();
    let points = (0..2 * n + 1)
        .map(|i| {
            let mut p = g.mean.clone();
            if let Some((axis, sign)) = sigma_axis(n, i) {
                p[axis] += sign * scale[axis];
            }
            p
        })
        .collect();
    SigmaSet { points, center_index: n }
}

/// Sigma points of a full-covariance Gaussian: `μ ± √n L e_j` with `L` the
/// Cholesky factor, using the same index layout as [`sigma_points`].
pub fn sigma_points_full(g: &FullGaussian) -> Result<SigmaSet> {
    let n = g.dim();
    let l = cholesky(g.cov.view())
        .or_else(|| cholesky(regularize(&g.cov, COV_EPS).view()))
        .ok_or(Error::SingularCovariance { index: 0 })?;
    let scale = (n as f64).sqrt();
    let points = (0..2 * n + 1)
        .map(|i| {
            let mut p = g.mean.to_vec();
            if let Some((axis, sign)) = sigma_axis(n, i) {
                for (r, v) in p.iter_mut().enumerate() {
                    *v += sign * scale * l[[r, axis]];
                }
            }
            p
        })
        .collect();
    Ok(SigmaSet { points, center_index: n })
}

/// Mean and per-dimension variance carried by the off-center points.
pub fn recover_moments(s: &SigmaSet) -> (Vec<f64>, Vec<f64>) {
    let n = s.dim();
    let off: Vec<&Vec<f64>> =
        s.points.iter().enumerate().filter(|(i, _)| *i != n).map(|(_, p)| p).collect();
    let count = off.len() as f64;
    let mut mean = vec![0.0; n];
    for p in &off {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; n];
    for p in &off {
        for j in 0..n {
            var[j] += (p[j] - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

/// Indices into a sigma set of dimension `n` chosen by random whole-axis
/// pairs. With `include_center` the mean point comes first and `k` must be
/// odd in `3..=2n+1`; without it `k` must be even in `2..=2n`.
pub fn subsample_indices(n: usize, k: usize, seed: u64, include_center: bool) -> Result<Vec<usize>> {
    let valid = if include_center {
        k % 2 == 1 && k >= 3 && k <= 2 * n + 1
    } else {
        k % 2 == 0 && k >= 2 && k <= 2 * n
    };
    if !valid {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} sigma points from {} (center {})",
            2 * n + 1,
            if include_center { "included" } else { "excluded" }
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes = index::sample(&mut rng, n, k / 2).into_vec();
    axes.sort_unstable();
    let mut out = Vec::with_capacity(k);
    if include_center {
        out.push(n);
    }
    for a in axes {
        out.push(sigma_index(n, a, false));
        out.push(sigma_index(n, a, true));
    }
    Ok(out)
}

/// The center plus `(k−1)/2` randomly chosen `±` axis pairs.
pub fn subsample_pairs(s: &SigmaSet, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    subsample_pairs_with(s, k, seed, true)
}

pub fn subsample_pairs_with(
    s: &SigmaSet,
    k: usize,
    seed: u64,
    include_center: bool,
) -> Result<Vec<Vec<f64>>> {
    Ok(subsample_indices(s.dim(), k, seed, include_center)?
        .into_iter()
        .map(|i| s.points[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_sigma_points_recover_covariance() {
        use ndarray::{array, Array1};
        let g = FullGaussian::new(array![1.0, -2.0], array![[2.0, 0.6], [0.6, 1.0]]).unwrap();
        let s = sigma_points_full(&g).unwrap();
        let off: Vec<Vec<f64>> =
            s.points.iter().enumerate().filter(|(i, _)| *i != 2).map(|(_, p)| p.clone()).collect();
        let (mean, cov) = crate::gaussmath::sample_moments(&off);
        assert!((mean - Array1::from(vec![1.0, -2.0])).iter().all(|d| d.abs() < 1e-12));
        assert!((cov - &g.cov).iter().all(|d| d.abs() < 1e-12));
        assert_eq!(s.center(), &[1.0, -2.0]);
    }

    #[test]
    fn standard_normal_1d() {
        let s = sigma_points(&DiagGaussian::standard(1));
        assert_eq!(s.points, vec![vec![-1.0], vec![0.0], vec![1.0]]);
        assert_eq!(recover_moments(&s), (vec![0.0], vec![1.0]));
    }

    #[test]
    fn diag_2d() {
        let g = DiagGaussian::from_variance(vec![1.0, 1.0], &[4.0, 1.0]).unwrap();
        let s = sigma_points(&g);
        assert_eq!(s.center(), &[1.0, 1.0]);
        let a = 8f64.sqrt();
        let b = 2f64.sqrt();
        assert!((s.points[3][0] - (1.0 + a)).abs() < 1e-12 && s.points[3][1] == 1.0);
        assert!((s.points[1][0] - (1.0 - a)).abs() < 1e-12);
        assert!((s.points[4][1] - (1.0 + b)).abs() < 1e-12 && s.points[4][0] == 1.0);
        assert!((s.points[0][1] - (1.0 - b)).abs() < 1e-12);
        let (m, v) = recover_moments(&s);
        assert!((m[0] - 1.0).abs() < 1e-12 && (m[1] - 1.0).abs() < 1e-12);
        assert!((v[0] - 4.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_variance_recovered() {
        let g = DiagGaussian::from_variance(vec![0.0], &[1e-30]).unwrap();
        let (_, v) = recover_moments(&sigma_points(&g));
        assert!((v[0] - 1e-30).abs() / 1e-30 < 1e-9);
    }

    #[test]
    fn subsample_examples() {
        let s1 = sigma_points(&DiagGaussian::standard(1));
        let mut pts = subsample_pairs(&s1, 3, 0).unwrap();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(pts, s1.points);

        let s16 = sigma_points(&DiagGaussian::standard(16));
        let a = subsample_pairs(&s16, 5, 42).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, subsample_pairs(&s16, 5, 42).unwrap());
        assert_eq!(a[0], s16.center());

        let s2 = sigma_points(&DiagGaussian::standard(2));
        let mut idx = subsample_indices(2, 5, 9, true).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert_eq!(subsample_pairs(&s2, 5, 9).unwrap().len(), 5);
    }

    #[test]
    fn subsample_rejects_bad_k() {
        let s = sigma_points(&DiagGaussian::standard(2));
        assert!(subsample_pairs(&s, 4, 0).is_err());
        assert!(subsample_pairs(&s, 1, 0).is_err());
        assert!(subsample_pairs(&s, 7, 0).is_err());
        assert!(subsample_pairs_with(&s, 3, 0, false).is_err());
        assert_eq!(subsample_pairs_with(&s, 4, 0, false).unwrap().len(), 4);
    }

    proptest! {
        #[test]
        fn moments_round_trip(
            params in prop::collection::vec((-50.0f64..50.0, -8.0f64..8.0), 1..40)
        ) {
            let (mean, lv): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();
            let g = DiagGaussian::new(mean.clone(), lv.clone()).unwrap();
            let s = sigma_points(&g);
            prop_assert_eq!(s.points.len(), 2 * g.dim() + 1);
            let (m, v) = recover_moments(&s);
            for j in 0..g.dim() {
                prop_assert!((m[j] - mean[j]).abs() <= 1e-12 * (1.0 + mean[j].abs()));
                let var = lv[j].exp();
                prop_assert!((v[j] - var).abs() <= 1e-12 * var.max(1.0));
            }
        }

        #[test]
        fn subsets_are_whole_pairs_with_exact_mean(n in 1usize..20, seed in any::<u64>(), pick in 0usize..20) {
            let k = 2 * (pick % n) + 3;
            prop_assume!(k <= 2 * n + 1);
            let g = DiagGaussian::new((0..n).map(|i| i as f64 * 0.5).collect(), vec![0.3; n]).unwrap();
            let s = sigma_points(&g);
            let idx = subsample_indices(n, k, seed, true).unwrap();
            prop_assert_eq!(idx[0], n);
            for pair in idx[1..].chunks(2) {
                let a = s.axis_of(pair[0]).unwrap();
                let b = s.axis_of(pair[1]).unwrap();
                prop_assert_eq!(a.0, b.0);
                prop_assert_eq!(a.1, -b.1);
            }
            let pts = subsample_pairs(&s, k, seed).unwrap();
            for j in 0..n {
                let m: f64 = pts.iter().map(|p| p[j]).sum::<f64>() / k as f64;
                prop_assert!((m - g.mean[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn sigma_points_deterministic(m in -5.0f64..5.0, lv in -3.0f64..3.0) {
            let g = DiagGaussian::new(vec![m, -m], vec![lv, lv * 0.5]).unwrap();
            prop_assert_eq!(sigma_points(&g), sigma_points(&g));
        }
    }
}
