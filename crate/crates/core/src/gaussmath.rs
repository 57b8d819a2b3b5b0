//! Closed-form Gaussian and Gaussian-mixture algebra.
//!
//! Everything here is a pure function of its inputs. Covariances are handled
//! through Cholesky factors; a factorization that fails on the raw matrix is
//! retried once with [`COV_EPS`] added to the diagonal before giving up.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky, log_det, log_sum_exp, solve_lower};
use crate::postprocess;

/// Diagonal regularization used by EM and before inversions.
pub const COV_EPS: f64 = 1e-6;

/// `½ log 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

const WEIGHT_TOL: f64 = 1e-9;

/// Diagonal Gaussian parameterized by mean and per-dimension log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: log_var.len() });
        }
        if let Some(v) = log_var.iter().chain(mean.iter()).find(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!("non-finite parameter {v}")));
        }
        Ok(Self { mean, log_var })
    }

    /// Standard normal in `n` dimensions.
    pub fn standard(n: usize) -> Self {
        Self { mean: vec![0.0; n], log_var: vec![0.0; n] }
    }

    /// Builds from mean and variance (not log-variance).
    pub fn from_variance(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        Self::new(mean, var.iter().map(|v| v.ln()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }
}

/// Full-covariance Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGaussian {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl FullGaussian {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `z`; `index` names this component in error messages.
    pub fn log_density(&self, z: ArrayView1<f64>, index: usize) -> Result<f64> {
        check_dim(self.dim(), z.len())?;
        let l = factor(self.cov.view(), index)?;
        Ok(log_density_chol(self.mean.view(), l.view(), z))
    }
}

/// Weighted list of full-covariance Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<FullGaussian>,
}

/// Discrete distribution over mixture components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDist {
    pub probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_simplex(&probs)?;
        Ok(Self { probs })
    }

    pub fn one_hot(index: usize, len: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn uniform(len: usize) -> Self {
        Self { probs: vec![1.0 / len as f64; len] }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub(crate) fn validate_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidDistribution("negative or non-finite probability".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }
    Ok(())
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Cholesky factor with one regularized retry.
fn factor(cov: ArrayView2<f64>, index: usize) -> Result<Array2<f64>> {
    if let Some(l) = cholesky(cov) {
        return Ok(l);
    }
    cholesky(linalg::regularize(&cov.to_owned(), COV_EPS).view())
        .ok_or(Error::SingularCovariance { index })
}

fn log_density_chol(mean: ArrayView1<f64>, l: ArrayView2<f64>, z: ArrayView1<f64>) -> f64 {
    let d = mean.len() as f64;
    let diff = &z - &mean;
    let w = solve_lower(l, diff.view());
    let maha = w.dot(&w);
    -d * HALF_LN_2PI - 0.5 * log_det(l) - 0.5 * maha
}

/// Log-density of a diagonal Gaussian.
pub fn log_density_diag(g: &DiagGaussian, z: &[f64]) -> Result<f64> {
    check_dim(g.dim(), z.len())?;
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(z)
        .map(|((m, lv), x)| -HALF_LN_2PI - 0.5 * lv - (x - m).powi(2) / (2.0 * lv.exp()))
        .sum())
}

/// `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    check_dim(q.dim(), p.dim())?;
    let mut total = 0.0;
    for j in 0..q.dim() {
        let (mq, lq) = (q.mean[j], q.log_var[j]);
        let (mp, lp) = (p.mean[j], p.log_var[j]);
        total += 0.5 * (lp - lq) + (lq.exp() + (mq - mp).powi(2)) / (2.0 * lp.exp()) - 0.5;
    }
    Ok(total.max(0.0))
}

/// `KL(q ‖ p)` between discrete distributions with `0·log 0 = 0`.
pub fn kl_discrete(q: &DiscreteDist, p: &DiscreteDist) -> Result<f64> {
    check_dim(q.len(), p.len())?;
    let mut total = 0.0;
    for (c, (&wq, &wp)) in q.probs.iter().zip(&p.probs).enumerate() {
        if wq == 0.0 {
            continue;
        }
        if wp == 0.0 {
            return Err(Error::InfiniteKl { index: c });
        }
        total += wq * (wq / wp).ln();
    }
    Ok(total)
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<FullGaussian>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), got: weights.len() });
        }
        validate_simplex(&weights)?;
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        Ok(Self { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Restriction to the trailing block starting at `split`.
    pub fn marginal_tail(&self, split: usize) -> GaussianMixture {
        let comps = self
            .components
            .iter()
            .map(|c| FullGaussian {
                mean: c.mean.slice(s![split..]).to_owned(),
                cov: c.cov.slice(s![split.., split..]).to_owned(),
            })
            .collect();
        GaussianMixture { weights: self.weights.clone(), components: comps }
    }

    /// Restriction to the leading `split` coordinates.
    pub fn marginal_head(&self, split: usize) -> GaussianMixture {
        let comps = self
            .components
            .iter()
            .map(|c| FullGaussian {
                mean: c.mean.slice(s![..split]).to_owned(),
                cov: c.cov.slice(s![..split, ..split]).to_owned(),
            })
            .collect();
        GaussianMixture { weights: self.weights.clone(), components: comps }
    }

    /// Ancestral sampling: component by weight, then the Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<(usize, Vec<f64>)>> {
        let factors = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| factor(c.cov.view(), i))
            .collect::<Result<Vec<_>>>()?;
        let d = self.dim();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let c = pick_index(&self.weights, rng.random::<f64>());
            let eps: Array1<f64> =
                (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let z = &self.components[c].mean + &factors[c].dot(&eps);
            out.push((c, z.to_vec()));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MixtureDoc {
            dim: self.dim(),
            weights: self.weights.clone(),
            components: self
                .components
                .iter()
                .map(|c| ComponentDoc {
                    mean: c.mean.to_vec(),
                    cov: c.cov.rows().into_iter().map(|r| r.to_vec()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MixtureDoc = serde_json::from_str(text)?;
        let mut comps = Vec::with_capacity(doc.components.len());
        for c in doc.components {
            check_dim(doc.dim, c.mean.len())?;
            check_dim(doc.dim, c.cov.len())?;
            let mut cov = Array2::zeros((doc.dim, doc.dim));
            for (i, row) in c.cov.iter().enumerate() {
                check_dim(doc.dim, row.len())?;
                for (j, v) in row.iter().enumerate() {
                    cov[[i, j]] = *v;
                }
            }
            comps.push(FullGaussian { mean: Array1::from(c.mean), cov });
        }
        if comps.is_empty() {
            return Err(Error::InvalidDistribution("mixture without components".into()));
        }
        Self::new(doc.weights, comps)
    }
}

#[derive(Serialize, Deserialize)]
struct MixtureDoc {
    dim: usize,
    weights: Vec<f64>,
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

/// Inverse-CDF pick over unnormalized-safe cumulative weights.
pub(crate) fn pick_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

/// `log Σ_c w_c N(z; μ_c, Σ_c)`.
pub fn mixture_log_density(m: &GaussianMixture, z: &[f64]) -> Result<f64> {
    check_dim(m.dim(), z.len())?;
    let z = ArrayView1::from(z);
    let terms = component_log_terms(m, z)?;
    Ok(log_sum_exp(&terms))
}

fn component_log_terms(m: &GaussianMixture, z: ArrayView1<f64>) -> Result<Vec<f64>> {
    m.components
        .iter()
        .zip(&m.weights)
        .enumerate()
        .map(|(i, (c, w))| {
            let l = factor(c.cov.view(), i)?;
            Ok(w.ln() + log_density_chol(c.mean.view(), l.view(), z))
        })
        .collect()
}

/// Log-density of the marginal over the trailing block `z[split..]`.
pub fn marginal_log_density(m: &GaussianMixture, split: usize, z2: &[f64]) -> Result<f64> {
    if split >= m.dim() {
        return Err(Error::InvalidArgument(format!("split {split} leaves no conditioning block")));
    }
    mixture_log_density(&m.marginal_tail(split), z2)
}

/// Conditions the joint mixture over `[z₁; z₂]` (with `dim z₁ = split`) on
/// an observed `z₂`, returning the mixture over `z₁`.
pub fn condition_mixture(m: &GaussianMixture, split: usize, z2: &[f64]) -> Result<GaussianMixture> {
    let d = m.dim();
    if split == 0 || split >= d {
        return Err(Error::InvalidArgument(format!("split {split} invalid for dimension {d}")));
    }
    check_dim(d - split, z2.len())?;
    let z2 = ArrayView1::from(z2);
    let mut log_w = Vec::with_capacity(m.len());
    let mut comps = Vec::with_capacity(m.len());
    for (i, (c, w)) in m.components.iter().zip(&m.weights).enumerate() {
        let mu1 = c.mean.slice(s![..split]);
        let mu2 = c.mean.slice(s![split..]);
        let s11 = c.cov.slice(s![..split, ..split]);
        let s12 = c.cov.slice(s![..split, split..]);
        let s22 = c.cov.slice(s![split.., split..]);
        let l = factor(s22, i)?;
        log_w.push(w.ln() + log_density_chol(mu2, l.view(), z2));

        // Σ₁₂ Σ₂₂⁻¹ (z₂ − μ₂) and Σ₁₂ Σ₂₂⁻¹ Σ₂₁ through W = L⁻¹ Σ₂₁.
        let diff = &z2 - &mu2;
        let alpha = linalg::cholesky_solve(l.view(), diff.view());
        let mean = &mu1 + &s12.dot(&alpha);
        let mut w_mat = Array2::<f64>::zeros((d - split, split));
        for col in 0..split {
            let v = solve_lower(l.view(), s12.row(col));
            w_mat.column_mut(col).assign(&v);
        }
        let mut cov = &s11 - &w_mat.t().dot(&w_mat);
        linalg::symmetrize(&mut cov);
        comps.push(FullGaussian { mean, cov });
    }
    let total = log_sum_exp(&log_w);
    if !total.is_finite() {
        return Err(Error::OutsideSupport);
    }
    let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - total).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(GaussianMixture { weights, components: comps })
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood of the data at each evaluated parameter set.
    pub log_likelihoods: Vec<f64>,
    /// Iteration indices (into `log_likelihoods`) right after which a
    /// component was reinitialized.
    pub reinitialized_at: Vec<usize>,
    pub converged: bool,
}

impl EmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("EM evaluates at least once")
    }
}

/// Fits a `components`-Gaussian mixture by expectation-maximization,
/// initialized from k-means.
pub fn fit_gmm_em(
    samples: &[Vec<f64>],
    components: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<EmFit> {
    if components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let n = samples.len();
    let d = samples.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if n < components * (d + 1) {
        return Err(Error::InvalidArgument(format!(
            "{n} samples insufficient for {components} components in {d} dimensions"
        )));
    }
    for s in samples {
        check_dim(d, s.len())?;
    }
    let data = Array2::from_shape_fn((n, d), |(i, j)| samples[i][j]);

    let km = postprocess::kmeans(samples, components, seed, postprocess::KMEANS_MAX_ITER)?;
    let (centroids, assignment) = (km.centroids, km.assignments);
    let global = weighted_cov(&data, &vec![1.0; n], data.mean_axis(ndarray::Axis(0)).unwrap().view());
    let mut weights = vec![0.0; components];
    let mut comps = Vec::with_capacity(components);
    for (c, centroid) in centroids.iter().enumerate() {
        let r: Vec<f64> = assignment.iter().map(|&a| if a == c { 1.0 } else { 0.0 }).collect();
        let count: f64 = r.iter().sum();
        weights[c] = count / n as f64;
        let mean = Array1::from(centroid.clone());
        let cov = if count > 0.0 { weighted_cov(&data, &r, mean.view()) } else { global.clone() };
        comps.push(FullGaussian { mean, cov: linalg::regularize(&cov, COV_EPS) });
    }
    if weights.iter().any(|w| *w == 0.0) {
        weights.iter_mut().for_each(|w| *w = (*w * n as f64 + 1.0) / (n + components) as f64);
    }

    let mut mixture = GaussianMixture { weights, components: comps };
    let mut lls: Vec<f64> = Vec::new();
    let mut reinit: Vec<usize> = Vec::new();
    let mut reinit_count = 0;
    let mut converged = false;
    let mut resp = Array2::<f64>::zeros((n, components));
    let mut point_ll = vec![0.0; n];

    for iter in 0..max_iter.max(1) {
        // E-step, sequential so the reduction order is fixed.
        let factors = mixture
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| factor(c.cov.view(), i))
            .collect::<Result<Vec<_>>>()?;
        let mut total_ll = 0.0;
        let mut terms = vec![0.0; components];
        for i in 0..n {
            let x = data.row(i);
            for c in 0..components {
                terms[c] = mixture.weights[c].ln()
                    + log_density_chol(mixture.components[c].mean.view(), factors[c].view(), x);
            }
            let lse = log_sum_exp(&terms);
            point_ll[i] = lse;
            total_ll += lse;
            for c in 0..components {
                resp[[i, c]] = (terms[c] - lse).exp();
            }
        }
        let mean_ll = total_ll / n as f64;
        if !mean_ll.is_finite() {
            return Err(Error::EmFailed(format!("non-finite log-likelihood at iteration {iter}")));
        }
        if let Some(prev) = lls.last() {
            if (mean_ll - prev).abs() < tol {
                lls.push(mean_ll);
                converged = true;
                break;
            }
        }
        lls.push(mean_ll);
        if iter + 1 == max_iter.max(1) {
            break;
        }

        // M-step.
        let mut new_weights = vec![0.0; components];
        let mut new_comps = Vec::with_capacity(components);
        let mut reinit_here = false;
        for c in 0..components {
            let r: Vec<f64> = resp.column(c).to_vec();
            let nk: f64 = r.iter().sum();
            if !(nk > 1e-12) {
                reinit_count += 1;
                if reinit_count >= 3 {
                    return Err(Error::EmFailed(format!(
                        "component {c} lost all responsibility mass repeatedly"
                    )));
                }
                reinit_here = true;
                let worst = point_ll
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                new_weights[c] = 1.0 / n as f64;
                new_comps.push(FullGaussian {
                    mean: data.row(worst).to_owned(),
                    cov: linalg::regularize(&global, COV_EPS),
                });
                continue;
            }
            let mut mean = Array1::<f64>::zeros(d);
            for (i, ri) in r.iter().enumerate() {
                mean.scaled_add(*ri, &data.row(i));
            }
            mean /= nk;
            let cov = weighted_cov(&data, &r, mean.view());
            new_weights[c] = nk / n as f64;
            new_comps.push(FullGaussian { mean, cov: linalg::regularize(&cov, COV_EPS) });
        }
        let wsum: f64 = new_weights.iter().sum();
        new_weights.iter_mut().for_each(|w| *w /= wsum);
        if reinit_here {
            reinit.push(iter);
        }
        mixture = GaussianMixture { weights: new_weights, components: new_comps };
    }

    Ok(EmFit { mixture, log_likelihoods: lls, reinitialized_at: reinit, converged })
}

/// `Σ rᵢ (xᵢ−μ)(xᵢ−μ)ᵀ / Σ rᵢ`.
fn weighted_cov(data: &Array2<f64>, r: &[f64], mean: ArrayView1<f64>) -> Array2<f64> {
    let d = data.ncols();
    let mut cov = Array2::<f64>::zeros((d, d));
    let mut total = 0.0;
    for (i, ri) in r.iter().enumerate() {
        if *ri == 0.0 {
            continue;
        }
        total += ri;
        let diff = &data.row(i) - &mean;
        for a in 0..d {
            let da = ri * diff[a];
            for b in a..d {
                cov[[a, b]] += da * diff[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[[a, b]] / total;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    cov
}

/// Sample mean and (biased) covariance of rows.
pub fn sample_moments(samples: &[Vec<f64>]) -> (Array1<f64>, Array2<f64>) {
    let n = samples.len();
    let d = samples[0].len();
    let data = Array2::from_shape_fn((n, d), |(i, j)| samples[i][j]);
    let mean = data.mean_axis(ndarray::Axis(0)).unwrap();
    let cov = weighted_cov(&data, &vec![1.0; n], mean.view());
    (mean, cov)
}

/// Seeded sampler for a diagonal Gaussian.
pub fn sample_diag(g: &DiagGaussian, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Vec<f64> = g.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    (0..count)
        .map(|_| {
            g.mean
                .iter()
                .zip(&std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn g1(m: f64, v: f64) -> DiagGaussian {
        DiagGaussian::from_variance(vec![m], &[v]).unwrap()
    }

    fn mix1(weights: &[f64], comps: &[(f64, f64)]) -> GaussianMixture {
        GaussianMixture::new(
            weights.to_vec(),
            comps
                .iter()
                .map(|(m, v)| FullGaussian::new(array![*m], array![[*v]]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn log_density_diag_examples() {
        assert!((log_density_diag(&g1(0.0, 1.0), &[0.0]).unwrap() + 0.9189385).abs() < 1e-7);
        let g2 = DiagGaussian::standard(2);
        assert!((log_density_diag(&g2, &[0.0, 0.0]).unwrap() + 1.8378771).abs() < 1e-7);
        assert!((log_density_diag(&g1(0.0, 4.0), &[2.0]).unwrap() + 2.1120857).abs() < 1e-7);
        assert!(log_density_diag(&g2, &[0.0]).is_err());
    }

    #[test]
    fn log_density_diag_integrates_to_one() {
        let g = g1(0.0, 4.0);
        let h = 1e-3;
        let mut total = 0.0;
        let mut x = -20.0;
        while x <= 20.0 {
            total += log_density_diag(&g, &[x]).unwrap().exp() * h;
            x += h;
        }
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kl_diag_examples() {
        assert_eq!(kl_diag(&g1(0.0, 1.0), &g1(0.0, 1.0)).unwrap(), 0.0);
        assert!((kl_diag(&g1(1.0, 1.0), &g1(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((kl_diag(&g1(0.0, 4.0), &g1(0.0, 1.0)).unwrap() - 0.8068528).abs() < 1e-7);
        assert!(kl_diag(&g1(0.0, 1.0), &DiagGaussian::standard(2)).is_err());
    }

    #[test]
    fn kl_discrete_examples() {
        let a = DiscreteDist::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(kl_discrete(&a, &a).unwrap(), 0.0);
        let q = DiscreteDist::new(vec![1.0, 0.0]).unwrap();
        let p = DiscreteDist::uniform(2);
        assert!((kl_discrete(&q, &p).unwrap() - 0.6931472).abs() < 1e-7);
        assert!(matches!(kl_discrete(&p, &q), Err(Error::InfiniteKl { index: 1 })));
    }

    #[test]
    fn discrete_dist_rejects_bad_simplex() {
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteDist::new(vec![]).is_err());
    }

    #[test]
    fn mixture_log_density_examples() {
        let m = mix1(&[1.0], &[(0.0, 1.0)]);
        assert!((mixture_log_density(&m, &[0.0]).unwrap() + 0.9189385).abs() < 1e-7);
        let m = mix1(&[0.5, 0.5], &[(0.0, 1.0), (0.0, 1.0)]);
        assert!((mixture_log_density(&m, &[0.0]).unwrap() + 0.9189385).abs() < 1e-7);
        let m = mix1(&[0.5, 0.5], &[(-5.0, 1.0), (5.0, 1.0)]);
        let direct = (0.5 * 2.0 * (-12.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt()).ln();
        let got = mixture_log_density(&m, &[0.0]).unwrap();
        assert!((got - direct).abs() < 1e-12);
        assert!((got + 13.4189385).abs() < 1e-7);
    }

    #[test]
    fn singular_component_is_named() {
        let m = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                FullGaussian::new(array![0.0, 0.0], Array2::eye(2)).unwrap(),
                FullGaussian::new(array![0.0, 0.0], array![[1.0, 2.0], [2.0, 1.0]]).unwrap(),
            ],
        )
        .unwrap();
        assert!(matches!(
            mixture_log_density(&m, &[0.0, 0.0]),
            Err(Error::SingularCovariance { index: 1 })
        ));
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let m = mix1(&[0.2, 0.5, 0.3], &[(-2.0, 0.5), (1.0, 1.5), (3.0, 0.25)]);
        // ±8σ around the extreme components.
        let (lo, hi) = (-2.0 - 8.0 * 0.5f64.sqrt(), 1.0 + 8.0 * 1.5f64.sqrt());
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| mixture_log_density(&m, &[x]).unwrap().exp();
        let mut total = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            total += f(lo + i as f64 * h);
        }
        assert!((total * h - 1.0).abs() < 1e-3);
    }

    #[test]
    fn condition_single_component() {
        let m = GaussianMixture::new(
            vec![1.0],
            vec![FullGaussian::new(array![0.0, 0.0], array![[1.0, 0.5], [0.5, 1.0]]).unwrap()],
        )
        .unwrap();
        let c = condition_mixture(&m, 1, &[1.0]).unwrap();
        assert_eq!(c.weights, vec![1.0]);
        assert!((c.components[0].mean[0] - 0.5).abs() < 1e-15);
        assert!((c.components[0].cov[[0, 0]] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn condition_reweights_by_marginal_density() {
        // Component marginals at z2=0 in ratio 2:1: N(0;0,1) vs N(0;a,1) with
        // exp(-a²/2) = 1/2.
        let a = (2.0 * 2f64.ln()).sqrt();
        let comp = |m2: f64| {
            FullGaussian::new(array![0.0, m2], array![[1.0, 0.0], [0.0, 1.0]]).unwrap()
        };
        let m = GaussianMixture::new(vec![0.5, 0.5], vec![comp(0.0), comp(a)]).unwrap();
        let c = condition_mixture(&m, 1, &[0.0]).unwrap();
        assert!((c.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((c.weights[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn condition_isolated_component_takes_all_weight() {
        let comp = |m: f64| FullGaussian::new(array![m, m], array![[1.0, 0.3], [0.3, 1.0]]).unwrap();
        let m = GaussianMixture::new(vec![0.4, 0.3, 0.3], vec![comp(0.0), comp(1.0), comp(60.0)])
            .unwrap();
        let c = condition_mixture(&m, 1, &[60.0]).unwrap();
        assert!((c.weights[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn condition_far_outside_support_errors() {
        let m = mix1(&[1.0], &[(0.0, 1.0)]);
        let joint = GaussianMixture::new(
            vec![1.0],
            vec![FullGaussian::new(array![0.0, 0.0], Array2::eye(2)).unwrap()],
        )
        .unwrap();
        assert!(matches!(condition_mixture(&joint, 1, &[1e200]), Err(Error::OutsideSupport)));
        assert!(condition_mixture(&m, 1, &[0.0]).is_err());
    }

    #[test]
    fn marginal_examples() {
        let joint = GaussianMixture::new(
            vec![1.0],
            vec![FullGaussian::new(array![0.0, 0.0], Array2::eye(2)).unwrap()],
        )
        .unwrap();
        assert!((marginal_log_density(&joint, 1, &[0.0]).unwrap() + 0.9189385).abs() < 1e-7);

        let comp = |m: f64| FullGaussian::new(array![0.0, m], Array2::eye(2)).unwrap();
        let sym = GaussianMixture::new(vec![0.5, 0.5], vec![comp(-1.0), comp(1.0)]).unwrap();
        let single = GaussianMixture::new(vec![1.0], vec![comp(1.0)]).unwrap();
        assert!(
            (marginal_log_density(&sym, 1, &[0.0]).unwrap()
                - marginal_log_density(&single, 1, &[0.0]).unwrap())
            .abs()
                < 1e-12
        );
    }

    #[test]
    fn marginal_matches_grid_integration() {
        let comp = |m: [f64; 2], c: [[f64; 2]; 2]| {
            FullGaussian::new(array![m[0], m[1]], array![[c[0][0], c[0][1]], [c[1][0], c[1][1]]])
                .unwrap()
        };
        let joint = GaussianMixture::new(
            vec![0.2, 0.5, 0.3],
            vec![
                comp([0.0, 1.0], [[1.0, 0.4], [0.4, 0.8]]),
                comp([-1.5, 0.2], [[0.6, -0.2], [-0.2, 1.2]]),
                comp([2.0, -0.7], [[1.4, 0.5], [0.5, 0.9]]),
            ],
        )
        .unwrap();
        let z2 = 0.3;
        let (lo, hi, steps) = (-15.0, 15.0, 30_000);
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| mixture_log_density(&joint, &[x, z2]).unwrap().exp();
        let mut total = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            total += f(lo + i as f64 * h);
        }
        let expect = marginal_log_density(&joint, 1, &[z2]).unwrap().exp();
        assert!((total * h - expect).abs() < 1e-6);
    }

    #[test]
    fn em_identical_samples() {
        let samples = vec![vec![1.5, -2.0]; 10];
        let fit = fit_gmm_em(&samples, 1, 0, 200, 1e-6).unwrap();
        let c = &fit.mixture.components[0];
        assert_eq!(c.mean.to_vec(), vec![1.5, -2.0]);
        assert_eq!(c.cov, Array2::<f64>::eye(2) * COV_EPS);
    }

    #[test]
    fn em_single_component_closed_form() {
        let samples = sample_diag(&DiagGaussian::from_variance(vec![1.0, 2.0], &[2.0, 0.5]).unwrap(), 500, 3);
        let fit = fit_gmm_em(&samples, 1, 0, 200, 1e-6).unwrap();
        let (mean, cov) = sample_moments(&samples);
        let c = &fit.mixture.components[0];
        for (a, b) in c.mean.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let reg = linalg::regularize(&cov, COV_EPS);
        for (a, b) in c.cov.iter().zip(reg.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn em_rejects_too_few_samples() {
        let samples = vec![vec![0.0, 0.0]; 5];
        assert!(fit_gmm_em(&samples, 2, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let m = GaussianMixture::new(
            vec![0.1, 0.9],
            vec![
                FullGaussian::new(array![0.1 + 0.2, 1.0 / 3.0], array![[2.0 / 3.0, 1e-17], [1e-17, 7.0]])
                    .unwrap(),
                FullGaussian::new(array![-1e300, 5e-324], Array2::eye(2)).unwrap(),
            ],
        )
        .unwrap();
        let back = GaussianMixture::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let bad = r#"{"dim":2,"weights":[1.0],"components":[{"mean":[0.0],"cov":[[1.0]]}]}"#;
        assert!(GaussianMixture::from_json(bad).is_err());
    }
}
