//! Batched training objective recorded on a tape.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::network::{planar, rows, Model};
use super::Variant;
use crate::datasets::Example;
use crate::error::{Error, Result};
use crate::gaussmath::HALF_LN_2PI;
use crate::neural::{Gradients, Graph, Var};
use crate::unscented::{sigma_axis, subsample_indices};

pub(crate) struct BatchLoss {
    pub total: Var,
    pub rec: Var,
    pub kl: Var,
}

/// Standardized latent offsets, one row per `(scene, component, sample)`:
/// standard-normal draws for the sampling variants and `±√n e_j` / `0`
/// sigma offsets for the unscented ones.
pub(crate) fn latent_noise<R: Rng + ?Sized>(model: &Model, scenes: usize, rng: &mut R) -> Result<Array2<f64>> {
    let n = model.latent_dim();
    let k = model.config.samples;
    let groups = scenes * model.components();
    let mut e = Array2::zeros((groups * k, n));
    if model.config.variant.is_unscented() {
        let scale = (n as f64).sqrt();
        for grp in 0..groups {
            let idx: Vec<usize> = sigma_selection(n, k, rng.random())?;
            for (s, &i) in idx.iter().enumerate() {
                if let Some((axis, sign)) = sigma_axis(n, i) {
                    e[[grp * k + s, axis]] = sign * scale;
                }
            }
        }
    } else {
        e.mapv_inplace(|_| rng.sample(StandardNormal));
    }
    Ok(e)
}

/// Sigma-point indices used when decoding `k` of the `2n+1` points: all of
/// them, the center plus random axis pairs (odd `k`), or random pairs only.
pub fn sigma_selection(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 2 * n + 1 {
        return Ok((0..k).collect());
    }
    subsample_indices(n, k, seed, k % 2 == 1)
}

/// `Σ_rows KL(N(qm, e^qlv) ‖ N(pm, e^plv))`.
fn kl_diag_sum(g: &mut Graph, qm: Var, qlv: Var, pm: Var, plv: Var) -> Var {
    let d = g.sub(qm, pm);
    let d2 = g.square(d);
    let eq = g.exp(qlv);
    let num = g.add(eq, d2);
    let neg = g.scale(plv, -1.0);
    let inv_p = g.exp(neg);
    let ratio = g.mul(num, inv_p);
    let diff = g.sub(plv, qlv);
    let t = g.add(diff, ratio);
    let t = g.add_scalar(t, -1.0);
    let s = g.sum_all(t);
    g.scale(s, 0.5)
}

fn repeat_rows(count: usize, times: usize) -> Vec<usize> {
    (0..count * times).map(|r| r / times).collect()
}

fn seeded_loss(model: &Model, batch: &[Example], seed: u64) -> Result<(Graph, Var)> {
    let refs: Vec<&Example> = batch.iter().collect();
    let noise = latent_noise(model, batch.len(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut g = Graph::new();
    let loss = batch_loss(model, &mut g, &refs, &noise, true)?;
    Ok((g, loss.total))
}

/// Training-mode loss of `batch` with latent offsets drawn from `seed`.
pub fn objective(model: &Model, batch: &[Example], seed: u64) -> Result<f64> {
    let (g, total) = seeded_loss(model, batch, seed)?;
    Ok(g.scalar(total))
}

/// [`objective`] together with its gradient for every parameter.
pub fn objective_gradients(model: &Model, batch: &[Example], seed: u64) -> Result<(f64, Gradients)> {
    let (g, total) = seeded_loss(model, batch, seed)?;
    Ok((g.scalar(total), g.backward(total, &model.store)?))
}

/// Loss of one batch with the given standardized latent offsets.
pub(crate) fn batch_loss(
    model: &Model,
    g: &mut Graph,
    batch: &[&Example],
    noise: &Array2<f64>,
    train: bool,
) -> Result<BatchLoss> {
    let b = batch.len();
    let c = model.components();
    let k = model.config.samples;
    let n = model.latent_dim();
    let t_len = model.dims.future_len;
    if noise.dim() != (b * c * k, n) {
        return Err(Error::DimensionMismatch { expected: b * c * k, got: noise.nrows() });
    }
    let ctx: Vec<Vec<f64>> = batch.iter().map(|e| model.context_features(&e.context)).collect::<Result<_>>()?;
    let ys: Vec<Vec<f64>> = batch.iter().map(|e| planar(&e.future, t_len)).collect::<Result<_>>()?;
    let y_scaled: Vec<Vec<f64>> =
        ys.iter().map(|y| y.iter().map(|v| v / model.config.pos_scale).collect()).collect();

    let ctx_v = g.constant(rows(&ctx));
    let y_v = g.constant(rows(&y_scaled));
    let post = model.heads(g, ctx_v, Some(y_v), train)?;
    let prior = model.heads(g, ctx_v, None, train)?;

    let rep = repeat_rows(b * c, k);
    let mean_r = g.gather_rows(post.mean, rep.clone());
    let lv_r = g.gather_rows(post.log_var, rep);
    let eps = g.constant(noise.clone());
    let z = crate::neural::reparam(g, mean_r, lv_r, eps);
    let ctx_r = g.gather_rows(ctx_v, repeat_rows(b, c * k));
    let decoded = model.decode_var(g, ctx_r, z, train)?;

    let mut kl = kl_diag_sum(g, post.mean, post.log_var, prior.mean, prior.log_var);
    kl = g.scale(kl, 1.0 / b as f64);
    let sigma = model.config.sigma;
    let iso_const = 2.0 * t_len as f64 * (HALF_LN_2PI + sigma.ln());
    let rec = match model.config.variant {
        Variant::Cvae => {
            let y_rep: Vec<Vec<f64>> = (0..b * k).map(|r| ys[r / k].clone()).collect();
            let yc = g.constant(rows(&y_rep));
            let diff = g.sub(decoded, yc);
            let sq = g.square(diff);
            let s = g.sum_all(sq);
            let s = g.scale(s, 1.0 / (2.0 * sigma * sigma * (b * k) as f64));
            g.add_scalar(s, iso_const)
        }
        Variant::Cuae => {
            let centroid = g.segment_mean(decoded, k);
            let yc = g.constant(rows(&ys));
            let diff = g.sub(centroid, yc);
            let sq = g.square(diff);
            let s = g.sum_all(sq);
            let s = g.scale(s, 1.0 / (2.0 * sigma * sigma * b as f64));
            g.add_scalar(s, iso_const)
        }
        Variant::GmmCvae | Variant::GmmCuae => {
            let (lw_post, lw_prior) = match (post.log_w, prior.log_w) {
                (Some(a), Some(p)) => (a, p),
                _ => return Err(Error::InvalidArgument("mixture variant without weight heads".into())),
            };
            let rec = gmm_rec(model, g, decoded, &ys, lw_post)?;
            let w = g.exp(lw_post);
            let dl = g.sub(lw_post, lw_prior);
            let wd = g.mul(w, dl);
            let kw = g.sum_all(wd);
            let kw = g.scale(kw, 1.0 / b as f64);
            kl = g.add(kl, kw);
            rec
        }
    };
    let total = g.add(rec, kl);
    Ok(BatchLoss { total, rec, kl })
}

/// Winner-component NLL plus `−log w_φ[c*]`, averaged over the batch.
fn gmm_rec(model: &Model, g: &mut Graph, decoded: Var, ys: &[Vec<f64>], log_w: Var) -> Result<Var> {
    let b = ys.len();
    let c = model.components();
    let k = model.config.samples;
    let t = model.dims.future_len;
    let floor = model.config.cov_floor;

    let dx = g.slice_cols(decoded, 0, t);
    let dy = g.slice_cols(decoded, t, 2 * t);
    let mx = g.segment_mean(dx, k);
    let my = g.segment_mean(dy, k);
    let rep = repeat_rows(b * c, k);
    let mx_r = g.gather_rows(mx, rep.clone());
    let my_r = g.gather_rows(my, rep);
    let cx = g.sub(dx, mx_r);
    let cy = g.sub(dy, my_r);
    let cxx = g.square(cx);
    let cyy = g.square(cy);
    let cxy = g.mul(cx, cy);
    let sxx = g.segment_mean(cxx, k);
    let syy = g.segment_mean(cyy, k);
    let sxy = g.segment_mean(cxy, k);

    let winners: Vec<usize> = {
        let (mxv, myv) = (g.value(mx), g.value(my));
        (0..b)
            .map(|s| {
                let mut best = (0, f64::INFINITY);
                for comp in 0..c {
                    let r = s * c + comp;
                    let ade = (0..t)
                        .map(|i| ((mxv[[r, i]] - ys[s][i]).powi(2) + (myv[[r, i]] - ys[s][t + i]).powi(2)).sqrt())
                        .sum::<f64>()
                        / t as f64;
                    if ade < best.1 {
                        best = (comp, ade);
                    }
                }
                best.0
            })
            .collect()
    };
    let win_rows: Vec<usize> = winners.iter().enumerate().map(|(s, &w)| s * c + w).collect();
    let mx_w = g.gather_rows(mx, win_rows.clone());
    let my_w = g.gather_rows(my, win_rows.clone());
    let sxx_w = g.gather_rows(sxx, win_rows.clone());
    let sxx_w = g.add_scalar(sxx_w, floor);
    let syy_w = g.gather_rows(syy, win_rows.clone());
    let syy_w = g.add_scalar(syy_w, floor);
    let sxy_w = g.gather_rows(sxy, win_rows);

    let yx: Vec<Vec<f64>> = ys.iter().map(|y| y[..t].to_vec()).collect();
    let yy: Vec<Vec<f64>> = ys.iter().map(|y| y[t..].to_vec()).collect();
    let yx = g.constant(rows(&yx));
    let yy = g.constant(rows(&yy));
    let rx = g.sub(yx, mx_w);
    let ry = g.sub(yy, my_w);

    let a = g.mul(sxx_w, syy_w);
    let bb = g.square(sxy_w);
    let det = g.sub(a, bb);
    let rx2 = g.square(rx);
    let ry2 = g.square(ry);
    let rxy = g.mul(rx, ry);
    let q1 = g.mul(syy_w, rx2);
    let q2 = g.mul(sxy_w, rxy);
    let q2 = g.scale(q2, 2.0);
    let q3 = g.mul(sxx_w, ry2);
    let q = g.sub(q1, q2);
    let q = g.add(q, q3);
    let quad = g.div(q, det);
    let ld = g.ln(det);
    let per = g.add(ld, quad);
    let s = g.sum_all(per);
    let s = g.scale(s, 0.5 / b as f64);
    let nll = g.add_scalar(s, t as f64 * 2.0 * HALF_LN_2PI);

    let picked = g.pick(log_w, winners);
    let ce = g.sum_all(picked);
    let ce = g.scale(ce, -1.0 / b as f64);
    Ok(g.add(nll, ce))
}
