use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gaussmath::DiagGaussian;

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

/// Central-difference check of `loss` at `coords` (param, flat index).
fn fd_check<F>(store: &mut ParamStore, coords: &[(ParamId, usize)], loss: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    let grads = g.backward(l, store).unwrap();
    // Cancellation noise of a central difference at this loss magnitude.
    let floor = 1e-9 * g.scalar(l).abs().max(1.0);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &(id, k) in coords {
        let orig = store.value(id).as_slice().unwrap()[k];
        let eval = |store: &mut ParamStore, v: f64| {
            store.value_mut(id).as_slice_mut().unwrap()[k] = v;
            let mut g = Graph::new();
            let l = loss(&mut g, store);
            g.scalar(l)
        };
        let up = eval(store, orig + h);
        let down = eval(store, orig - h);
        store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(id).as_slice().unwrap()[k];
        let diff = (analytic - numeric).abs();
        if diff > floor {
            worst = worst.max(diff / analytic.abs().max(numeric.abs()));
        }
    }
    worst
}

#[test]
fn forward_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "lin", &[3, 2], false, &mut rng);
    let (w, b) = net.output_layer();
    store.value_mut(w).fill(0.0);
    *store.value_mut(b) = row(&[0.5, -1.5]);
    assert_eq!(net.eval_row(&store, &[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.5]);
    assert!(net.eval_row(&store, &[1.0]).is_err());

    // 1×1 layer with ReLU applied explicitly.
    let mut store = ParamStore::new();
    let w = store.add("w", array![[2.0]]);
    let b = store.add("b", array![[0.0]]);
    let f = |x: f64, store: &ParamStore, relu: bool| {
        let mut g = Graph::new();
        let xv = g.constant(array![[x]]);
        let wv = g.param(store, w);
        let bv = g.param(store, b);
        let m = g.matmul(xv, wv);
        let mut out = g.add_row(m, bv);
        if relu {
            out = g.relu(out);
        }
        g.scalar(out)
    };
    assert_eq!(f(-3.0, &store, true), 0.0);
    *store.value_mut(b) = array![[1.0]];
    assert_eq!(f(3.0, &store, false), 7.0);
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let w = store.add("w", array![[3.0]]);
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let l = g.square(wv);
    assert_eq!(g.backward(l, &store).unwrap().get(w)[[0, 0]], 6.0);

    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let x = g.constant(array![[-2.0]]);
    let wx = g.mul(wv, x);
    let l = g.relu(wx);
    assert_eq!(g.backward(l, &store).unwrap().get(w)[[0, 0]], 0.0);

    let mut g = Graph::new();
    let c = g.constant(array![[1.0]]);
    let l = g.square(c);
    assert!(matches!(g.backward(l, &store), Err(crate::Error::Disconnected(_))));
}

#[test]
fn untouched_parameters_get_zero_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", array![[1.0, 2.0]]);
    let b = store.add("b", array![[5.0], [6.0], [7.0]]);
    let mut g = Graph::new();
    let av = g.param(&store, a);
    let l = g.sum_all(av);
    let grads = g.backward(l, &store).unwrap();
    assert_eq!(grads.get(b), &Array2::<f64>::zeros((3, 1)));
    assert_eq!(grads.get(a), &array![[1.0, 1.0]]);
}

fn random_coords(store: &ParamStore, n: usize, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize)> {
    let ids: Vec<ParamId> = store.ids().collect();
    (0..n)
        .map(|_| {
            let id = ids[rng.random_range(0..ids.len())];
            (id, rng.random_range(0..store.value(id).len()))
        })
        .collect()
}

#[test]
fn random_three_layer_net_matches_finite_differences() {
    for &bn in &[false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "net", &[4, 6, 5, 3], bn, &mut rng);
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let target = Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let coords = random_coords(&store, 10, &mut rng);
        let worst = fd_check(&mut store, &coords, |g, s| {
            let xv = g.constant(x.clone());
            let out = net.forward(g, s, xv, true).unwrap();
            let t = g.constant(target.clone());
            let d = g.sub(out, t);
            let sq = g.square(d);
            g.sum_all(sq)
        });
        assert!(worst < 1e-4, "bn={bn} worst relative error {worst}");
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let a = store.add("a", Array2::from_shape_fn((6, 4), |_| rng.random_range(0.2..1.5)));
    let b = store.add("b", Array2::from_shape_fn((6, 4), |_| rng.random_range(0.2..1.5)));
    let r = store.add("r", Array2::from_shape_fn((1, 4), |_| rng.random_range(-1.0..1.0)));
    let coords: Vec<(ParamId, usize)> =
        (0..24).map(|k| (a, k)).chain((0..24).map(|k| (b, k))).chain((0..4).map(|k| (r, k))).collect();
    let worst = fd_check(&mut store, &coords, |g, s| {
        let av = g.param(s, a);
        let bv = g.param(s, b);
        let rv = g.param(s, r);
        let sum = g.add(av, bv);
        let q = g.div(sum, bv);
        let e = g.exp(q);
        let lnb = g.ln(bv);
        let m = g.mul(e, lnb);
        let ar = g.add_row(m, rv);
        let ls = g.log_softmax(ar);
        let cat = g.concat_cols(ls, av);
        let sl = g.slice_cols(cat, 2, 6);
        let ga = g.gather_rows(sl, vec![0, 0, 3, 5, 1, 2, 4, 4]);
        let sm = g.segment_mean(ga, 2);
        let rs = g.reshape(sm, 8, 2);
        let pk = g.pick(rs, vec![0, 1, 1, 0, 0, 1, 1, 0]);
        let sc = g.sum_cols(rs);
        let both = g.mul(pk, sc);
        let shifted = g.add_scalar(both, -0.3);
        let sq = g.square(shifted);
        let bt = g.sub(av, bv);
        let rl = g.relu(bt);
        let rls = g.sum_all(rl);
        let total = g.sum_all(sq);
        let out = g.add(total, rls);
        g.scale(out, 0.7)
    });
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let a = store.add("a", Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0)));
    let b = store.add("b", Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0)));
    let coords: Vec<_> = (0..12).map(|k| (a, k)).chain((0..8).map(|k| (b, k))).collect();
    let worst = fd_check(&mut store, &coords, |g, s| {
        let av = g.param(s, a);
        let bv = g.param(s, b);
        let m = g.matmul(av, bv);
        let sq = g.square(m);
        g.sum_all(sq)
    });
    assert!(worst < 1e-4);
}

#[test]
fn eval_mode_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "n", &[3, 8, 2], true, &mut rng);
    let before = store.clone();
    let a = net.eval_row(&store, &[0.1, 0.2, 0.3]).unwrap();
    let b = net.eval_row(&store, &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(a, b);
    assert_eq!(store, before);
}

#[test]
fn running_statistics_follow_momentum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let net = Mlp::new(&mut store, "n", &[2, 3, 1], true, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
    net.forward(&mut g, &store, x, true).unwrap();
    let stats = g.take_batch_stats();
    assert_eq!(stats.len(), 1);
    store.update_running(&stats, BN_MOMENTUM);
    let buf = store.buffer(0);
    for (m, b) in buf.mean.iter().zip(stats[0].mean.iter()) {
        assert!((m - 0.1 * b).abs() < 1e-15);
    }
}

#[test]
fn reparam_examples() {
    let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -0.7]).unwrap();
    assert_eq!(reparam_sample(&g, &[0.0, 0.0]).unwrap(), g.mean);
    let e = [0.4, -1.3];
    assert_eq!(reparam_sample(&DiagGaussian::standard(2), &e).unwrap(), e.to_vec());
    assert!(reparam_sample(&g, &[0.0]).is_err());

    // dz/dμ = I through the tape, checked numerically.
    let mut store = ParamStore::new();
    let mu = store.add("mu", array![[1.0, -2.0]]);
    let lv = store.add("lv", array![[0.3, -0.7]]);
    for out in 0..2 {
        let coords = vec![(mu, 0), (mu, 1), (lv, 0), (lv, 1)];
        let worst = fd_check(&mut store, &coords, |gr, s| {
            let m = gr.param(s, mu);
            let l = gr.param(s, lv);
            let eps = gr.constant(array![[0.4, -1.3]]);
            let z = reparam(gr, m, l, eps);
            let zi = gr.slice_cols(z, out, out + 1);
            gr.sum_all(zi)
        });
        assert!(worst < 1e-6);
        let mut gr = Graph::new();
        let m = gr.param(&store, mu);
        let l = gr.param(&store, lv);
        let eps = gr.constant(array![[0.4, -1.3]]);
        let z = reparam(&mut gr, m, l, eps);
        let zi = gr.slice_cols(z, out, out + 1);
        let s = gr.sum_all(zi);
        let grads = gr.backward(s, &store).unwrap();
        let mut unit = array![[0.0, 0.0]];
        unit[[0, out]] = 1.0;
        assert_eq!(grads.get(mu), &unit);
    }
}

#[test]
fn adam_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", array![[1.0, -2.0, 3.0]]);
    let mut st = AdamState::new(&store);
    let zero = Gradients { grads: vec![Array2::zeros((1, 3))] };
    adam_step(&mut st, &mut store, &zero, 1e-3).unwrap();
    assert_eq!(store.value(p), &array![[1.0, -2.0, 3.0]]);

    let mut store = ParamStore::new();
    let p = store.add("p", array![[1.0, -2.0, 3.0]]);
    let mut st = AdamState::new(&store);
    let g = Gradients { grads: vec![array![[0.5, -4.0, 1e-2]]] };
    adam_step(&mut st, &mut store, &g, 1e-3).unwrap();
    let moved: Vec<f64> = store.value(p).iter().zip([1.0, -2.0, 3.0]).map(|(a, b)| (a - b).abs()).collect();
    for m in moved {
        assert!((m - 1e-3).abs() < 1e-6);
    }

    // Two steps with defaults differ from one step with doubled gradient.
    let mut s1 = ParamStore::new();
    s1.add("p", array![[0.0]]);
    let mut s2 = s1.clone();
    let mut a1 = AdamState::new(&s1);
    let mut a2 = AdamState::new(&s2);
    let one = Gradients { grads: vec![array![[1.0]]] };
    let two = Gradients { grads: vec![array![[2.0]]] };
    adam_step(&mut a1, &mut s1, &one, 0.1).unwrap();
    adam_step(&mut a1, &mut s1, &one, 0.1).unwrap();
    adam_step(&mut a2, &mut s2, &two, 0.1).unwrap();
    assert_ne!(s1, s2);
}

#[test]
fn adam_rejects_nan_with_name() {
    let mut store = ParamStore::new();
    store.add("enc.0.weight", array![[1.0]]);
    let mut st = AdamState::new(&store);
    let g = Gradients { grads: vec![array![[f64::NAN]]] };
    match adam_step(&mut st, &mut store, &g, 1e-3) {
        Err(crate::Error::NanGradient(name)) => assert_eq!(name, "enc.0.weight"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(st.step, 0);
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_schedule(0, 1e-4), 1e-4);
    assert_eq!(lr_schedule(9, 1e-4), 1e-4);
    assert_eq!(lr_schedule(12, 1e-4), 5e-5);
    assert_eq!(lr_schedule(25, 1e-4), 6.25e-6);
    assert_eq!(lr_schedule(29, 1e-4), 6.25e-6);
}
