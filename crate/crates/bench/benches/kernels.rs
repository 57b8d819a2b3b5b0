use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use cuae::datasets::{generate, GeneratorConfig};
use cuae::expost::{cxp_sample, fit_joint, select_conditioning_sigma, EncodingPairSet};
use cuae::gaussmath::{condition_mixture, fit_gmm_em, sample_diag, DiagGaussian};
use cuae::models::{train_epoch, Checkpoint, Dims, Model, ModelConfig, PredictOptions, Variant, InferenceMode};
use cuae::postprocess::kmeans;
use cuae::unscented::{recover_moments, sigma_points};

fn latent(n: usize) -> DiagGaussian {
    DiagGaussian::new((0..n).map(|i| i as f64 * 0.1).collect(), (0..n).map(|i| -1.0 + 0.05 * i as f64).collect()).unwrap()
}

fn bench_sigma(c: &mut Criterion) {
    let g = latent(32);
    c.bench_function("sigma_points n=32", |b| b.iter(|| sigma_points(black_box(&g))));
    let set = sigma_points(&g);
    c.bench_function("recover_moments n=32", |b| b.iter(|| recover_moments(black_box(&set))));
}

fn blobs() -> Vec<Vec<f64>> {
    let mut rows = sample_diag(&DiagGaussian::new(vec![-3.0; 4], vec![0.0; 4]).unwrap(), 1000, 1);
    rows.extend(sample_diag(&DiagGaussian::new(vec![3.0; 4], vec![0.0; 4]).unwrap(), 1000, 2));
    rows
}

fn bench_mixtures(c: &mut Criterion) {
    let rows = blobs();
    c.bench_function("fit_gmm_em 2000x4 C=2", |b| b.iter(|| fit_gmm_em(black_box(&rows), 2, 0, 200, 1e-6).unwrap()));
    c.bench_function("kmeans 2000x4 k=3", |b| b.iter(|| kmeans(black_box(&rows), 3, 0, 100).unwrap()));

    let pairs = EncodingPairSet { latent_dim: 2, rows };
    let joint = fit_joint(&pairs, 2, 0).unwrap();
    c.bench_function("condition_mixture 2n=4 C=2", |b| b.iter(|| condition_mixture(black_box(&joint), 2, &[0.5, -0.5])));
    let prior = latent(2);
    c.bench_function("cxp select+sample K=64", |b| {
        b.iter(|| {
            let z = select_conditioning_sigma(&joint, black_box(&prior)).unwrap();
            cxp_sample(&joint, &z, 64, 0).unwrap()
        })
    });
}

fn bench_model(c: &mut Criterion) {
    let cfg = GeneratorConfig { n_scenes: 128, val_fraction: 0.0, ..GeneratorConfig::default() };
    let data: Vec<_> = generate(&cfg).unwrap().train.iter().map(|s| s.example()).collect();
    let dims = Dims::of(&data[0].context, &data[0].future);
    for variant in [Variant::Cuae, Variant::GmmCuae] {
        let ckpt = Checkpoint::new(Model::new(ModelConfig::new(variant), dims).unwrap());
        let name = format!("train epoch 128 scenes {variant}");
        c.bench_function(&name, |b| {
            b.iter_batched(|| ckpt.clone(), |mut ck| train_epoch(&mut ck, &data).unwrap(), BatchSize::LargeInput)
        });
        let opts = PredictOptions::new(if variant.is_gmm() { InferenceMode::Prior } else { InferenceMode::Sigma }, 17);
        let name = format!("predict {variant}");
        c.bench_function(&name, |b| b.iter(|| ckpt.model.predict(black_box(&data[0].context), &opts, None).unwrap()));
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_sigma, bench_mixtures, bench_model
}
criterion_main!(benches);
