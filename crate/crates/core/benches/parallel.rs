//! Parallel vs sequential cell execution on representative workloads:
//! a multi-seed regressor training sweep and a batch of GP Gram/KL
//! evaluations.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use longfill::data::DescriptorKind;
use longfill::exec::{map_par, map_seq};
use longfill::gp::{eval_gram, kl_posterior_vs_gp, KernelComponent, KernelParams, KernelSpec};
use longfill::pipeline::align::AlignedSequence;
use longfill::predict::{train_regressor, CellKind, PredictorConfig, RegressorParams};
use longfill::tensor::Tensor;

fn toy_sequences(n: usize, t: usize, seed: u64) -> Vec<AlignedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let features: Vec<Vec<f64>> = (0..t)
                .map(|s| vec![((s + i) as f64 * 0.31).sin(), rng.gen_range(-1.0..1.0)])
                .collect();
            let targets: Vec<f64> = (0..t).map(|s| 0.5 + 0.3 * ((s as f64) * 0.2).cos()).collect();
            AlignedSequence {
                subject_id: format!("s{i}"),
                descriptors: vec![rng.gen_range(-1.0..1.0)],
                times: (0..t).map(|x| x as f64).collect(),
                features,
                targets,
                mask: vec![true; t],
                target_mask: vec![true; t],
            }
        })
        .collect()
}

fn train_cell(seed: u64) -> f64 {
    let seqs = toy_sequences(16, 8, seed);
    let (train, val) = seqs.split_at(12);
    let cfg = PredictorConfig {
        hidden: 6,
        lr: 0.02,
        max_epochs: 10,
        patience: 10,
        batch_size: 8,
        min_delta: 1e-6,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = RegressorParams::new(&mut rng, CellKind::Gru, 2, cfg.hidden);
    train_regressor(init, train, val, &cfg, seed)
        .map(|t| t.best_val_rmse)
        .unwrap_or(f64::NAN)
}

fn gram_kl_cell(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 96;
    let x = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let kinds = vec![DescriptorKind::Continuous, DescriptorKind::Continuous];
    let spec = KernelSpec {
        components: vec![KernelComponent::SquaredExponential { inputs: vec![0, 1] }],
        jitter: 1e-6,
    };
    let params = KernelParams::unit(&spec.components);
    let gram = eval_gram(&spec, &params, &x, &kinds).unwrap();
    let mu = Tensor::matrix(n, 4, (0..4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let ls = Tensor::matrix(n, 4, (0..4 * n).map(|_| rng.gen_range(-0.3..0.3)).collect()).unwrap();
    kl_posterior_vs_gp(&mu, &ls, &gram).unwrap()
}

fn bench_training_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("regressor_seed_sweep");
    group.sample_size(10);
    let seeds: Vec<u64> = (0..8).collect();
    group.bench_with_input(BenchmarkId::new("sequential", 8), &seeds, |b, seeds| {
        b.iter(|| map_seq(seeds.clone(), train_cell))
    });
    group.bench_with_input(BenchmarkId::new("rayon", 8), &seeds, |b, seeds| {
        b.iter(|| map_par(seeds.clone(), train_cell))
    });
    group.finish();
}

fn bench_gram_kl(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram_kl_batches");
    group.sample_size(10);
    let seeds: Vec<u64> = (0..16).collect();
    group.bench_with_input(BenchmarkId::new("sequential", 16), &seeds, |b, seeds| {
        b.iter(|| map_seq(seeds.clone(), gram_kl_cell))
    });
    group.bench_with_input(BenchmarkId::new("rayon", 16), &seeds, |b, seeds| {
        b.iter(|| map_par(seeds.clone(), gram_kl_cell))
    });
    group.finish();
}

criterion_group!(benches, bench_training_sweep, bench_gram_kl);
criterion_main!(benches);
