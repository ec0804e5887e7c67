use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segsum::corpus::{generate_synthetic, SynthConfig};
use segsum::dpp::{brute_force_subset_sum, dpp_loss_and_grad, Ridge};
use segsum::encoder::{backward, forward, ModelConfig, ModelParams, Upstream};
use segsum::oracle::{greedy_oracle, SegLabelConvention};
use segsum::rouge::{rouge_l, rouge_n};
use segsum::trainer::{total_loss, TrainConfig, TrainingExample};

fn dpp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("dpp_loss_and_grad");
    for n in [16usize, 64, 256] {
        let h = Array2::from_shape_fn((n, 32), |_| rng.gen_range(-1.0..1.0));
        let q = Array1::from_shape_fn(n, |_| rng.gen_range(0.05..0.95));
        let y: Vec<usize> = (0..n).step_by(5).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                dpp_loss_and_grad(h.view(), q.view(), black_box(&y), Ridge::TRAINING).unwrap()
            })
        });
    }
    group.finish();

    let b = Array2::from_shape_fn((12, 12), |_| rng.gen_range(-1.0..1.0));
    let l = b.dot(&b.t());
    c.bench_function("brute_force_subset_sum_n12", |bench| {
        bench.iter(|| brute_force_subset_sum(black_box(l.view())).unwrap())
    });
}

fn encoder(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = ModelParams::init(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("encoder");
    for n in [32usize, 128] {
        let raw =
            Array2::from_shape_fn((n, cfg.features.raw_width()), |_| rng.gen_range(-1.0..1.0));
        group.bench_with_input(BenchmarkId::new("forward", n), &n, |b, _| {
            b.iter(|| forward(black_box(raw.view()), &params).unwrap())
        });
        let pass = forward(raw.view(), &params).unwrap();
        let mut up = Upstream::zeros(n);
        up.d_logit_sum.fill(0.1);
        up.d_logit_seg.fill(-0.1);
        group.bench_with_input(BenchmarkId::new("backward", n), &n, |b, _| {
            b.iter(|| backward(&pass, black_box(&up), &params).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let params = ModelParams::init(&cfg, 4).unwrap();
    let records = generate_synthetic(&SynthConfig {
        n_documents: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let examples: Vec<TrainingExample> = records
        .iter()
        .map(|r| TrainingExample::from_record(r, SegLabelConvention::First, &cfg).unwrap())
        .collect();
    let batch: Vec<&TrainingExample> = examples.iter().collect();
    let train = TrainConfig::default();
    c.bench_function("total_loss_batch8", |b| {
        b.iter(|| total_loss(black_box(&batch), &params, &train).unwrap())
    });
}

fn rouge(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n)
            .map(|_| format!("w{}", rng.gen_range(0..200)))
            .collect()
    };
    let sys = words(&mut rng, 200);
    let reference = words(&mut rng, 250);
    c.bench_function("rouge_1", |b| {
        b.iter(|| rouge_n(black_box(&sys), &reference, 1))
    });
    c.bench_function("rouge_2", |b| {
        b.iter(|| rouge_n(black_box(&sys), &reference, 2))
    });
    c.bench_function("rouge_l", |b| {
        b.iter(|| rouge_l(black_box(&sys), &reference))
    });

    let records = generate_synthetic(&SynthConfig {
        n_documents: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let doc = &records[0].document;
    c.bench_function("greedy_oracle", |b| {
        b.iter(|| greedy_oracle(black_box(doc), None).unwrap())
    });
}

criterion_group!(benches, dpp, encoder, training_step, rouge);
criterion_main!(benches);
