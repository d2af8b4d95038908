//! Benchmarks for the differentiable training path.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use stisr_core::glyphs::glyph_dataset;
use stisr_core::loss::{ConvFeatureExtractor, LossWeights};
use stisr_core::trainer::{train, ToyModel, ToySRConfig, TrainConfig};
use stisr_core::CannyParams;

fn bench_train_step(c: &mut Criterion) {
    let dataset = glyph_dataset(8, 64, 2, 0.8, 0.02, 42).unwrap();
    let extractor = ConvFeatureExtractor::seeded_test(0);
    let cfg = ToySRConfig {
        scale: 2,
        base_channels: 12,
        num_blocks: 1,
        use_edge_input: true,
        predict_edge_head: true,
        canny: CannyParams::default(),
        seed: 0,
    };

    for (name, weights) in [
        ("train step l1-only", LossWeights { alpha: 0.0, beta: 0.0 }),
        ("train step edge-aware", LossWeights { alpha: 0.25, beta: 0.1 }),
    ] {
        let tc = TrainConfig {
            step_size: 1e-3,
            batch_size: 4,
            patch_size: 32,
            weights,
            checkpoint_interval: 0,
            max_steps: Some(1),
            seed: 1,
            ..TrainConfig::default()
        };
        c.bench_function(name, |b| {
            b.iter_batched(
                || ToyModel::new(&cfg).unwrap(),
                |model| train(black_box(model), &dataset, &tc, &extractor, None).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn bench_infer(c: &mut Criterion) {
    let dataset = glyph_dataset(1, 64, 2, 0.8, 0.02, 43).unwrap();
    let model = ToyModel::new(&ToySRConfig {
        scale: 2,
        base_channels: 12,
        num_blocks: 1,
        use_edge_input: true,
        predict_edge_head: true,
        canny: CannyParams::default(),
        seed: 0,
    })
    .unwrap();
    c.bench_function("infer 32x32 -> 64x64", |b| {
        b.iter(|| model.infer(black_box(&dataset[0].lr)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_train_step, bench_infer
}
criterion_main!(benches);
