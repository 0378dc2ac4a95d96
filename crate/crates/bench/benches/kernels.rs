use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use p4dfd_core::data::synth_phase_dataset;
use p4dfd_core::model::{forward_prepared, init_model, prepare_input, ModelConfig, Variant};
use p4dfd_core::spectral::dft2d;
use p4dfd_core::training::{sample_gradients, TrainConfig};
use p4dfd_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random::<f32>())
}

fn dft(c: &mut Criterion) {
    let mut group = c.benchmark_group("dft2d");
    // powers of two take the radix-2 path, the others go through Bluestein
    for side in [32, 63, 64, 100, 128] {
        let img = random(&[side, side], 1);
        group.bench_with_input(BenchmarkId::from_parameter(side), &img, |b, img| {
            b.iter(|| dft2d(black_box(img)).unwrap())
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for (cin, cout, side) in [(3, 16, 64), (16, 32, 32), (32, 64, 16)] {
        let x = random(&[cin, side, side], 2);
        let w = random(&[cout, cin, 3, 3], 3);
        let bias = random(&[cout], 4);
        let id = format!("{cin}x{side}x{side}->{cout}");
        group.bench_function(BenchmarkId::from_parameter(id), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let (x, w, bias) = (
                    tape.leaf(x.clone()),
                    tape.leaf(w.clone()),
                    tape.leaf(bias.clone()),
                );
                let y = tape.conv2d(x, w, bias, 1, 1).unwrap();
                black_box(tape.value(y).data()[0])
            })
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let sample = synth_phase_dataset(1, 64, 0.3, 5).unwrap().samples()[0].clone();
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for variant in [
        Variant::Rgb,
        Variant::RgbFftLbp,
        Variant::RgbFftLbpPhase,
        Variant::RgbFftLbpPhaseCs,
    ] {
        let cfg = ModelConfig::with_variant(variant);
        let params = init_model(&cfg, 0).unwrap();
        group.bench_function(BenchmarkId::new("prepare", variant.slug()), |b| {
            b.iter(|| prepare_input(black_box(&sample.image), &cfg).unwrap())
        });
        let input = prepare_input(&sample.image, &cfg).unwrap();
        group.bench_function(BenchmarkId::new("forward", variant.slug()), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = params.bind_constant(&mut tape);
                let out = forward_prepared(&mut tape, &bound, &cfg, &input).unwrap();
                black_box(tape.value(out.logit).data()[0])
            })
        });
        let train = TrainConfig::default();
        group.bench_function(BenchmarkId::new("forward_backward", variant.slug()), |b| {
            b.iter(|| sample_gradients(&params, &cfg, &input, sample.label, 1.0, &train).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dft, conv, model);
criterion_main!(benches);
