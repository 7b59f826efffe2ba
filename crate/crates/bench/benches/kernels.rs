use aitsr_core::features::{fit_scaler, Dataset};
use aitsr_core::ingest::{timestamps_from_fps, trim_mask};
use aitsr_core::nn::{Activation, MlpModel};
use aitsr_core::seed;
use aitsr_core::synthgen::{four_class_scene, render_video, NoiseSpec, PlateMaterial};
use aitsr_core::tsr::{fit_sequence, TsrConfig};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::Rng;

fn tsr_fit(c: &mut Criterion) {
    let material = PlateMaterial::default();
    let (layout, _) = four_class_scene(64, 48, [0.0, 0.1, 0.2, 0.3], 5.0, &material).unwrap();
    let ts = timestamps_from_fps(720, 3.0);
    let seq = render_video(&layout, &ts, NoiseSpec::relative(material.amplitude, 1), (0.0, 254.0)).unwrap();
    let mut g = c.benchmark_group("fit_sequence");
    g.sample_size(10);
    for degree in [4, 8] {
        let config = TsrConfig {
            degree,
            ..TsrConfig::default()
        };
        g.bench_function(format!("64x48x720 degree {degree}"), |b| {
            b.iter(|| fit_sequence(black_box(&seq), &config))
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    use Activation::*;
    let model = MlpModel::init(&[15, 10, 20, 4], &[Tanh, Tanh, Softmax], 1).unwrap();
    let mut rng = seed::rng(2, &[]);
    let x = Array2::from_shape_fn((2048, 15), |_| rng.gen_range(-2.0..2.0));
    let labels: Vec<usize> = (0..2048).map(|_| rng.gen_range(0..4)).collect();
    c.bench_function("forward 15-10-20-4 batch 2048", |b| {
        b.iter(|| model.forward_batch(black_box(x.view())))
    });
    c.bench_function("backward 15-10-20-4 batch 2048", |b| {
        b.iter(|| model.backward(black_box(x.view()), &labels).unwrap())
    });
    let ds = Dataset::new(
        15,
        4,
        x.iter().copied().collect(),
        labels.clone(),
        vec![(0, 0); 2048],
    )
    .unwrap();
    c.bench_function("fit_scaler 2048x15", |b| b.iter(|| fit_scaler(black_box(&ds)).unwrap()));
}

fn mask(c: &mut Criterion) {
    let material = PlateMaterial::default();
    let (_, mask) = four_class_scene(640, 512, [0.0, 0.1, 0.2, 0.3], 5.0, &material).unwrap();
    c.bench_function("trim_mask 640x512 margin 5", |b| {
        b.iter_batched(|| mask.clone(), |m| trim_mask(&m, 5), BatchSize::LargeInput)
    });
}

criterion_group!(benches, tsr_fit, network, mask);
criterion_main!(benches);
