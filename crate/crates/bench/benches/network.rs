use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gradlab_bench::network_fixture;
use gradlab_core::loss::Objective;
use gradlab_core::trainer::{synthetic_quadrants, train_epoch};
use gradlab_core::{
    BatchPolicy, HyperParams, OptimKind, Optimizer, RegularizerConfig, Rng, RngStreams,
};

fn bench_forward_backward(c: &mut Criterion) {
    let (net, input) = network_fixture(3);
    c.bench_function("convnet_forward_12x12", |b| {
        b.iter(|| net.forward(black_box(&input)).unwrap().0);
    });
    c.bench_function("convnet_backward_12x12", |b| {
        let (_, cache) = net.forward(&input).unwrap();
        b.iter(|| net.backward(black_box(&cache), 1).unwrap());
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    c.bench_function("train_epoch_64_samples_minibatch16", |b| {
        let data = synthetic_quadrants(64, 12, &mut Rng::from_seed(4)).unwrap();
        b.iter(|| {
            let (mut net, _) = network_fixture(3);
            let mut opt = Optimizer::new(
                OptimKind::Adam,
                HyperParams::with_alpha(0.005),
                net.params(),
            )
            .unwrap();
            let mut streams = RngStreams::from_master(5);
            train_epoch(
                &mut net,
                &data,
                &Objective::default(),
                &mut opt,
                &RegularizerConfig::default(),
                BatchPolicy::MiniBatch(16),
                &mut streams,
                0,
                0.005,
            )
            .unwrap()
        });
    });
}

criterion_group!(benches, bench_forward_backward, bench_train_epoch);
criterion_main!(benches);
