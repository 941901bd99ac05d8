//! Shared fixtures for the criterion benchmarks.

use gradlab_core::{ActivationKind, Gradients, LayerSpec, Network, ParamSet, Rng, Tensor};

/// A parameter tensor of `n` seeded values plus a mirror gradient set.
pub fn param_fixture(n: usize, seed: u64) -> (ParamSet, Gradients) {
    let mut rng = Rng::from_seed(seed);
    let mut params = ParamSet::new();
    params.push(
        "w",
        Tensor::from_vec((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        true,
    );
    let mut grads = ParamSet::new();
    grads.push(
        "w",
        Tensor::from_vec((0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()),
        true,
    );
    (params, grads)
}

/// The small ConvNet stack used across the benchmarks, with a matching
/// seeded input.
pub fn network_fixture(seed: u64) -> (Network, Tensor) {
    let mut rng = Rng::from_seed(seed);
    let net = Network::new(
        &[1, 12, 12],
        vec![
            LayerSpec::Conv {
                out_maps: 4,
                kernel: 3,
                padding: 1,
                activation: ActivationKind::Relu,
            },
            LayerSpec::MeanPool { s: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 16,
                activation: ActivationKind::Tanh,
            },
            LayerSpec::SoftmaxOutput { classes: 2 },
        ],
        &mut rng,
    )
    .unwrap();
    let input = Tensor::new(vec![1, 12, 12], (0..144).map(|_| rng.next_f64()).collect()).unwrap();
    (net, input)
}
