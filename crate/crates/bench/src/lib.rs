//! Fixtures shared by the benchmarks.

use mltp_core::data::{split_task_pair, Batch, TaskPair, Targets};
use mltp_core::nn::{init_params, Activation, InitScheme, NetworkSpec};
use mltp_core::rng;
use mltp_core::{ParamSet, Precision, Tensor};
use rand::Rng;

/// A network, its parameters and one task pair of random inputs.
pub struct Fixture {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub batch: Batch,
    pub pair: TaskPair,
}

fn random_batch(n: usize, sample: &[usize], classes: usize, seed: u64) -> Batch {
    let mut r = rng::stream(seed, rng::SYNTH, 0);
    let d: usize = sample.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(sample);
    let data = (0..n * d).map(|_| r.random::<f64>() - 0.5).collect();
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    Batch {
        x: Tensor::new(shape, data, Precision::F64).expect("valid shape"),
        y: Targets::Classes(labels),
    }
}

fn build(spec: NetworkSpec, batch_size: usize) -> Fixture {
    let params = init_params(&spec, InitScheme::Xavier, 7, Precision::F64).expect("valid network");
    let batch = random_batch(batch_size, &spec.input, spec.classes, 11);
    let pair = split_task_pair(&batch).expect("batch of at least two");
    Fixture { spec, params, batch, pair }
}

/// 2-64-64-2 relu MLP on a batch of 64 points.
pub fn mlp_fixture() -> Fixture {
    build(NetworkSpec::mlp("mlp", 2, &[64, 64], 2, Activation::Relu), 64)
}

/// The smallest conv net on 1x28x28 inputs, at a quarter of its width.
pub fn cnet_fixture() -> Fixture {
    build(NetworkSpec::cnet(1, [1, 28, 28], 10, 4).expect("valid network"), 16)
}
