//! Hot-path benchmarks: convolution forward/backward, pooling, batch norm,
//! and a whole training step on a scaled-down graph.

use criterion::{criterion_group, criterion_main, Criterion};

use adlite_core::graph::{build_adlite, ADLiteConfig};
use adlite_core::layers::{maxpool_forward, softmax_cce, Activation, BatchNorm, Conv2D, Dwsc};
use adlite_core::tensor::Tensor;
use adlite_core::Rng;

fn conv_benches(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let conv = Conv2D::<f32>::new(32, 16, 3, &mut rng).unwrap();
    let x = Tensor::<f32>::he_init(vec![8, 16, 32, 32], 1, &mut rng).unwrap();
    c.bench_function("conv2d_forward_8x16x32x32_to_32", |b| {
        b.iter(|| conv.forward(&x, Activation::Relu).unwrap())
    });

    let (out, cache) = conv.forward(&x, Activation::Relu).unwrap();
    let g = Tensor::<f32>::he_init(out.shape().to_vec(), 1, &mut rng).unwrap();
    c.bench_function("conv2d_backward_8x16x32x32_to_32", |b| {
        b.iter(|| conv.backward(&cache, &g).unwrap())
    });
}

fn dwsc_bench(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let dwsc = Dwsc::<f32>::new(128, 128, &mut rng).unwrap();
    let x = Tensor::<f32>::he_init(vec![8, 128, 7, 7], 1, &mut rng).unwrap();
    c.bench_function("dwsc_forward_8x128x7x7", |b| {
        b.iter(|| dwsc.forward(&x).unwrap())
    });
}

fn pool_and_bn_benches(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let x = Tensor::<f32>::he_init(vec![8, 16, 64, 64], 1, &mut rng).unwrap();
    c.bench_function("maxpool_forward_8x16x64x64", |b| {
        b.iter(|| maxpool_forward(&x).unwrap())
    });

    let bn = BatchNorm::<f32>::new(16);
    c.bench_function("batchnorm_train_8x16x64x64", |b| {
        b.iter(|| bn.clone().forward_train(&x).unwrap())
    });
}

fn train_step_bench(c: &mut Criterion) {
    let cfg = ADLiteConfig {
        input_size: 64,
        input_channels: 1,
        num_classes: 4,
        ..ADLiteConfig::default()
    };
    let mut rng = Rng::new(4);
    let mut graph = build_adlite::<f32>(&cfg, &mut rng).unwrap();
    let x = Tensor::<f32>::he_init(vec![16, 1, 64, 64], 1, &mut rng).unwrap();
    let targets: Vec<usize> = (0..16).map(|i| i % 4).collect();
    c.bench_function("train_step_batch16_64x64", |b| {
        b.iter(|| {
            let step = graph.forward_train(&x).unwrap();
            let out = softmax_cce(&step.logits, &targets, None).unwrap();
            graph.backward(&step.cache, &out.grad_logits).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv_benches, dwsc_bench, pool_and_bn_benches, train_step_bench
}
criterion_main!(benches);
