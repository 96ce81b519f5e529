use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smokeseg::autograd::kernels::{conv2d_backward, conv2d_forward};
use smokeseg::net::{NetConfig, Network};
use smokeseg::{par, Shape, Tensor};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f32>::randn(Shape::new(4, 32, 64, 64), 1.0, &mut rng);
    let w = Tensor::<f32>::randn(Shape::new(3, 3, 32, 32), 0.1, &mut rng);
    let b = Tensor::<f32>::zeros(Shape::new(32, 1, 1, 1));
    let mut group = c.benchmark_group("conv3x3 4x32x64x64");
    for (name, parallel) in MODES {
        par::set_parallel(parallel);
        group.bench_function(BenchmarkId::new("forward", name), |bench| {
            bench.iter(|| conv2d_forward("bench", &x, &w, &b).unwrap())
        });
        let y = conv2d_forward("bench", &x, &w, &b).unwrap();
        group.bench_function(BenchmarkId::new("backward", name), |bench| {
            bench.iter(|| conv2d_backward(&x, &w, &y))
        });
    }
    group.finish();
    par::set_parallel(true);
}

fn network(c: &mut Criterion) {
    let net = Network::<f32>::build(&NetConfig {
        width_scale: 0.125,
        ..Default::default()
    })
    .unwrap();
    let x = Tensor::<f32>::filled(Shape::new(2, 3, 64, 64), 0.5);
    let mut group = c.benchmark_group("network forward width 1/8 2x3x64x64");
    group.sample_size(10);
    for (name, parallel) in MODES {
        par::set_parallel(parallel);
        group.bench_function(name, |bench| bench.iter(|| net.forward(&x).unwrap()));
    }
    group.finish();
    par::set_parallel(true);
}

criterion_group!(benches, conv, network);
criterion_main!(benches);
