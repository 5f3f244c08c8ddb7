use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use volnet_bench::{random_hu_volume, random_tensor, scored_labels};
use volnet_core::metrics::{auc, roc_curve};
use volnet_core::nn::layers::{conv_backward, conv_forward, maxpool_forward};
use volnet_core::volume::{resample_isotropic, window_rescale};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d");
    g.sample_size(10);
    for (cin, cout, side, depth) in [(1, 16, 56, 24), (16, 32, 28, 12), (64, 128, 14, 6)] {
        let x = random_tensor(&[cin, side, side, depth], 1);
        let k = random_tensor(&[cout, cin, 3, 3, 3], 2);
        let b = random_tensor(&[cout], 3);
        let macs = (cin * cout * 27 * side * side * depth) as u64;
        let id = format!("{cin}x{side}x{side}x{depth}->{cout}");
        g.throughput(Throughput::Elements(macs));
        g.bench_function(BenchmarkId::new("forward", &id), |bch| {
            bch.iter(|| conv_forward(black_box(&x), black_box(&k), black_box(&b)).unwrap())
        });
        let dy = random_tensor(&[cout, side, side, depth], 4);
        g.bench_function(BenchmarkId::new("backward", &id), |bch| {
            bch.iter(|| conv_backward(black_box(&x), black_box(&k), black_box(&dy), true).unwrap())
        });
    }
    g.finish();
}

fn pool(c: &mut Criterion) {
    let x = random_tensor(&[16, 112, 112, 48], 5);
    c.bench_function("maxpool 2x2x1 16x112x112x48", |b| {
        b.iter(|| maxpool_forward(black_box(&x), &[2, 2, 1], false).unwrap())
    });
}

fn roc(c: &mut Criterion) {
    let mut g = c.benchmark_group("roc");
    for n in [100, 1000, 10_000] {
        let (scores, labels) = scored_labels(n, 6);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("auc", n), &n, |b, _| {
            b.iter(|| auc(black_box(&scores), black_box(&labels)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("curve", n), &n, |b, _| {
            b.iter(|| roc_curve(black_box(&scores), black_box(&labels)).unwrap())
        });
    }
    g.finish();
}

fn preprocessing(c: &mut Criterion) {
    let mut g = c.benchmark_group("preprocess");
    g.sample_size(10);
    let v = random_hu_volume([256, 256, 64], [0.9, 0.9, 2.5], 7);
    g.throughput(Throughput::Elements(256 * 256 * 64));
    g.bench_function("window_rescale 256x256x64", |b| b.iter(|| window_rescale(black_box(&v)).unwrap()));
    g.bench_function("resample_isotropic 256x256x64", |b| {
        b.iter(|| resample_isotropic(black_box(&v), 1.0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, conv, pool, roc, preprocessing);
criterion_main!(benches);
