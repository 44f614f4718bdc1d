use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use edgeface_bench::{checkerboard, noise};
use edgeface_core::backbone::{xca_attention, Xca};
use edgeface_core::{tensor::conv2d, ConvParams, EdgeFaceModel, Linear, Variant};

fn depthwise(c: &mut Criterion) {
    let mut g = c.benchmark_group("depthwise_conv");
    for (ch, side, k) in [(32usize, 28usize, 3usize), (64, 14, 5), (100, 7, 7), (192, 3, 9)] {
        let x = noise(&[1, ch, side, side], 1);
        let p = ConvParams::new(noise(&[ch, 1, k, k], 2), Some(vec![0.0; ch]), 1, k / 2, ch).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(format!("c{ch}_s{side}_k{k}")), &x, |b, x| {
            b.iter(|| conv2d(black_box(x), &p).unwrap())
        });
    }
    g.finish();
}

fn linear_vs_loralin(c: &mut Criterion) {
    let mut g = c.benchmark_group("linear");
    let x = noise(&[196, 64], 3);
    for gamma in [None, Some(0.2), Some(0.6), Some(1.0)] {
        let mut lin = Linear::zeros(64, 256, gamma, true).unwrap();
        for (_, mut p) in lin.params_mut() {
            let n = p.data_mut().len();
            p.data_mut().copy_from_slice(noise(&[n], 4).data());
        }
        let label = gamma.map_or_else(|| "dense".to_string(), |g| format!("gamma{g}"));
        g.bench_function(label, |b| b.iter(|| lin.forward(black_box(&x)).unwrap()));
    }
    g.finish();
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("xca");
    for tokens in [9usize, 49, 196] {
        let x = noise(&[tokens, 64], 5);
        let mut xca = Xca::zeros(64, 4, None).unwrap();
        for lin in [&mut xca.qkv, &mut xca.proj] {
            for (_, mut p) in lin.params_mut() {
                let n = p.data_mut().len();
                p.data_mut().copy_from_slice(noise(&[n], 6).data());
            }
        }
        g.bench_with_input(BenchmarkId::from_parameter(tokens), &x, |b, x| {
            b.iter(|| xca_attention(black_box(x), &xca).unwrap())
        });
    }
    g.finish();
}

fn embed(c: &mut Criterion) {
    let model = EdgeFaceModel::build(&Variant::XSmall.spec(), None, 0).unwrap();
    let x = checkerboard(112);
    let mut g = c.benchmark_group("embed");
    g.sample_size(10);
    g.bench_function("x_small", |b| b.iter(|| model.embed(black_box(&x)).unwrap()));
    g.finish();
}

criterion_group!(benches, depthwise, linear_vs_loralin, attention, embed);
criterion_main!(benches);
