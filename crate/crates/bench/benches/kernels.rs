use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dclnet_core::autograd::{conv2d, Tape, Tensor};
use dclnet_core::metrics::{ahd, ahd_brute_force};
use dclnet_core::tractlabels::traverse_segment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn traversal(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let segs: Vec<([f64; 3], [f64; 3])> = (0..1000)
        .map(|_| {
            let mut p = || [0; 3].map(|_: i32| rng.random_range(0.0..64.0));
            (p(), p())
        })
        .collect();
    c.bench_function("traverse 1000 segments in 64^3", |b| {
        b.iter(|| {
            let mut n = 0usize;
            for &(a, e) in &segs {
                traverse_segment(a, e, [64, 64, 64], |_| n += 1);
            }
            black_box(n)
        })
    });
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d 3x3 batch 8");
    // (cin, cout, h, w) of representative layers
    for (cin, cout, h, w) in [(1, 4, 80, 64), (8, 8, 40, 32), (32, 32, 20, 16), (64, 64, 10, 8)] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::from_fn(&[8, cin, h, w], |_| rng.random_range(-1.0..1.0));
        let wt = Tensor::<f32>::from_fn(&[cout, cin, 3, 3], |_| rng.random_range(-0.3..0.3));
        let id = format!("{cin}->{cout} {h}x{w}");
        g.bench_with_input(BenchmarkId::new("forward", &id), &(), |b, _| {
            b.iter(|| {
                let tape = Tape::inference();
                black_box(conv2d(tape.constant(x.clone()), tape.constant(wt.clone()), None).value())
            })
        });
        g.bench_with_input(BenchmarkId::new("forward+backward", &id), &(), |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let (xv, wv) = (tape.leaf(x.clone(), true), tape.leaf(wt.clone(), true));
                let y = conv2d(xv, wv, None);
                let seed = Tensor::full(&y.shape(), 1.0);
                black_box(tape.backward(&[(y, seed)]))
            })
        });
    }
    g.finish();
}

fn hausdorff(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cloud = |n: usize, off: i64| -> Vec<[i64; 3]> {
        (0..n).map(|_| [0; 3].map(|_: i32| rng.random_range(0..48) + off)).collect()
    };
    let (a, b) = (cloud(2000, 0), cloud(2000, 3));
    let spacing = [1.0, 1.0, 1.0];
    let mut g = c.benchmark_group("ahd 2000x2000");
    g.bench_function("grid", |bch| bch.iter(|| black_box(ahd(&a, &b, spacing))));
    g.bench_function("brute force", |bch| bch.iter(|| black_box(ahd_brute_force(&a, &b, spacing))));
    g.finish();
}

criterion_group!(benches, traversal, conv, hausdorff);
criterion_main!(benches);
