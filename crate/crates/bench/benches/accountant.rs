use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use shuffle_rdp::{
    build_pair, np_curve, renyi_direct, renyi_from_curve, shuffle_rdp_exact, ShuffleParams,
    DEFAULT_TAIL_TOL,
};

fn accountant(c: &mut Criterion) {
    let params = ShuffleParams::new(2.0, 10_000).unwrap();
    let pair = build_pair(&params, DEFAULT_TAIL_TOL).unwrap();
    let curve = np_curve(&pair.p, &pair.q).unwrap();

    let mut g = c.benchmark_group("n=1e4");
    g.sample_size(20);
    g.bench_function("build_pair", |b| {
        b.iter(|| build_pair(black_box(&params), DEFAULT_TAIL_TOL).unwrap())
    });
    g.bench_function("np_curve", |b| b.iter(|| np_curve(black_box(&pair.p), &pair.q).unwrap()));
    g.bench_function("renyi_direct", |b| {
        b.iter(|| renyi_direct(black_box(&pair.p), &pair.q, 4.0).unwrap())
    });
    g.bench_function("renyi_from_curve", |b| {
        b.iter(|| renyi_from_curve(black_box(&curve), 4.0).unwrap())
    });
    g.bench_function("shuffle_rdp_exact", |b| {
        b.iter(|| shuffle_rdp_exact(black_box(&params), 4.0, DEFAULT_TAIL_TOL).unwrap())
    });
    g.finish();
}

criterion_group!(benches, accountant);
criterion_main!(benches);
