use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use switchstab_bench::{desk_config, desk_law, solve};
use switchstab_core::instances;
use switchstab_core::{build_c, feedback_control, filter_step, simulate_closed_loop, DVector, FilterState};

fn riccati(c: &mut Criterion) {
    let mut group = c.benchmark_group("coupled_riccati");
    for &(n, m) in &[(2, 2), (4, 3), (6, 4)] {
        let inst = instances::random(7, n, 1, m);
        group.bench_with_input(BenchmarkId::from_parameter(format!("n{n}_m{m}")), &inst, |b, inst| {
            b.iter(|| solve(black_box(inst)))
        });
    }
    group.finish();
}

fn filter(c: &mut Criterion) {
    let (inst, law) = desk_law();
    let x = DVector::from_vec(vec![0.3, -0.2]);
    let phi = FilterState::uniform(2);
    let u = feedback_control(&law, &phi, &x);
    let drift = build_c(&inst.modes, &x, &u).expect("matching dimensions");
    let dx = DVector::from_vec(vec![0.01, -0.02]);
    c.bench_function("filter_step", |b| {
        b.iter(|| filter_step(&inst.gen, black_box(&phi), &drift, &dx, 1e-3))
    });
}

fn closed_loop(c: &mut Criterion) {
    let cfg = desk_config(5.0, 11);
    c.bench_function("closed_loop_5s", |b| b.iter(|| simulate_closed_loop(black_box(&cfg))));
}

criterion_group!(benches, riccati, filter, closed_loop);
criterion_main!(benches);
