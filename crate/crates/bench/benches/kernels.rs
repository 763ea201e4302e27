use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hmlab_core::algebra::cybe_residual;
use hmlab_core::fields::{make_dual_data, make_spin_data, SigmaKind};
use hmlab_core::hierarchy::wz_recursion;
use hmlab_core::monodromy::{default_lambdas, scan};
use hmlab_core::poisson::{functional_bracket, GradientOptions};
use hmlab_core::{
    charges, evolve, Axis, BracketTable, Convention, EvolutionConfig, FlowGrid, FlowKind, GridSpec, Orientation,
    SpinDataKind, SpinGrid, TransportScheme, C64,
};

const C: C64 = C64::new(1.0, 0.0);

fn twist(n: usize) -> SpinGrid {
    let spec = GridSpec::periodic(n, PI, Axis::Space).unwrap();
    make_spin_data(spec, C, SpinDataKind::Twist { theta0: 0.8, winding: 1 }, 0, 0.2).unwrap()
}

fn algebra(c: &mut Criterion) {
    let (l, m) = (C64::new(0.7, 0.2), C64::new(-0.4, 1.1));
    c.bench_function("cybe_residual", |b| b.iter(|| cybe_residual(black_box(l), black_box(m)).unwrap()));
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("transfer_scan");
    let ls = default_lambdas();
    for n in [64, 256] {
        let g = twist(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| {
                scan(g, &ls, Orientation::Space, Convention::Real, None, TransportScheme::Richardson { sub: 1 }).unwrap()
            })
        });
    }
    group.finish();
}

fn hierarchy(c: &mut Criterion) {
    let mut group = c.benchmark_group("hierarchy");
    let g = twist(256);
    group.bench_function("wz_recursion_256", |b| {
        b.iter(|| wz_recursion(&g, Orientation::Space, Convention::Paper, 3).unwrap())
    });
    group.bench_function("charges_256", |b| {
        b.iter(|| charges(&g, Orientation::Space, Convention::Paper, 2, None).unwrap())
    });
    group.finish();
}

fn dynamics(c: &mut Criterion) {
    let mut group = c.benchmark_group("dynamics");
    let g = twist(256);
    group.bench_function("hm_rhs_256", |b| b.iter(|| g.flow_rhs(FlowKind::Hm, Convention::Real).unwrap()));
    let mut cfg = EvolutionConfig::with_span(FlowKind::Hm, g.spec.spacing(), 1.0);
    cfg.n_steps = 20;
    cfg.stride = 20;
    group.bench_function("hm_rk4_20_steps_256", |b| b.iter(|| evolve(&g, FlowKind::Hm, &cfg).unwrap()));

    let spec = GridSpec::periodic(256, 1.0, Axis::Time).unwrap();
    let sigma = SigmaKind::Random { amplitude: 0.3, modes: 2 };
    let d = make_dual_data(spec, C, SpinDataKind::FourierRandom { modes: 2 }, sigma, 1, 0.3).unwrap();
    group.bench_function("dual_rhs_256", |b| b.iter(|| d.flow_rhs(FlowKind::DualSpace, Convention::Real).unwrap()));
    group.finish();
}

fn poisson(c: &mut Criterion) {
    let spec = GridSpec::periodic(64, PI, Axis::Space).unwrap();
    let g = make_spin_data(spec, C, SpinDataKind::FourierRandom { modes: 2 }, 3, 0.3).unwrap();
    let t = BracketTable::equal_time();
    let q = |k: i32| {
        move |g: &SpinGrid| charges(g, Orientation::Space, Convention::Paper, 1, None).map(|s| s.get(k).unwrap())
    };
    c.bench_function("functional_bracket_g0_g1_64", |b| {
        b.iter(|| functional_bracket(&q(0), &q(1), &g, &t, GradientOptions::default()).unwrap())
    });
}

criterion_group!(benches, algebra, transport, hierarchy, dynamics, poisson);
criterion_main!(benches);
