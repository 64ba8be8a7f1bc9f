use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locc_core::constructions::{general_family, infinitize, qubit_family, InfinitizeConfig, QubitFamilyParams};
use locc_core::deficit::delta;
use locc_core::measurement::{distance_lower, distance_upper, identity_matching, DensityOperator, DistanceBudget};
use locc_core::ops::{self, Tolerances};
use locc_core::rng;
use locc_core::simulate::run;
use locc_core::tree::{leaf_measurement, random_finite_tree, InfiniteProtocol, LoccTree};

fn numeric(c: &mut Criterion) {
    let mut g = c.benchmark_group("ops");
    for dim in [2, 4, 6] {
        let mut r = rng::seeded(dim as u64);
        let x = rng::ginibre(&mut r, dim, dim);
        g.bench_with_input(BenchmarkId::new("polar", dim), &x, |b, x| {
            b.iter(|| ops::polar_decompose(black_box(x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pseudo_inverse", dim), &x, |b, x| {
            b.iter(|| ops::pseudo_inverse(black_box(x), Tolerances::RANK))
        });
    }
    g.finish();
}

fn deficit(c: &mut Criterion) {
    let mut g = c.benchmark_group("delta");
    for depth in [2, 3, 4] {
        let t = random_finite_tree(&[3, 3], depth, 2, 7).unwrap();
        let m = leaf_measurement(&t).unwrap();
        g.bench_with_input(BenchmarkId::new("random_tree", m.len()), &m, |b, m| {
            b.iter(|| delta(black_box(m), Tolerances::RAY).unwrap())
        });
    }
    g.finish();
}

fn distance(c: &mut Criterion) {
    let f = qubit_family(QubitFamilyParams::new(0.5, 0.1)).unwrap();
    let n = f.m_eps.len();
    c.bench_function("distance_lower/qubit", |b| {
        b.iter(|| distance_lower(&f.m_eps, &f.m0, DistanceBudget::new(16, 1, 0)).unwrap())
    });
    c.bench_function("distance_upper/qubit", |b| {
        b.iter(|| distance_upper(&f.m_eps, &f.m0, &identity_matching(n)).unwrap())
    });
}

fn constructions(c: &mut Criterion) {
    c.bench_function("general_family/3x3_L3", |b| {
        b.iter(|| general_family((3, 3), 3, None, 0.05, black_box(11)).unwrap())
    });
    let t = random_finite_tree(&[2, 2], 2, 2, 3).unwrap();
    c.bench_function("infinitize/2x2_depth2", |b| {
        b.iter(|| infinitize(&t, &InfinitizeConfig::new(0.05, 2, black_box(3))).unwrap())
    });
}

fn simulate(c: &mut Criterion) {
    let cycle = qubit_family(QubitFamilyParams::new(0.5, 0.5)).unwrap().cycle.unwrap();
    let p = InfiniteProtocol {
        prefix: LoccTree::new(vec![2, 2], Vec::new()),
        cycles: vec![(0, cycle)],
    };
    let rho = DensityOperator::maximally_mixed(4);
    let mut g = c.benchmark_group("run");
    for passes in [2, 8] {
        g.bench_with_input(BenchmarkId::new("qubit_cycle", passes), &passes, |b, &r| {
            b.iter(|| run(&p, &rho, r).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, numeric, deficit, distance, constructions, simulate);
criterion_main!(benches);
