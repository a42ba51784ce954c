use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mbplan_core::planner::plan_schedule;
use mbplan_core::predictor::{encode, uniform_sample};
use mbplan_core::search::search;
use mbplan_core::space::{resolve, sample_uniform};
use mbplan_core::{PlanMode, SearchConstraint, SearchParams, SupernetSpace, SyntheticOracle};

fn planning(c: &mut Criterion) {
    let space = SupernetSpace::moofa();
    let reference = space.reference_config();
    c.bench_function("plan_schedule_numeric", |b| {
        b.iter(|| plan_schedule(black_box(reference), 8, 8, PlanMode::NumericBalance, 5).unwrap())
    });
}

fn profiling(c: &mut Criterion) {
    let space = SupernetSpace::moofa();
    let configs: Vec<_> = (0..256).map(|s| sample_uniform(&space, s)).collect();
    c.bench_function("resolve_and_peak_256", |b| {
        b.iter(|| {
            configs
                .iter()
                .map(|cfg| resolve(cfg, &space).unwrap().peak_items().unwrap())
                .max()
        })
    });
    c.bench_function("encode_256", |b| {
        b.iter(|| configs.iter().map(|cfg| encode(cfg, &space).unwrap().values.len()).sum::<usize>())
    });
}

fn predicting(c: &mut Criterion) {
    let space = SupernetSpace::moofa();
    let oracle = SyntheticOracle::new(0);
    let data = uniform_sample(&space, 500, 1, &oracle).unwrap();
    c.bench_function("train_ridge_500", |b| {
        b.iter(|| mbplan_core::predictor::train(black_box(&data), &space, 1e-3, 0).unwrap())
    });
}

fn searching(c: &mut Criterion) {
    let space = SupernetSpace::moofa();
    let oracle = SyntheticOracle::new(0);
    let constraint = SearchConstraint::new(400_000);
    let params = SearchParams {
        population: 32,
        generations: 10,
        ..SearchParams::default()
    };
    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    group.bench_function("pop32_gen10_400k", |b| {
        b.iter(|| search(&space, &constraint, &oracle, &params).unwrap())
    });
    group.finish();
}

criterion_group!(benches, planning, profiling, predicting, searching);
criterion_main!(benches);
