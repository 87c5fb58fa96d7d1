use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bandflow::diagrams::library::{drift_graph, first_unfolding, second_unfolding};
use bandflow::diagrams::{evaluate_diagram, evaluate_sum, Label};
use bandflow_bench::context;

fn drift(c: &mut Criterion) {
    let mut g = c.benchmark_group("drift_graph");
    let term = drift_graph();
    for n in [8usize, 12, 24] {
        let ctx = context(n, n / 4);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| evaluate_diagram(&term, &ctx, ("a", 0), ("b", 1)).unwrap()));
    }
    g.finish();
}

fn unfoldings(c: &mut Criterion) {
    let ctx = context(12, 3);
    let fixed: BTreeMap<Label, usize> = [("a", 0), ("b", 5)].into_iter().collect();
    let first = first_unfolding(false).unwrap().rhs();
    c.bench_function("first_unfolding/12", |b| b.iter(|| evaluate_sum(&first, &ctx, &fixed).unwrap()));
    let second = second_unfolding(2, false).unwrap().expansion().rhs();
    c.bench_function("second_unfolding_2/12", |b| b.iter(|| evaluate_sum(&second, &ctx, &fixed).unwrap()));
}

criterion_group!(benches, drift, unfoldings);
criterion_main!(benches);
