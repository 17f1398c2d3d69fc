use std::hint::black_box;

use amla_bench::random_chains;
use amla_core::schedule::{brute_force_oracle, max_internal_chains, simulate_pipeline};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn constructive(c: &mut Criterion) {
    let mut group = c.benchmark_group("max_internal_chains");
    for n in [2, 6, 32] {
        let chains = random_chains(n, 256, n as u64);
        group.throughput(Throughput::Elements(chains.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &chains, |b, chains| {
            b.iter(|| chains.iter().map(|ch| max_internal_chains(black_box(ch)).0).sum::<usize>())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("brute_force_oracle");
    group.sample_size(10);
    for n in [3, 5, 6] {
        let chains = random_chains(n, 16, 100 + n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &chains, |b, chains| {
            b.iter(|| chains.iter().map(|ch| brute_force_oracle(black_box(ch)).unwrap()).sum::<usize>())
        });
    }
    group.finish();
}

fn simulate(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_pipeline");
    for n in [2, 6] {
        let jobs: Vec<_> = random_chains(n, 64, 200 + n as u64)
            .into_iter()
            .map(|ch| {
                let sched = max_internal_chains(&ch).1;
                (ch, sched)
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &jobs, |b, jobs| {
            b.iter(|| jobs.iter().map(|(ch, s)| simulate_pipeline(ch, s, 8).unwrap().report.makespan).sum::<u64>())
        });
    }
    group.finish();
}

criterion_group!(benches, constructive, oracle, simulate);
criterion_main!(benches);
