//! Throughput benchmarks for the choice (betweenness) computation on
//! jittered street lattices of increasing size.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use verdant_core::network::DEFAULT_SNAP_TOLERANCE;
use verdant_core::synth::jittered_grid;
use verdant_core::{build_graph, choice, ChoiceMode};

fn bench_choice(c: &mut Criterion) {
    let mut group = c.benchmark_group("choice_radius_500");
    group.sample_size(10);
    for side in [20usize, 60, 120] {
        let segments = jittered_grid(side, side, 100.0, 15.0, 42);
        let n = segments.len();
        let graph = build_graph(segments, DEFAULT_SNAP_TOLERANCE).expect("grid builds");
        for mode in [ChoiceMode::Topological, ChoiceMode::Angular] {
            let label = match mode {
                ChoiceMode::Topological => "topological",
                ChoiceMode::Angular => "angular",
            };
            group.bench_with_input(
                BenchmarkId::new(label, format!("{n}_segments")),
                &graph,
                |b, graph| b.iter(|| choice(graph, 500.0, mode).expect("choice succeeds")),
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_choice);
criterion_main!(benches);
