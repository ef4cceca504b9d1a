//! Sequential against rayon-parallel execution of the data-parallel loops.
//!
//! Without the `parallel` feature both variants run the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slsr::cluster::diff_norms;
use slsr::ltv::realize_window;
use slsr::model::{generate_markov, paper_example_states, random_switching, Band, SegmentPolicy, SlsModel};
use slsr::pipeline::{meta_run, monte_carlo, MonteCarloConfig, PipelineConfig};
use slsr::rng::{stream, Purpose};
use slsr::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn paper_markov(n_steps: usize) -> slsr::model::MarkovSequence {
    let switching = random_switching(
        n_steps,
        3,
        SegmentPolicy::Uniform { min: 25, max: 80 },
        &mut stream(1, 0, Purpose::Switching),
    )
    .unwrap();
    let model = SlsModel::new(paper_example_states(), switching).unwrap();
    generate_markov(&model, Band::pipeline(3))
}

fn realization(c: &mut Criterion) {
    let mut g = c.benchmark_group("realize_window");
    for n_steps in [500, 2000] {
        let markov = paper_markov(n_steps);
        for (name, mode) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n_steps), &markov, |b, m| {
                b.iter(|| realize_window(black_box(m), mode).unwrap())
            });
        }
    }
    g.finish();
}

fn hankel_differences(c: &mut Criterion) {
    let mut g = c.benchmark_group("diff_norms");
    for n_steps in [500, 2000] {
        let markov = paper_markov(n_steps);
        for (name, mode) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n_steps), &markov, |b, m| {
                b.iter(|| diff_norms(black_box(m), mode).unwrap())
            });
        }
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("meta_run");
    let markov = paper_markov(1000);
    for (name, mode) in MODES {
        let cfg = PipelineConfig {
            exec: mode,
            ..PipelineConfig::paper()
        };
        g.bench_function(name, |b| b.iter(|| meta_run(black_box(&markov), &cfg, None).unwrap()));
    }
    g.finish();
}

fn study(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    for (name, mode) in MODES {
        let cfg = MonteCarloConfig {
            runs: 8,
            snr_db: vec![40.0],
            exec: mode,
            ..MonteCarloConfig::desk_scale(7)
        };
        g.bench_function(name, |b| b.iter(|| monte_carlo(black_box(&cfg)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, realization, hankel_differences, pipeline, study);
criterion_main!(benches);
