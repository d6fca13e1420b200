//! Sequential vs. rayon-backed execution of the data-parallel stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmm_imm::gmm::{gmm_fit, GmmConfig};
use gmm_imm::synth::{generate_with, SynthConfig};
use gmm_imm::sysid::fit_local_models_with;
use gmm_imm::trajectory::Trajectory;
use gmm_imm::Execution;

const STRATEGIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn corpus(runs: usize) -> Vec<Trajectory> {
    let config = SynthConfig {
        runs,
        ..SynthConfig::default()
    };
    generate_with(&config, Execution::Sequential)
        .unwrap()
        .into_iter()
        .map(|r| r.trajectory)
        .collect()
}

fn local_fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_local_models");
    for runs in [9, 36] {
        let data = corpus(runs);
        for (name, exec) in STRATEGIES {
            group.bench_with_input(BenchmarkId::new(name, runs), &data, |b, data| {
                b.iter(|| fit_local_models_with(data, 25, 1, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn em_fit(c: &mut Criterion) {
    let cloud = fit_local_models_with(&corpus(9), 25, 1, Execution::Sequential)
        .unwrap()
        .coords();
    let mut group = c.benchmark_group("gmm_fit");
    group.sample_size(10);
    for m in [3, 12] {
        for (name, exec) in STRATEGIES {
            let mut config = GmmConfig::new(m, 1);
            config.exec = exec;
            config.max_iter = 50;
            config.tol = 0.0;
            group.bench_with_input(BenchmarkId::new(name, m), &cloud, |b, cloud| {
                b.iter(|| gmm_fit(cloud, &config).unwrap())
            });
        }
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("synth_generate");
    let config = SynthConfig {
        runs: 64,
        steps: 2000,
        ..SynthConfig::default()
    };
    for (name, exec) in STRATEGIES {
        group.bench_function(name, |b| b.iter(|| generate_with(&config, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, local_fits, em_fit, synthesis);
criterion_main!(benches);
