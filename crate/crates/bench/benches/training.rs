use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use setrl_core::config::{Algorithm, TrainConfig};
use setrl_core::train::Trainer;

// One episode after a warm-up episode has filled the first batch.
fn episode(c: &mut Criterion) {
    let mut group = c.benchmark_group("episode_quad1d");
    group.sample_size(10);
    for algo in [Algorithm::PaPc, Algorithm::SaPc, Algorithm::SaSc] {
        group.bench_function(algo.name(), |b| {
            b.iter_batched(
                || {
                    let mut config = TrainConfig::default();
                    config.run.algorithm = algo;
                    let mut t = Trainer::new(config).unwrap();
                    t.run_episode().unwrap();
                    t
                },
                |mut t| t.run_episode().unwrap(),
                BatchSize::PerIteration,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, episode);
criterion_main!(benches);
