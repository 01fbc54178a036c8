use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use partmanip::affordance::{generate_part_library, predict_affordance_with, train_affordance, Archetype, FeatureConfig, Hyperparameters};
use partmanip::harness::{Pipeline, RunConfig};
use partmanip::parallel::Execution;
use partmanip::scene::{build_object, render_observation_with, CameraModel};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn render(c: &mut Criterion) {
    let obj = build_object("door", 3).unwrap();
    let cam = CameraModel::for_object(&obj);
    let mut g = c.benchmark_group("render");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| render_observation_with(black_box(&obj), &cam, exec)));
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let data = generate_part_library(&[Archetype::Cap, Archetype::Lever], 8, 1).unwrap();
    let model = train_affordance(&data, Hyperparameters { epochs: 1, ..Hyperparameters::default() }, 1).unwrap().0;
    let mut g = c.benchmark_group("affordance");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("feature_table", name), |b| b.iter(|| data.feature_table(&FeatureConfig::default(), exec).unwrap()));
        g.bench_function(BenchmarkId::new("predict", name), |b| b.iter(|| predict_affordance_with(&model, &data.entries[0].cloud, exec).unwrap()));
    }
    g.finish();
}

fn episodes(c: &mut Criterion) {
    let pipeline = Pipeline::from_config(RunConfig { seeds: 4, ..RunConfig::default() }).unwrap();
    let mut g = c.benchmark_group("benchmark_run");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| pipeline.run_benchmark(exec)));
    }
    g.finish();
}

criterion_group!(benches, render, features, episodes);
criterion_main!(benches);
