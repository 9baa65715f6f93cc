use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netrack_bench::{
    association_problem, busy_scene, networks, predict_settings, prediction_input,
};
use netrack_core::association::{bp_marginals, BP_MAX_ITER, BP_TOL};
use netrack_core::motion::sp_predict;
use netrack_core::{PredictionStrategy, Tracker, TrackerConfig, TrackerMode};

fn association(c: &mut Criterion) {
    let mut g = c.benchmark_group("bp_marginals");
    for n in [4, 16, 64] {
        let p = association_problem(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| {
            b.iter(|| bp_marginals(black_box(p), BP_MAX_ITER, BP_TOL))
        });
    }
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let theta = networks().motion;
    let (po, nbs) = prediction_input(10);
    let mut g = c.benchmark_group("sp_predict");
    for strategy in [
        PredictionStrategy::MeanOnly,
        PredictionStrategy::ObjectSp,
        PredictionStrategy::JointSp,
    ] {
        let s = predict_settings(strategy);
        g.bench_function(format!("{strategy:?}"), |b| {
            b.iter(|| sp_predict(black_box(&po), &nbs, &theta, &s).expect("prediction"))
        });
    }
    g.finish();
}

fn tracker_step(c: &mut Criterion) {
    let scene = busy_scene(12);
    let nets = networks();
    let mut g = c.benchmark_group("tracker_step");
    g.sample_size(10);
    for mode in [TrackerMode::Mb, TrackerMode::Ne] {
        let cfg = TrackerConfig {
            mode,
            particle_count: 1000,
            region: scene.config.region,
            mu_fp: scene.config.mu_fp,
            ..TrackerConfig::default()
        };
        // Warm the tracker up so that the measured step sees established objects.
        let mut warm = Tracker::new(cfg.clone(), 0).expect("valid tracker");
        let (last, earlier) = scene.frames.split_last().expect("frames");
        for f in earlier {
            warm.step(&f.measurements, Some(&f.feature_map), Some(&nets))
                .expect("step");
        }
        g.bench_function(mode.as_str(), |b| {
            b.iter_batched(
                || warm.clone(),
                |mut t| {
                    t.step(&last.measurements, Some(&last.feature_map), Some(&nets))
                        .expect("step")
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, association, prediction, tracker_step);
criterion_main!(benches);
