//! Per-event cost of the sequential filter loop on the bundled planar
//! scenario. The filter is a strictly sequential state machine, so this is
//! the single-core number that matters for keeping up with a live stream.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use evtrack_core::config::RunConfig;
use evtrack_core::scene::build_scene;
use evtrack_core::sim::{make_trajectory, simulate};
use evtrack_core::tracker::Tracker;

fn bench_tracker(c: &mut Criterion) {
    let cfg = RunConfig {
        threshold_noise_std: 0.02,
        ig_beta0: 0.8,
        initial_contrast_std: 0.003,
        history_capacity: 131072,
        traj_duration: 1.0,
        ..RunConfig::default()
    };

    let map = build_scene(&cfg.scene_params());
    let trajectory = make_trajectory(&cfg.trajectory_params());
    let events = simulate(&trajectory, &map, &cfg.sim_params()).unwrap();

    let mut group = c.benchmark_group("tracker");
    group.sample_size(10);
    group.throughput(Throughput::Elements(events.len() as u64));
    group.bench_function("process_event_stream", |b| {
        b.iter(|| {
            let mut tracker = Tracker::new(
                &map,
                cfg.sensor(),
                cfg.tracker_config(),
                &trajectory[0].1,
                trajectory[0].0,
            )
            .unwrap();
            for event in &events {
                black_box(tracker.process_event(black_box(event)));
            }
            tracker.applied()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_tracker);
criterion_main!(benches);
