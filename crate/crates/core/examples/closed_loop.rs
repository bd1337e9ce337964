//! Closed-loop demo: build a synthetic scene, simulate an event stream
//! along a shake trajectory, track it, and report the trajectory errors.
//!
//! Run with `cargo run --release -p evtrack-core --example closed_loop`.

use std::time::Instant;

use evtrack_core::config::RunConfig;
use evtrack_core::metrics::align_and_compare;
use evtrack_core::scene::build_scene;
use evtrack_core::sim::{make_trajectory, simulate_labeled};
use evtrack_core::tracker::{EventOutcome, Tracker};

fn main() {
    let mut cfg = RunConfig {
        threshold_noise_std: 0.02,
        history_capacity: 131072,
        ..RunConfig::default()
    };
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some(("duration", v)) => cfg.traj_duration = v.parse().unwrap(),
            Some(("outlier_rate", v)) => cfg.outlier_rate = v.parse().unwrap(),
            Some(("diffusion", v)) => cfg.per_event_diffusion_std = v.parse().unwrap(),
            Some(("noise", v)) => cfg.threshold_noise_std = v.parse().unwrap(),
            Some(("amp_t", v)) => cfg.traj_translation_amplitude = v.parse().unwrap(),
            Some(("amp_r", v)) => cfg.traj_rotation_amplitude_deg = v.parse().unwrap(),
            Some(("freq", v)) => cfg.traj_frequency = v.parse().unwrap(),
            Some(("ig_beta0", v)) => cfg.ig_beta0 = v.parse().unwrap(),
            Some(("ig_alpha0", v)) => cfg.ig_alpha0 = v.parse().unwrap(),
            Some(("ramp", v)) => cfg.traj_ramp_time = v.parse().unwrap(),
            Some(("scene", v)) => cfg.scene = v.parse().unwrap(),
            Some(("init_offset_pct", v)) => cfg.init_offset_pct = v.parse().unwrap(),
            Some(("c_std", v)) => cfg.initial_contrast_std = v.parse().unwrap(),
            Some(("c_diffusion", v)) => cfg.threshold_diffusion_std = v.parse().unwrap(),
            Some(("seed", v)) => cfg.seed = v.parse().unwrap(),
            Some(("render_dt", v)) => cfg.render_dt = v.parse().unwrap(),
            _ => panic!("unknown argument {arg:?}"),
        }
    }

    let map = build_scene(&cfg.scene_params());
    let trajectory = make_trajectory(&cfg.trajectory_params());

    let t0 = Instant::now();
    let sim = simulate_labeled(&trajectory, &map, &cfg.sim_params()).unwrap();
    println!(
        "simulated {} events ({} outliers) in {:.2}s",
        sim.events.len(),
        sim.outlier_mask.iter().filter(|&&o| o).count(),
        t0.elapsed().as_secs_f64()
    );

    let mut init_pose = trajectory[0].1;
    init_pose.translation.x += cfg.init_offset_pct / 100.0 * cfg.mean_depth;
    let mut tracker = Tracker::new(
        &map,
        cfg.sensor(),
        cfg.tracker_config(),
        &init_pose,
        trajectory[0].0,
    )
    .unwrap();

    let t1 = Instant::now();
    let mut est = Vec::new();
    let mut w_in = (0.0, 0u64);
    let mut w_out = (0.0, 0u64);
    let mut m0s: Vec<f64> = Vec::new();
    for (i, (e, is_outlier)) in sim.events.iter().zip(&sim.outlier_mask).enumerate() {
        if let EventOutcome::Applied(out) = tracker.process_event(e) {
            if !*is_outlier {
                m0s.push(out.m0);
            }
            if *is_outlier {
                w_out = (w_out.0 + out.w, w_out.1 + 1);
            } else {
                w_in = (w_in.0 + out.w, w_in.1 + 1);
            }
        }
        if i % 100 == 0 {
            est.push(tracker.current_pose());
        }
    }
    let mut sorted = m0s;
    sorted.sort_by(f64::total_cmp);
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q) as usize];
    println!(
        "residual percentiles: p5 {:.3} p25 {:.3} p50 {:.3} p75 {:.3} p95 {:.3}",
        pick(0.05),
        pick(0.25),
        pick(0.5),
        pick(0.75),
        pick(0.95),
    );
    let track_s = t1.elapsed().as_secs_f64();
    let rate = sim.events.len() as f64 / track_s;
    println!(
        "tracked {} events in {:.2}s ({:.0} ev/s), applied {}, skips {:?}",
        sim.events.len(),
        track_s,
        rate,
        tracker.applied(),
        tracker.skips()
    );

    let err = align_and_compare(&est, &trajectory, map.mean_scene_depth).unwrap();
    println!(
        "RMS position {:.3}% ({:.2} mm), RMS orientation {:.3} deg",
        err.position_pct_stats.rms,
        err.position_m_stats.rms * 1e3,
        err.orientation_stats.rms
    );
    let st = tracker.state();
    println!(
        "final C = {:.4}, pi = {:.3}, sigma = {:.4}",
        st.c,
        st.pi_hat(),
        st.sigma2_hat().sqrt()
    );
    if w_out.1 > 0 {
        println!(
            "mean w inliers {:.3} ({} events), outliers {:.3} ({} events)",
            w_in.0 / w_in.1 as f64,
            w_in.1,
            w_out.0 / w_out.1 as f64,
            w_out.1
        );
    }
}
