use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use evtrack_core::config::{read_config, RunConfig};
use evtrack_core::formats::{read_events, read_trajectory, write_events, write_trajectory};
use evtrack_core::geometry::{interpolate_pose, Pose};
use evtrack_core::map::{load_map, save_map};
use evtrack_core::metrics::{align_and_compare, TrajectoryError};
use evtrack_core::scene::build_scene;
use evtrack_core::sim::{make_trajectory, simulate};
use evtrack_core::tracker::{EventOutcome, Tracker};

use crate::CmdError;

fn load(config: &Path) -> Result<RunConfig, CmdError> {
    read_config(config).map_err(|e| CmdError::config(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::config(format!("{}: {e}", dir.display())))
}

/// Generate the configured synthetic scene as a map directory.
pub fn cmd_make_map(config: &Path, out: &Path) -> Result<(), CmdError> {
    let cfg = load(config)?;
    let map = build_scene(&cfg.scene_params());
    ensure_dir(out)?;
    save_map(out, &map).map_err(|e| CmdError::config(e.to_string()))?;
    println!(
        "wrote {} keyframe(s) to {} (mean depth {:.3} m)",
        map.keyframes.len(),
        out.display(),
        map.mean_scene_depth
    );
    Ok(())
}

fn write_manifest(
    out: &Path,
    config: &Path,
    seed: u64,
    extra: &[(&str, String)],
) -> Result<(), CmdError> {
    let bytes = std::fs::read(config)
        .map_err(|e| CmdError::config(format!("{}: {e}", config.display())))?;
    let digest = Sha256::digest(&bytes);
    let digest_hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "config_sha256 = {digest_hex}");
    let _ = writeln!(manifest, "seed = {seed}");
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    for (key, value) in extra {
        let _ = writeln!(manifest, "{key} = {value}");
    }
    let _ = writeln!(manifest, "created = {created}");
    std::fs::write(out.join("manifest.txt"), manifest)
        .map_err(|e| CmdError::config(format!("{}: {e}", out.display())))?;
    Ok(())
}

/// Simulate an event stream over an existing map; writes `events.txt`,
/// `groundtruth.txt`, and a manifest.
pub fn cmd_simulate(
    config: &Path,
    map_dir: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CmdError> {
    let mut cfg = load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let map = load_map(map_dir).map_err(|e| CmdError::config(e.to_string()))?;
    let trajectory = make_trajectory(&cfg.trajectory_params());
    let events = simulate(&trajectory, &map, &cfg.sim_params())
        .map_err(|e| CmdError::config(e.to_string()))?;

    ensure_dir(out)?;
    write_events(&out.join("events.txt"), &events)
        .map_err(|e| CmdError::config(e.to_string()))?;
    write_trajectory(&out.join("groundtruth.txt"), &trajectory)
        .map_err(|e| CmdError::config(e.to_string()))?;
    write_manifest(
        out,
        config,
        cfg.seed,
        &[("events", events.len().to_string())],
    )?;
    println!(
        "simulated {} events over {:.3} s into {}",
        events.len(),
        cfg.traj_duration,
        out.display()
    );
    Ok(())
}

pub struct TrackOptions {
    pub decimate: Option<u32>,
    pub max_events: Option<u64>,
    pub strict_io: bool,
}

/// Run the tracker over an event file; writes `estimate.txt` and
/// `diagnostics.csv`, and prints throughput plus skip counts.
pub fn cmd_track(
    config: &Path,
    map_dir: &Path,
    events_path: &Path,
    init_pose_path: &Path,
    out: &Path,
    opts: &TrackOptions,
) -> Result<(), CmdError> {
    let cfg = load(config)?;
    let map = load_map(map_dir).map_err(|e| CmdError::config(e.to_string()))?;
    let strict = opts.strict_io || cfg.strict_io;
    let mut events =
        read_events(events_path, strict).map_err(|e| CmdError::config(e.to_string()))?;
    let max_events = match opts.max_events {
        Some(n) => n,
        None => cfg.max_events,
    };
    if max_events > 0 && events.len() as u64 > max_events {
        events.truncate(max_events as usize);
    }
    let init_traj =
        read_trajectory(init_pose_path).map_err(|e| CmdError::config(e.to_string()))?;
    if init_traj.is_empty() {
        return Err(CmdError::config(format!(
            "{}: empty initial-pose trajectory",
            init_pose_path.display()
        )));
    }

    let t0 = events.first().map_or(init_traj[0].0, |e| e.t);
    let mut init_pose = pose_at(&init_traj, t0);
    init_pose.translation.x += cfg.init_offset_pct / 100.0 * map.mean_scene_depth;

    let decimate = opts.decimate.unwrap_or(cfg.decimate).max(1) as usize;
    let mut tracker = Tracker::new(&map, cfg.sensor(), cfg.tracker_config(), &init_pose, t0)
        .map_err(|e| CmdError::divergence(e.to_string()))?;

    let mut estimate: Vec<(f64, Pose)> = vec![(t0, init_pose)];
    let mut diagnostics = String::from("t,m0,w,c_hat,pi_hat,sigma_hat\n");
    let started = Instant::now();
    for (i, event) in events.iter().enumerate() {
        let outcome = tracker.process_event(event);
        let state = tracker.state();
        match outcome {
            EventOutcome::Applied(o) => {
                let _ = writeln!(
                    diagnostics,
                    "{:.9},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    event.t,
                    o.m0,
                    o.w,
                    state.c,
                    state.pi_hat(),
                    state.sigma2_hat().sqrt()
                );
            }
            EventOutcome::Skipped(_) => {
                let _ = writeln!(
                    diagnostics,
                    "{:.9},nan,nan,{:.6},{:.6},{:.6}",
                    event.t,
                    state.c,
                    state.pi_hat(),
                    state.sigma2_hat().sqrt()
                );
            }
        }
        if (i + 1) % decimate == 0 || i + 1 == events.len() {
            estimate.push(tracker.current_pose());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();

    ensure_dir(out)?;
    write_trajectory(&out.join("estimate.txt"), &estimate)
        .map_err(|e| CmdError::config(e.to_string()))?;
    std::fs::write(out.join("diagnostics.csv"), diagnostics)
        .map_err(|e| CmdError::config(format!("{}: {e}", out.display())))?;

    let skips = tracker.skips();
    let rate = if elapsed > 0.0 {
        events.len() as f64 / elapsed
    } else {
        f64::INFINITY
    };
    println!(
        "tracked {} events in {:.3} s ({:.0} events/s), applied {}",
        events.len(),
        elapsed,
        rate,
        tracker.applied()
    );
    println!(
        "skips: total {} (no_prior_event {}, no_prior_pose {}, out_of_bounds {}, \
         invalid_depth {}, behind_camera {}, non_finite {})",
        skips.total(),
        skips.no_prior_event,
        skips.no_prior_pose,
        skips.out_of_bounds,
        skips.invalid_depth,
        skips.behind_camera,
        skips.non_finite
    );
    Ok(())
}

fn pose_at(traj: &[(f64, Pose)], t: f64) -> Pose {
    let t = t.clamp(traj[0].0, traj[traj.len() - 1].0);
    let idx = traj.partition_point(|&(tt, _)| tt <= t).saturating_sub(1);
    if idx + 1 >= traj.len() {
        return traj[idx].1;
    }
    let (ta, pa) = traj[idx];
    let (tb, pb) = traj[idx + 1];
    interpolate_pose(&pa, ta, &pb, tb, t).expect("trajectory timestamps increase")
}

fn error_csv(err: &TrajectoryError) -> String {
    let mut csv = String::from("# population (1/N) statistics in the summary rows\n");
    csv.push_str("sample,t,position_m,position_pct,orientation_deg\n");
    for (i, t) in err.timestamps.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{:.9},{:.9},{:.6},{:.6}",
            i, t, err.position_m[i], err.position_pct[i], err.orientation_deg[i]
        );
    }
    for (tag, pm, pp, od) in [
        (
            "RMS",
            err.position_m_stats.rms,
            err.position_pct_stats.rms,
            err.orientation_stats.rms,
        ),
        (
            "mean",
            err.position_m_stats.mean,
            err.position_pct_stats.mean,
            err.orientation_stats.mean,
        ),
        (
            "std",
            err.position_m_stats.std,
            err.position_pct_stats.std,
            err.orientation_stats.std,
        ),
    ] {
        let _ = writeln!(csv, "{tag},,{pm:.9},{pp:.6},{od:.6}");
    }
    csv
}

fn print_summary(err: &TrajectoryError) {
    println!("          position [m]  position [%]  orientation [deg]");
    for (tag, s_m, s_p, s_o) in [
        (
            "RMS ",
            err.position_m_stats.rms,
            err.position_pct_stats.rms,
            err.orientation_stats.rms,
        ),
        (
            "mean",
            err.position_m_stats.mean,
            err.position_pct_stats.mean,
            err.orientation_stats.mean,
        ),
        (
            "std ",
            err.position_m_stats.std,
            err.position_pct_stats.std,
            err.orientation_stats.std,
        ),
    ] {
        println!("  {tag}    {s_m:>10.6}   {s_p:>9.4}      {s_o:>9.4}");
    }
}

/// Compare an estimated trajectory against ground truth; writes the error
/// CSV when `out` is given and prints the summary table.
pub fn cmd_evaluate(
    est_path: &Path,
    gt_path: &Path,
    mean_depth: f64,
    out: Option<&Path>,
) -> Result<TrajectoryError, CmdError> {
    if mean_depth <= 0.0 || mean_depth.is_nan() {
        return Err(CmdError::config("mean depth must be positive"));
    }
    let est = read_trajectory(est_path).map_err(|e| CmdError::config(e.to_string()))?;
    let gt = read_trajectory(gt_path).map_err(|e| CmdError::config(e.to_string()))?;
    let err =
        align_and_compare(&est, &gt, mean_depth).map_err(|e| CmdError::config(e.to_string()))?;
    if let Some(out) = out {
        std::fs::write(out, error_csv(&err))
            .map_err(|e| CmdError::config(format!("{}: {e}", out.display())))?;
    }
    println!("compared {} samples", err.timestamps.len());
    print_summary(&err);
    Ok(err)
}

/// Full experiment: generate the map, simulate, track, evaluate, and check
/// the acceptance thresholds from the config. Exit code 3 flags divergence,
/// 4 an acceptance failure.
pub fn cmd_e2e(config: &Path, workdir: &Path, seed: Option<u64>) -> Result<(), CmdError> {
    let cfg = load(config)?;
    let map_dir: PathBuf = workdir.join("map");
    let sim_dir: PathBuf = workdir.join("sim");
    let track_dir: PathBuf = workdir.join("track");
    ensure_dir(workdir)?;

    cmd_make_map(config, &map_dir)?;
    cmd_simulate(config, &map_dir, &sim_dir, seed)?;
    cmd_track(
        config,
        &map_dir,
        &sim_dir.join("events.txt"),
        &sim_dir.join("groundtruth.txt"),
        &track_dir,
        &TrackOptions {
            decimate: None,
            max_events: None,
            strict_io: false,
        },
    )?;
    let err = cmd_evaluate(
        &track_dir.join("estimate.txt"),
        &sim_dir.join("groundtruth.txt"),
        load_map(&map_dir)
            .map_err(|e| CmdError::config(e.to_string()))?
            .mean_scene_depth,
        Some(&workdir.join("errors.csv")),
    )?;

    let pos = err.position_pct_stats.rms;
    let ori = err.orientation_stats.rms;
    if pos > cfg.divergence_position_pct {
        return Err(CmdError::divergence(format!(
            "tracking diverged: RMS position {pos:.3}% > {:.3}%",
            cfg.divergence_position_pct
        )));
    }
    if pos > cfg.accept_rms_position_pct || ori > cfg.accept_rms_orientation_deg {
        return Err(CmdError::acceptance(format!(
            "acceptance thresholds violated: RMS position {pos:.3}% (limit {:.3}%), \
             RMS orientation {ori:.3} deg (limit {:.3} deg)",
            cfg.accept_rms_position_pct, cfg.accept_rms_orientation_deg
        )));
    }
    println!(
        "e2e passed: RMS position {pos:.3}% <= {:.3}%, RMS orientation {ori:.3} <= {:.3} deg",
        cfg.accept_rms_position_pct, cfg.accept_rms_orientation_deg
    );
    Ok(())
}
