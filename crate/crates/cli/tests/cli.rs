//! End-to-end tests of the `evtrack` binary: exit codes, output files, and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evtrack() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evtrack"))
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.cfg");
    let base = "\
scene = planar_rocks
map_width = 128
map_height = 128
map_focal = 100
sensor_width = 64
sensor_height = 64
sensor_focal = 70
mean_depth = 0.6
threshold_noise_std = 0.02
render_dt = 2e-3
traj_duration = 1.5
traj_ramp_time = 0.3
traj_translation_amplitude = 0.01
traj_rotation_amplitude_deg = 1.5
ig_beta0 = 0.8
initial_contrast_std = 0.003
threshold_diffusion_std = 0.0
history_capacity = 65536
decimate = 50
accept_rms_position_pct = 3.0
accept_rms_orientation_deg = 2.5
";
    std::fs::write(&path, format!("{base}{extra}")).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn e2e_passes_on_the_small_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run").to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("e2e passed"), "{text}");
    assert!(dir.path().join("run/sim/events.txt").exists());
    assert!(dir.path().join("run/track/estimate.txt").exists());
    assert!(dir.path().join("run/track/diagnostics.csv").exists());
    assert!(dir.path().join("run/errors.csv").exists());
    // throughput and skip counts are reported
    assert!(text.contains("events/s"));
    assert!(text.contains("skips: total"));
}

#[test]
fn e2e_bundled_planar_rocks_scenario() {
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/planar_rocks.cfg");
    let dir = tempfile::tempdir().unwrap();

    // the bundled scenario passes its own acceptance thresholds
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", bundled.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run").to_str().unwrap()]));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("e2e passed"));

    // the same scenario initialized 20% of the scene depth away diverges
    let text = std::fs::read_to_string(&bundled).unwrap();
    let offset_cfg = dir.path().join("offset.cfg");
    std::fs::write(&offset_cfg, format!("{text}init_offset_pct = 20\n")).unwrap();
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", offset_cfg.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run_off").to_str().unwrap()]));
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "not_a_real_key = 1\n");
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run").to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", dir.path().join("missing.cfg").to_str().unwrap()])
        .args(["--workdir", dir.path().join("run2").to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distant_initialization_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "init_offset_pct = 20\ndivergence_position_pct = 10\n");
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run").to_str().unwrap()]));
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn unattainable_thresholds_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        "accept_rms_position_pct = 0.0001\ndivergence_position_pct = 50\n",
    );
    // duplicate keys are rejected, so rewrite the config with the override
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("accept_rms_position_pct = 3.0\n", "");
    std::fs::write(&cfg, text).unwrap();
    let out = run(evtrack()
        .arg("e2e")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--workdir", dir.path().join("run").to_str().unwrap()]));
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("acceptance"));
}

#[test]
fn simulate_and_track_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let map = dir.path().join("map");
    assert_eq!(
        run(evtrack()
            .arg("make-map")
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--out", map.to_str().unwrap()]))
        .status
        .code(),
        Some(0)
    );

    for name in ["sim_a", "sim_b"] {
        let out = run(evtrack()
            .arg("simulate")
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--map", map.to_str().unwrap()])
            .args(["--out", dir.path().join(name).to_str().unwrap()]));
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(
        read(dir.path().join("sim_a/events.txt")),
        read(dir.path().join("sim_b/events.txt"))
    );
    assert_eq!(
        read(dir.path().join("sim_a/groundtruth.txt")),
        read(dir.path().join("sim_b/groundtruth.txt"))
    );
    // manifests agree apart from the created timestamp
    let manifest = |p: PathBuf| -> Vec<String> {
        String::from_utf8(read(p))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("created"))
            .map(str::to_owned)
            .collect()
    };
    assert_eq!(
        manifest(dir.path().join("sim_a/manifest.txt")),
        manifest(dir.path().join("sim_b/manifest.txt"))
    );

    // a different seed changes the stream
    let out = run(evtrack()
        .arg("simulate")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--map", map.to_str().unwrap()])
        .args(["--out", dir.path().join("sim_c").to_str().unwrap()])
        .args(["--seed", "999"]));
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(
        read(dir.path().join("sim_a/events.txt")),
        read(dir.path().join("sim_c/events.txt"))
    );

    for name in ["trk_a", "trk_b"] {
        let out = run(evtrack()
            .arg("track")
            .args(["--config", cfg.to_str().unwrap()])
            .args(["--map", map.to_str().unwrap()])
            .args(["--events", dir.path().join("sim_a/events.txt").to_str().unwrap()])
            .args([
                "--init-pose",
                dir.path().join("sim_a/groundtruth.txt").to_str().unwrap(),
            ])
            .args(["--out", dir.path().join(name).to_str().unwrap()]));
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        read(dir.path().join("trk_a/estimate.txt")),
        read(dir.path().join("trk_b/estimate.txt"))
    );
    assert_eq!(
        read(dir.path().join("trk_a/diagnostics.csv")),
        read(dir.path().join("trk_b/diagnostics.csv"))
    );
}

#[test]
fn zero_event_input_yields_initial_pose_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let map = dir.path().join("map");
    run(evtrack()
        .arg("make-map")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--out", map.to_str().unwrap()]));
    let sim = dir.path().join("sim");
    run(evtrack()
        .arg("simulate")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--map", map.to_str().unwrap()])
        .args(["--out", sim.to_str().unwrap()]));

    let empty = dir.path().join("empty_events.txt");
    std::fs::write(&empty, "").unwrap();
    let trk = dir.path().join("trk");
    let out = run(evtrack()
        .arg("track")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--map", map.to_str().unwrap()])
        .args(["--events", empty.to_str().unwrap()])
        .args(["--init-pose", sim.join("groundtruth.txt").to_str().unwrap()])
        .args(["--out", trk.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0));
    let estimate = std::fs::read_to_string(trk.join("estimate.txt")).unwrap();
    assert_eq!(estimate.lines().count(), 1);

    // evaluating the single pose against the matching ground truth is a
    // zero-error comparison
    let out = run(evtrack()
        .arg("evaluate")
        .args(["--est", trk.join("estimate.txt").to_str().unwrap()])
        .args(["--gt", sim.join("groundtruth.txt").to_str().unwrap()])
        .args(["--mean-depth", "0.6"]));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("compared 1 samples"), "{text}");
    assert!(text.contains("RMS"));
}

#[test]
fn track_respects_max_events_and_lenient_io() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "strict_io = false\n");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("decimate = 50\n", "decimate = 1\n");
    std::fs::write(&cfg, text).unwrap();
    let map = dir.path().join("map");
    run(evtrack()
        .arg("make-map")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--out", map.to_str().unwrap()]));

    // non-monotone stream: strict mode rejects, lenient config sorts
    let events = dir.path().join("events.txt");
    std::fs::write(&events, "0.200000000 30 30 1\n0.100000000 31 30 0\n0.300000000 32 30 1\n")
        .unwrap();
    let gt = dir.path().join("gt.txt");
    std::fs::write(&gt, "0.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n").unwrap();

    let out = run(evtrack()
        .arg("track")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--map", map.to_str().unwrap()])
        .args(["--events", events.to_str().unwrap()])
        .args(["--init-pose", gt.to_str().unwrap()])
        .args(["--out", dir.path().join("trk").to_str().unwrap()])
        .arg("--strict-io"));
    assert_eq!(out.status.code(), Some(2));

    let out = run(evtrack()
        .arg("track")
        .args(["--config", cfg.to_str().unwrap()])
        .args(["--map", map.to_str().unwrap()])
        .args(["--events", events.to_str().unwrap()])
        .args(["--init-pose", gt.to_str().unwrap()])
        .args(["--out", dir.path().join("trk").to_str().unwrap()])
        .args(["--max-events", "2"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("tracked 2 events"));
}
