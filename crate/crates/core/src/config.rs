//! Run configuration: one plain-text `key = value` file drives scene
//! generation, simulation, tracking, and evaluation, so an experiment is
//! reproducible from the config and seeds alone. Unknown keys are rejected.

use std::path::Path;

use thiserror::Error;

use crate::geometry::CameraIntrinsics;
use crate::scene::{SceneKind, SceneParams};
use crate::sim::{SimParams, TrajectoryKind, TrajectoryParams};
use crate::tracker::{MotionModelParams, TrackerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown key {key:?}")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // scene
    pub scene: SceneKind,
    pub map_width: u32,
    pub map_height: u32,
    pub map_focal: f64,
    pub mean_depth: f64,
    pub depth_ratio: f64,
    pub texture_contrast: f64,
    pub texture_scale: f64,
    pub texture_seed: u64,
    // sensor
    pub sensor_width: u32,
    pub sensor_height: u32,
    pub sensor_focal: f64,
    // simulator
    pub c_plus: f64,
    pub c_minus: f64,
    pub threshold_noise_std: f64,
    pub outlier_rate: f64,
    pub render_dt: f64,
    pub seed: u64,
    // trajectory
    pub traj_kind: TrajectoryKind,
    pub traj_duration: f64,
    pub traj_sample_dt: f64,
    pub traj_translation_amplitude: f64,
    pub traj_rotation_amplitude_deg: f64,
    pub traj_frequency: f64,
    pub traj_ramp_time: f64,
    pub traj_seed: u64,
    // tracker
    pub init_contrast: f64,
    pub initial_pose_std: f64,
    pub initial_contrast_std: f64,
    pub per_event_diffusion_std: f64,
    pub threshold_diffusion_std: f64,
    pub max_std: f64,
    pub beta_a0: f64,
    pub beta_b0: f64,
    pub ig_alpha0: f64,
    pub ig_beta0: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub c_min_floor: f64,
    pub history_capacity: usize,
    pub depth_iterations: usize,
    pub fd_step: f64,
    pub weight_floor_outside_support: bool,
    /// Offset applied to the tracker's initial pose along +x, as percent of
    /// the mean scene depth (divergence experiments).
    pub init_offset_pct: f64,
    // harness
    pub decimate: u32,
    pub max_events: u64,
    pub strict_io: bool,
    pub accept_rms_position_pct: f64,
    pub accept_rms_orientation_deg: f64,
    pub divergence_position_pct: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneKind::Planar,
            map_width: 256,
            map_height: 256,
            map_focal: 200.0,
            mean_depth: 0.6,
            depth_ratio: 2.0,
            texture_contrast: 0.25,
            texture_scale: 24.0,
            texture_seed: 7,
            sensor_width: 128,
            sensor_height: 128,
            sensor_focal: 140.0,
            c_plus: 0.15,
            c_minus: -0.15,
            threshold_noise_std: 0.0,
            outlier_rate: 0.0,
            render_dt: 1e-3,
            seed: 1,
            traj_kind: TrajectoryKind::Shake,
            traj_duration: 4.0,
            traj_sample_dt: 1e-3,
            traj_translation_amplitude: 0.01,
            traj_rotation_amplitude_deg: 1.5,
            traj_frequency: 1.0,
            traj_ramp_time: 0.5,
            traj_seed: 42,
            init_contrast: 0.15,
            initial_pose_std: 0.005,
            initial_contrast_std: 0.03,
            per_event_diffusion_std: 1e-4,
            threshold_diffusion_std: 1e-5,
            max_std: 0.03,
            beta_a0: 1.0,
            beta_b0: 1.0,
            ig_alpha0: 3.0,
            ig_beta0: 0.08,
            m_min: -5.0,
            m_max: 5.0,
            c_min_floor: 1e-3,
            history_capacity: 1024,
            depth_iterations: 3,
            fd_step: 1e-4,
            weight_floor_outside_support: false,
            init_offset_pct: 0.0,
            decimate: 100,
            max_events: 0,
            strict_io: true,
            accept_rms_position_pct: 3.0,
            accept_rms_orientation_deg: 2.5,
            divergence_position_pct: 10.0,
        }
    }
}

impl RunConfig {
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            kind: self.scene,
            width: self.map_width,
            height: self.map_height,
            focal: self.map_focal,
            mean_depth: self.mean_depth,
            depth_ratio: self.depth_ratio,
            texture_contrast: self.texture_contrast,
            texture_scale: self.texture_scale,
            texture_seed: self.texture_seed,
        }
    }

    pub fn sensor(&self) -> CameraIntrinsics {
        CameraIntrinsics::centered(self.sensor_focal, self.sensor_width, self.sensor_height)
            .expect("validated sensor dimensions")
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            c_plus: self.c_plus,
            c_minus: self.c_minus,
            threshold_noise_std: self.threshold_noise_std,
            outlier_rate: self.outlier_rate,
            render_dt: self.render_dt,
            sensor: self.sensor(),
            rng_seed: self.seed,
        }
    }

    pub fn trajectory_params(&self) -> TrajectoryParams {
        TrajectoryParams {
            kind: self.traj_kind,
            duration: self.traj_duration,
            sample_dt: self.traj_sample_dt,
            translation_amplitude: self.traj_translation_amplitude,
            rotation_amplitude: self.traj_rotation_amplitude_deg.to_radians(),
            frequency: self.traj_frequency,
            seed: self.traj_seed,
            ramp_time: self.traj_ramp_time,
            base: crate::geometry::Pose::identity(),
            orbit_target_depth: self.mean_depth,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            initial_contrast: self.init_contrast,
            initial_pose_std: self.initial_pose_std,
            initial_contrast_std: self.initial_contrast_std,
            motion: MotionModelParams {
                per_event_diffusion_std: self.per_event_diffusion_std,
                max_std: self.max_std,
                threshold_diffusion_std: self.threshold_diffusion_std,
            },
            beta_a0: self.beta_a0,
            beta_b0: self.beta_b0,
            ig_alpha0: self.ig_alpha0,
            ig_beta0: self.ig_beta0,
            m_min: self.m_min,
            m_max: self.m_max,
            c_min_floor: self.c_min_floor,
            history_capacity: self.history_capacity,
            depth_iterations: self.depth_iterations,
            fd_step: self.fd_step,
            weight_floor_outside_support: self.weight_floor_outside_support,
        }
    }
}

/// Parse a config file. Every key is optional (defaults apply); unknown or
/// duplicate keys are errors.
pub fn read_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, path: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                path: path.into(),
                line: lineno,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Parse {
                path: path.into(),
                line: lineno,
                message: format!("duplicate key {key:?}"),
            });
        }
        apply_key(&mut cfg, key, value).map_err(|message| match message {
            KeyError::Unknown => ConfigError::UnknownKey {
                path: path.into(),
                line: lineno,
                key: key.into(),
            },
            KeyError::BadValue(message) => ConfigError::Parse {
                path: path.into(),
                line: lineno,
                message,
            },
        })?;
    }
    Ok(cfg)
}

enum KeyError {
    Unknown,
    BadValue(String),
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), KeyError> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, KeyError> {
        value
            .parse()
            .map_err(|_| KeyError::BadValue(format!("bad value {value:?} for {key}")))
    }
    match key {
        "scene" => cfg.scene = value.parse().map_err(KeyError::BadValue)?,
        "map_width" => cfg.map_width = num(key, value)?,
        "map_height" => cfg.map_height = num(key, value)?,
        "map_focal" => cfg.map_focal = num(key, value)?,
        "mean_depth" => cfg.mean_depth = num(key, value)?,
        "depth_ratio" => cfg.depth_ratio = num(key, value)?,
        "texture_contrast" => cfg.texture_contrast = num(key, value)?,
        "texture_scale" => cfg.texture_scale = num(key, value)?,
        "texture_seed" => cfg.texture_seed = num(key, value)?,
        "sensor_width" => cfg.sensor_width = num(key, value)?,
        "sensor_height" => cfg.sensor_height = num(key, value)?,
        "sensor_focal" => cfg.sensor_focal = num(key, value)?,
        "c_plus" => cfg.c_plus = num(key, value)?,
        "c_minus" => cfg.c_minus = num(key, value)?,
        "threshold_noise_std" => cfg.threshold_noise_std = num(key, value)?,
        "outlier_rate" => cfg.outlier_rate = num(key, value)?,
        "render_dt" => cfg.render_dt = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "traj_kind" => cfg.traj_kind = value.parse().map_err(KeyError::BadValue)?,
        "traj_duration" => cfg.traj_duration = num(key, value)?,
        "traj_sample_dt" => cfg.traj_sample_dt = num(key, value)?,
        "traj_translation_amplitude" => cfg.traj_translation_amplitude = num(key, value)?,
        "traj_rotation_amplitude_deg" => cfg.traj_rotation_amplitude_deg = num(key, value)?,
        "traj_frequency" => cfg.traj_frequency = num(key, value)?,
        "traj_ramp_time" => cfg.traj_ramp_time = num(key, value)?,
        "traj_seed" => cfg.traj_seed = num(key, value)?,
        "init_contrast" => cfg.init_contrast = num(key, value)?,
        "initial_pose_std" => cfg.initial_pose_std = num(key, value)?,
        "initial_contrast_std" => cfg.initial_contrast_std = num(key, value)?,
        "per_event_diffusion_std" => cfg.per_event_diffusion_std = num(key, value)?,
        "threshold_diffusion_std" => cfg.threshold_diffusion_std = num(key, value)?,
        "max_std" => cfg.max_std = num(key, value)?,
        "beta_a0" => cfg.beta_a0 = num(key, value)?,
        "beta_b0" => cfg.beta_b0 = num(key, value)?,
        "ig_alpha0" => cfg.ig_alpha0 = num(key, value)?,
        "ig_beta0" => cfg.ig_beta0 = num(key, value)?,
        "m_min" => cfg.m_min = num(key, value)?,
        "m_max" => cfg.m_max = num(key, value)?,
        "c_min_floor" => cfg.c_min_floor = num(key, value)?,
        "history_capacity" => cfg.history_capacity = num(key, value)?,
        "depth_iterations" => cfg.depth_iterations = num(key, value)?,
        "fd_step" => cfg.fd_step = num(key, value)?,
        "weight_floor_outside_support" => {
            cfg.weight_floor_outside_support = num(key, value)?;
        }
        "init_offset_pct" => cfg.init_offset_pct = num(key, value)?,
        "decimate" => cfg.decimate = num(key, value)?,
        "max_events" => cfg.max_events = num(key, value)?,
        "strict_io" => cfg.strict_io = num(key, value)?,
        "accept_rms_position_pct" => cfg.accept_rms_position_pct = num(key, value)?,
        "accept_rms_orientation_deg" => cfg.accept_rms_orientation_deg = num(key, value)?,
        "divergence_position_pct" => cfg.divergence_position_pct = num(key, value)?,
        _ => return Err(KeyError::Unknown),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config("", "test").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn parses_keys_comments_and_types() {
        let text = "\
# scenario
scene = two_plane_boxes
traj_kind = orbit   # inline comment
outlier_rate = 1500.5
history_capacity = 4096
weight_floor_outside_support = true
c_minus = -0.2
";
        let cfg = parse_config(text, "test").unwrap();
        assert_eq!(cfg.scene, SceneKind::TwoPlane);
        assert_eq!(cfg.traj_kind, TrajectoryKind::Orbit);
        assert_eq!(cfg.outlier_rate, 1500.5);
        assert_eq!(cfg.history_capacity, 4096);
        assert!(cfg.weight_floor_outside_support);
        assert_eq!(cfg.c_minus, -0.2);
        // untouched keys keep defaults
        assert_eq!(cfg.c_plus, 0.15);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert!(matches!(
            parse_config("render_dtt = 0.01\n", "t"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("seed = 1\nseed = 2\n", "t"),
            Err(ConfigError::Parse { line: 2, .. })
        ));
        assert!(parse_config("seed\n", "t").is_err());
        assert!(parse_config("seed = abc\n", "t").is_err());
    }

    #[test]
    fn conversions_carry_values_through() {
        let cfg = parse_config("mean_depth = 0.9\nsensor_focal = 120\nmax_std = 0.05\n", "t")
            .unwrap();
        assert_eq!(cfg.scene_params().mean_depth, 0.9);
        assert_eq!(cfg.sensor().fx, 120.0);
        assert_eq!(cfg.tracker_config().motion.max_std, 0.05);
        assert_eq!(cfg.trajectory_params().orbit_target_depth, 0.9);
        assert_eq!(cfg.sim_params().sensor.width, 128);
    }
}
