//! Synthetic smooth camera trajectories for closed-loop experiments.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{interpolate_pose, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Circular orbit in the x-y plane, looking at a fixed target point.
    Orbit,
    /// Band-limited sinusoidal wobble in all six degrees of freedom.
    Shake,
    /// Smooth spline through random waypoints.
    Spline,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "shake" => Ok(TrajectoryKind::Shake),
            "spline" => Ok(TrajectoryKind::Spline),
            other => Err(format!("unknown trajectory kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryParams {
    pub kind: TrajectoryKind,
    pub duration: f64,
    pub sample_dt: f64,
    /// Peak translational excursion from the base pose, meters.
    pub translation_amplitude: f64,
    /// Peak rotational excursion, radians.
    pub rotation_amplitude: f64,
    /// Base frequency, Hz. Orbit period is 1/frequency.
    pub frequency: f64,
    pub seed: u64,
    pub base: Pose,
    /// Look-at distance for orbits, meters (typically the mean scene depth).
    pub orbit_target_depth: f64,
    /// Smoothstep ramp of the excursion amplitude from zero over this span,
    /// seconds; the trajectory starts at rest like a hand-held sequence.
    /// Zero disables the ramp.
    pub ramp_time: f64,
}

impl TrajectoryParams {
    /// Upper bound on the angular speed of a shake trajectory, rad/s.
    ///
    /// The rotation vector is a per-axis sinusoid with quadrature amplitude
    /// `rotation_amplitude` and per-axis frequency at most `frequency`; the
    /// body angular rate never exceeds the rotation-vector rate.
    pub fn max_angular_speed(&self) -> f64 {
        self.rotation_amplitude * 2.0 * PI * self.frequency
    }
}

struct AxisWave {
    amplitude: f64,
    omega: f64,
    phase: f64,
}

impl AxisWave {
    fn eval(&self, t: f64) -> f64 {
        // zero-anchored so the trajectory starts at the base pose
        self.amplitude * ((self.omega * t + self.phase).sin() - self.phase.sin())
    }
}

fn waves(rng: &mut ChaCha8Rng, amplitude: f64, frequency: f64) -> [AxisWave; 3] {
    // per-axis amplitude in quadrature so the vector norm stays within the
    // requested amplitude
    let per_axis = amplitude / 3f64.sqrt();
    std::array::from_fn(|_| AxisWave {
        amplitude: per_axis,
        omega: 2.0 * PI * frequency * rng.random_range(0.5..1.0),
        phase: rng.random_range(0.0..2.0 * PI),
    })
}

fn shake_pose(params: &TrajectoryParams, tw: &[AxisWave; 3], rw: &[AxisWave; 3], t: f64) -> Pose {
    let offset = Vector3::new(tw[0].eval(t), tw[1].eval(t), tw[2].eval(t));
    let rotvec = Vector3::new(rw[0].eval(t), rw[1].eval(t), rw[2].eval(t));
    Pose {
        rotation: params.base.rotation * UnitQuaternion::from_scaled_axis(rotvec),
        translation: params.base.translation + offset,
    }
}

fn orbit_pose(params: &TrajectoryParams, t: f64) -> Pose {
    let radius = params.translation_amplitude;
    let angle = 2.0 * PI * params.frequency * t;
    // offset anchored so the orbit starts at the base position
    let offset = Vector3::new(radius * (angle.cos() - 1.0), radius * angle.sin(), 0.0);
    let translation = params.base.translation + params.base.rotation * offset;
    // aim at the point the base pose looks at, orbit_target_depth ahead
    let target = params
        .base
        .transform_point(&Vector3::new(0.0, 0.0, params.orbit_target_depth));
    let forward_world = target - translation;
    let forward_local = (params.base.rotation.inverse() * forward_world).normalize();
    let correction = UnitQuaternion::rotation_between(&Vector3::z(), &forward_local)
        .unwrap_or_else(UnitQuaternion::identity);
    Pose {
        rotation: params.base.rotation * correction,
        translation,
    }
}

struct SplineWaypoints {
    times: Vec<f64>,
    poses: Vec<Pose>,
}

fn spline_waypoints(params: &TrajectoryParams, rng: &mut ChaCha8Rng) -> SplineWaypoints {
    let segments = ((params.duration * params.frequency).ceil() as usize).max(2);
    let n = segments + 1;
    let mut times = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        times.push(params.duration * i as f64 / segments as f64);
        let (offset, rotvec) = if i == 0 {
            (Vector3::zeros(), Vector3::zeros())
        } else {
            let ta = params.translation_amplitude;
            let ra = params.rotation_amplitude / 3f64.sqrt();
            (
                Vector3::new(
                    rng.random_range(-ta..=ta),
                    rng.random_range(-ta..=ta),
                    rng.random_range(-ta..=ta),
                ) / 3f64.sqrt(),
                Vector3::new(
                    rng.random_range(-ra..=ra),
                    rng.random_range(-ra..=ra),
                    rng.random_range(-ra..=ra),
                ),
            )
        };
        poses.push(Pose {
            rotation: params.base.rotation * UnitQuaternion::from_scaled_axis(rotvec),
            translation: params.base.translation + offset,
        });
    }
    SplineWaypoints { times, poses }
}

fn spline_pose(wp: &SplineWaypoints, t: f64) -> Pose {
    let n = wp.times.len();
    let seg = match wp.times.iter().position(|&wt| wt > t) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    };
    let t0 = wp.times[seg];
    let t1 = wp.times[seg + 1];
    let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    // smoothstep easing keeps velocity zero at waypoints, so the chained
    // segments join with continuous derivative
    let eased = s * s * (3.0 - 2.0 * s);
    let warped = t0 + eased * (t1 - t0);
    interpolate_pose(&wp.poses[seg], t0, &wp.poses[seg + 1], t1, warped)
        .expect("waypoint times are strictly increasing")
}

/// Shrink a pose's excursion from the base by `env` in [0, 1]: translation
/// scaled linearly, rotation scaled in exponential coordinates.
fn scale_excursion(base: &Pose, pose: &Pose, env: f64) -> Pose {
    if env >= 1.0 {
        return *pose;
    }
    let rel = base.rotation.inverse() * pose.rotation;
    Pose {
        rotation: base.rotation * UnitQuaternion::from_scaled_axis(rel.scaled_axis() * env),
        translation: base.translation + (pose.translation - base.translation) * env,
    }
}

/// Sample a smooth trajectory at `sample_dt`. Deterministic for a given
/// seed; a zero amplitude yields the constant base pose.
pub fn make_trajectory(params: &TrajectoryParams) -> Vec<(f64, Pose)> {
    let steps = (params.duration / params.sample_dt).round() as usize;
    let steps = steps.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    enum Gen {
        Shake([AxisWave; 3], [AxisWave; 3]),
        Orbit,
        Spline(SplineWaypoints),
    }
    let gen = match params.kind {
        TrajectoryKind::Shake => {
            let tw = waves(&mut rng, params.translation_amplitude, params.frequency);
            let rw = waves(&mut rng, params.rotation_amplitude, params.frequency);
            Gen::Shake(tw, rw)
        }
        TrajectoryKind::Orbit => Gen::Orbit,
        TrajectoryKind::Spline => Gen::Spline(spline_waypoints(params, &mut rng)),
    };

    (0..=steps)
        .map(|i| {
            let t = (i as f64 * params.sample_dt).min(params.duration);
            let pose = match &gen {
                Gen::Shake(tw, rw) => shake_pose(params, tw, rw, t),
                Gen::Orbit => orbit_pose(params, t),
                Gen::Spline(wp) => spline_pose(wp, t),
            };
            let pose = if params.ramp_time > 0.0 && t < params.ramp_time {
                let s = t / params.ramp_time;
                scale_excursion(&params.base, &pose, s * s * (3.0 - 2.0 * s))
            } else {
                pose
            };
            (t, pose)
        })
        .collect()
}
