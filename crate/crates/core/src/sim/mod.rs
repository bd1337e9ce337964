//! Event-camera simulator: applies the per-pixel contrast-trigger condition
//! to log intensity rendered from a photometric map along a ground-truth
//! trajectory, with optional threshold noise and uniform outlier events.
//!
//! Per-pixel state is independent, so the render-and-scan loop runs
//! data-parallel over image rows ([`ExecMode::Parallel`], the default when
//! the `parallel` feature is on) with a sequential fallback. Both paths
//! produce bit-identical event streams: rows are processed independently,
//! collected in row order, and the final stream is stable-sorted by time.

mod trajectory;

pub use trajectory::{make_trajectory, TrajectoryKind, TrajectoryParams};

use nalgebra::Vector2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::event::{Event, TimestampMap};
use crate::geometry::{interpolate_pose, CameraIntrinsics, Pose};
use crate::map::{Grid, PhotometricMap};
use crate::measurement::{MeasurementContext, TransferSampler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("camera frustum overlaps map on only {valid_fraction:.1}% of pixels")]
    InsufficientOverlap { valid_fraction: f64 },
    #[error("bad trajectory: {0}")]
    BadTrajectory(String),
    #[error("bad simulation parameters: {0}")]
    BadParams(String),
}

/// Contrast thresholds, noise, and sampling parameters of the simulated
/// sensor.
#[derive(Debug, Clone)]
pub struct SimParams {
    /// ON threshold, log-intensity units, positive.
    pub c_plus: f64,
    /// OFF threshold, log-intensity units, negative.
    pub c_minus: f64,
    /// Per-event Gaussian perturbation of the threshold, log-intensity units.
    pub threshold_noise_std: f64,
    /// Uniform outlier events per second over the whole array.
    pub outlier_rate: f64,
    /// Trajectory sampling step of the renderer, seconds.
    pub render_dt: f64,
    /// Event-sensor intrinsics (carries the array size).
    pub sensor: CameraIntrinsics,
    pub rng_seed: u64,
}

impl SimParams {
    fn validate(&self) -> Result<(), SimError> {
        if self.c_plus <= 0.0 || self.c_plus.is_nan() {
            return Err(SimError::BadParams("c_plus must be > 0".into()));
        }
        if self.c_minus >= 0.0 || self.c_minus.is_nan() {
            return Err(SimError::BadParams("c_minus must be < 0".into()));
        }
        if self.render_dt <= 0.0 || self.render_dt.is_nan() {
            return Err(SimError::BadParams("render_dt must be > 0".into()));
        }
        if self.threshold_noise_std < 0.0 || self.outlier_rate < 0.0 {
            return Err(SimError::BadParams("noise parameters must be >= 0".into()));
        }
        Ok(())
    }
}

/// Whether per-pixel loops run on rayon or on the current thread. Both
/// produce identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Parallel,
    Sequential,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Map `f` over `(row_index, row_slice)` pairs of a row-major buffer.
fn process_rows<T: Send, F>(buf: &mut [T], width: usize, mode: ExecMode, f: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            buf.par_chunks_mut(width).enumerate().for_each(|(y, row)| f(y, row));
        }
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => {
            for (y, row) in buf.chunks_mut(width).enumerate() {
                f(y, row);
            }
        }
        ExecMode::Sequential => {
            for (y, row) in buf.chunks_mut(width).enumerate() {
                f(y, row);
            }
        }
    }
}

/// Log intensity seen by one sensor pixel from `camera_pose`, or None if the
/// pixel does not resolve to a valid map point.
pub fn render_pixel(
    ctx: &MeasurementContext,
    camera_pose: &Pose,
    x: u16,
    y: u16,
) -> Option<f64> {
    let sampler = TransferSampler::new(ctx, camera_pose);
    sample_pixel(&sampler, ctx.sensor, x, y)
}

#[inline]
fn sample_pixel(
    sampler: &TransferSampler,
    sensor: &CameraIntrinsics,
    x: u16,
    y: u16,
) -> Option<f64> {
    let u = sensor.calibrate(&Vector2::new(x as f64, y as f64));
    sampler.log_intensity(&u).ok()
}

/// Render the full sensor image with the given execution mode. Unresolvable
/// pixels are NaN; fails unless at least half the pixels resolve.
pub fn render_log_intensity_with(
    mode: ExecMode,
    camera_pose: &Pose,
    map: &PhotometricMap,
    sensor: &CameraIntrinsics,
) -> Result<Grid, SimError> {
    let kf = map.select_reference(camera_pose);
    let ctx = MeasurementContext::new(map, kf, sensor);
    let (w, h) = (sensor.width as usize, sensor.height as usize);
    let mut data = vec![f64::NAN; w * h];
    let sampler = TransferSampler::new(&ctx, camera_pose);
    process_rows(&mut data, w, mode, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            if let Some(v) = sample_pixel(&sampler, sensor, x as u16, y as u16) {
                *out = v;
            }
        }
    });
    let valid = data.iter().filter(|v| v.is_finite()).count();
    let valid_fraction = valid as f64 / (w * h) as f64;
    if valid_fraction < 0.5 {
        return Err(SimError::InsufficientOverlap {
            valid_fraction: valid_fraction * 100.0,
        });
    }
    Ok(Grid::from_vec(w, h, data))
}

/// Render the log-intensity image seen from `camera_pose`.
pub fn render_log_intensity(
    camera_pose: &Pose,
    map: &PhotometricMap,
    sensor: &CameraIntrinsics,
) -> Result<Grid, SimError> {
    render_log_intensity_with(ExecMode::default(), camera_pose, map, sensor)
}

/// Simulator output: the sorted event stream plus, aligned with it, which
/// events were injected outliers, and the final per-pixel timestamp surface.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: Vec<Event>,
    pub outlier_mask: Vec<bool>,
    pub timestamps: TimestampMap,
}

struct PixelState {
    /// Log intensity the pixel is referenced to (level of the last event, or
    /// the level at activation). NaN until the pixel first resolves.
    ref_l: f64,
    /// Log intensity at the previous render step; NaN if unresolved then.
    prev_l: f64,
    /// Timestamp of the last emitted event at this pixel.
    last_t: f64,
    /// Noise-perturbed thresholds for the next ON/OFF event; each event
    /// consumes exactly one draw (NaN = not drawn yet).
    pending_on: f64,
    pending_off: f64,
    rng: ChaCha8Rng,
}

/// One render step for one pixel: emit events for every threshold crossing
/// between the previous and current sample.
#[allow(clippy::too_many_arguments)]
fn scan_pixel(
    st: &mut PixelState,
    x: u16,
    y: u16,
    l_cur: Option<f64>,
    t_prev: f64,
    t_cur: f64,
    params: &SimParams,
    noise: Option<&Normal<f64>>,
    out: &mut Vec<Event>,
) {
    let Some(l_cur) = l_cur else {
        // pixel unresolved: drop its reference so it re-anchors silently
        st.ref_l = f64::NAN;
        st.prev_l = f64::NAN;
        return;
    };
    if st.ref_l.is_nan() || st.prev_l.is_nan() {
        st.ref_l = l_cur;
        st.prev_l = l_cur;
        return;
    }
    let l_prev = st.prev_l;
    let span = l_cur - l_prev;
    loop {
        let delta = l_cur - st.ref_l;
        let (threshold, polarity) = if delta >= 0.0 {
            if let Some(n) = noise {
                if st.pending_on.is_nan() {
                    st.pending_on =
                        (params.c_plus + n.sample(&mut st.rng)).max(0.05 * params.c_plus);
                }
                (st.pending_on, 1i8)
            } else {
                (params.c_plus, 1i8)
            }
        } else if let Some(n) = noise {
            if st.pending_off.is_nan() {
                st.pending_off =
                    (params.c_minus + n.sample(&mut st.rng)).min(0.05 * params.c_minus);
            }
            (st.pending_off, -1i8)
        } else {
            (params.c_minus, -1i8)
        };
        if delta.abs() < threshold.abs() || delta.signum() != threshold.signum() {
            break;
        }
        let level = st.ref_l + threshold;
        // linear interpolation of the crossing time within the step
        let frac = if span.abs() > 1e-300 {
            ((level - l_prev) / span).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let mut t_event = t_prev + frac * (t_cur - t_prev);
        if !st.last_t.is_nan() && t_event < st.last_t {
            t_event = st.last_t;
        }
        out.push(Event::new(x, y, t_event, polarity));
        st.ref_l = level;
        st.last_t = t_event;
        if polarity > 0 {
            st.pending_on = f64::NAN;
        } else {
            st.pending_off = f64::NAN;
        }
    }
    st.prev_l = l_cur;
}

/// Simulate the event stream along a trajectory, with execution mode
/// control. See [`simulate`].
pub fn simulate_with(
    mode: ExecMode,
    trajectory: &[(f64, Pose)],
    map: &PhotometricMap,
    params: &SimParams,
) -> Result<SimOutput, SimError> {
    params.validate()?;
    if trajectory.len() < 2 {
        return Err(SimError::BadTrajectory("need at least 2 samples".into()));
    }
    if trajectory.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(SimError::BadTrajectory(
            "timestamps must be strictly increasing".into(),
        ));
    }

    let (w, h) = (params.sensor.width as usize, params.sensor.height as usize);
    let t_start = trajectory[0].0;
    let t_end = trajectory[trajectory.len() - 1].0;
    let steps = ((t_end - t_start) / params.render_dt).ceil() as usize;
    let noise = if params.threshold_noise_std > 0.0 {
        Some(Normal::new(0.0, params.threshold_noise_std).expect("validated std"))
    } else {
        None
    };

    let mut states: Vec<PixelState> = (0..w * h)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
            rng.set_stream(1 + i as u64);
            PixelState {
                ref_l: f64::NAN,
                prev_l: f64::NAN,
                last_t: f64::NAN,
                pending_on: f64::NAN,
                pending_off: f64::NAN,
                rng,
            }
        })
        .collect();
    let mut row_events: Vec<Vec<Event>> = vec![Vec::new(); h];

    let pose_at = |t: f64, cursor: &mut usize| -> Pose {
        while *cursor + 2 < trajectory.len() && trajectory[*cursor + 1].0 < t {
            *cursor += 1;
        }
        let (ta, pa) = trajectory[*cursor];
        let (tb, pb) = trajectory[*cursor + 1];
        interpolate_pose(&pa, ta, &pb, tb, t).expect("strictly increasing timestamps")
    };
    let mut cursor = 0usize;

    let mut labeled: Vec<(Event, bool)> = Vec::new();
    let mut t_prev = t_start;
    // anchor references at the trajectory start
    {
        let pose0 = pose_at(t_start, &mut cursor);
        let kf = map.select_reference(&pose0);
        let ctx = MeasurementContext::new(map, kf, &params.sensor);
        let sampler = TransferSampler::new(&ctx, &pose0);
        process_rows(&mut states, w, mode, |y, row| {
            for (x, st) in row.iter_mut().enumerate() {
                if let Some(l) = sample_pixel(&sampler, &params.sensor, x as u16, y as u16) {
                    st.ref_l = l;
                    st.prev_l = l;
                }
            }
        });
    }

    struct RowJob<'a> {
        states: &'a mut [PixelState],
        events: &'a mut Vec<Event>,
    }

    for step in 1..=steps {
        let t_cur = (t_start + step as f64 * params.render_dt).min(t_end);
        let pose = pose_at(t_cur, &mut cursor);
        let kf = map.select_reference(&pose);
        let ctx = MeasurementContext::new(map, kf, &params.sensor);
        let sampler = TransferSampler::new(&ctx, &pose);

        let mut jobs: Vec<RowJob> = states
            .chunks_mut(w)
            .zip(row_events.iter_mut())
            .map(|(states, events)| RowJob { states, events })
            .collect();
        process_rows(&mut jobs, 1, mode, |y, job| {
            let job = &mut job[0];
            for (x, st) in job.states.iter_mut().enumerate() {
                let l = sample_pixel(&sampler, &params.sensor, x as u16, y as u16);
                scan_pixel(
                    st, x as u16, y as u16, l, t_prev, t_cur, params, noise.as_ref(), job.events,
                );
            }
        });
        for row in row_events.iter_mut() {
            labeled.extend(row.drain(..).map(|e| (e, false)));
        }
        t_prev = t_cur;
    }

    // uniform outlier events from their own RNG stream
    if params.outlier_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        rng.set_stream(0);
        let lambda = params.outlier_rate * (t_end - t_start);
        let count = Poisson::new(lambda)
            .map_err(|e| SimError::BadParams(format!("outlier rate: {e}")))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            labeled.push((
                Event::new(
                    rng.random_range(0..w as u16),
                    rng.random_range(0..h as u16),
                    rng.random_range(t_start..=t_end),
                    if rng.random_bool(0.5) { 1 } else { -1 },
                ),
                true,
            ));
        }
    }

    labeled.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));

    let mut timestamps = TimestampMap::new(w, h);
    for (e, _) in &labeled {
        timestamps.record(e.x, e.y, e.t, f64::NAN);
    }
    let (events, outlier_mask) = labeled.into_iter().unzip();
    Ok(SimOutput {
        events,
        outlier_mask,
        timestamps,
    })
}

/// Simulate the event stream along a trajectory with outlier labels.
pub fn simulate_labeled(
    trajectory: &[(f64, Pose)],
    map: &PhotometricMap,
    params: &SimParams,
) -> Result<SimOutput, SimError> {
    simulate_with(ExecMode::default(), trajectory, map, params)
}

/// Simulate the event stream along a trajectory. Deterministic: the same
/// trajectory, parameters, and seed give a bit-identical stream.
pub fn simulate(
    trajectory: &[(f64, Pose)],
    map: &PhotometricMap,
    params: &SimParams,
) -> Result<Vec<Event>, SimError> {
    Ok(simulate_labeled(trajectory, map, params)?.events)
}
