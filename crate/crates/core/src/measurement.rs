//! The contrast measurement: transfer of an event into the reference image,
//! two-point contrast prediction, the dimensionless residual M, its
//! linearization, and the normal-uniform mixture likelihood with its
//! exponential-family decomposition.
//!
//! The reduced state has 19 coordinates: current pose (6), the two poses
//! bracketing the previous event at the same pixel (6 + 6), and the contrast
//! threshold (1). Pose coordinates are normalized: translation is expressed
//! in units of the mean scene depth, rotation in radians.

use nalgebra::{SMatrix, SVector, Vector2};
use thiserror::Error;

use crate::event::{Event, TimestampMap};
use crate::geometry::{
    backproject, interpolate_pose, project, CameraIntrinsics, GeometryError, Pose,
};
use crate::map::{MapError, PhotometricMap};

pub const STATE_DIM: usize = 19;
/// Offset of the current-pose block.
pub const XI_C: usize = 0;
/// Offset of the earlier bracketing-pose block.
pub const XI_I: usize = 6;
/// Offset of the later bracketing-pose block.
pub const XI_J: usize = 12;
/// Index of the contrast-threshold coordinate.
pub const C_IDX: usize = 18;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("no prior event at this pixel")]
    NoPriorEvent,
    #[error("transferred point behind camera")]
    BehindCamera,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("non-finite value in measurement evaluation")]
    NonFinite,
}

impl From<GeometryError> for MeasureError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::NonPositiveDepth(_) => MeasureError::BehindCamera,
            _ => MeasureError::NonFinite,
        }
    }
}

/// The slice of the filter state needed to evaluate one measurement.
#[derive(Debug, Clone, Copy)]
pub struct ReducedState {
    /// Pose at the event time.
    pub xi_c: Pose,
    /// Earlier bracketing pose and its timestamp.
    pub xi_i: Pose,
    pub t_i: f64,
    /// Later bracketing pose and its timestamp; `t_i < t_j`.
    pub xi_j: Pose,
    pub t_j: f64,
    /// Contrast threshold magnitude (log-intensity units, positive).
    pub c: f64,
}

/// Predicted residual and its gradient over the 19 state coordinates.
#[derive(Debug, Clone)]
pub struct LinearizedMeasurement {
    pub m0: f64,
    pub jac: StateVector,
}

/// Parameters of the normal-uniform mixture likelihood.
#[derive(Debug, Clone, Copy)]
pub struct MixtureParams {
    /// Inlier probability, in (0, 1).
    pub pi_m: f64,
    /// Inlier standard deviation of M, positive.
    pub sigma_m: f64,
    /// Uniform outlier support, `m_min < 0 < m_max`.
    pub m_min: f64,
    pub m_max: f64,
}

impl MixtureParams {
    pub fn uniform_density(&self) -> f64 {
        1.0 / (self.m_max - self.m_min)
    }
}

/// One exponential-family term of the likelihood, `exp(eta . T(s) - A)`.
///
/// The sufficient-statistics layout is, in order: the quadratic state block
/// divided by the inlier variance, the linear state block divided by the
/// inlier variance, 1/variance, log sigma, log pi, log(1 - pi). The natural
/// parameter is stored blockwise in the same order.
#[derive(Debug, Clone)]
pub struct ExpFamilyTerm {
    pub quad: StateMatrix,
    pub lin: StateVector,
    pub inv_var: f64,
    pub log_sigma: f64,
    pub log_pi: f64,
    pub log_one_minus_pi: f64,
    /// Log-normalizer A.
    pub log_normalizer: f64,
}

impl ExpFamilyTerm {
    /// Evaluate the term at a state deviation from the linearization point.
    pub fn density(&self, deviation: &StateVector, sigma_m: f64, pi_m: f64) -> f64 {
        let s2 = sigma_m * sigma_m;
        let exponent = deviation.dot(&(self.quad * deviation)) / s2
            + self.lin.dot(deviation) / s2
            + self.inv_var / s2
            + self.log_sigma * sigma_m.ln()
            + self.log_pi * pi_m.ln()
            + self.log_one_minus_pi * (1.0 - pi_m).ln()
            - self.log_normalizer;
        exponent.exp()
    }
}

/// Everything needed to evaluate measurements against one reference view.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementContext<'a> {
    pub map: &'a PhotometricMap,
    /// Index of the reference keyframe in use.
    pub kf: usize,
    /// Intrinsics of the event camera.
    pub sensor: &'a CameraIntrinsics,
    /// Fixed-point iterations of the depth lookup.
    pub depth_iterations: usize,
    /// Lower bound on the threshold magnitude used in divisions.
    pub c_min_floor: f64,
    /// Central-difference step in normalized units.
    pub fd_step: f64,
}

impl<'a> MeasurementContext<'a> {
    pub fn new(map: &'a PhotometricMap, kf: usize, sensor: &'a CameraIntrinsics) -> Self {
        MeasurementContext {
            map,
            kf,
            sensor,
            depth_iterations: 3,
            c_min_floor: 1e-3,
            fd_step: 1e-4,
        }
    }

    /// Signed threshold for an event polarity, clamped away from zero.
    pub fn signed_threshold(&self, c: f64, polarity: i8) -> f64 {
        let magnitude = c.abs().max(self.c_min_floor);
        if polarity >= 0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Transfer calibrated coordinates `u` through a rigid transform at depth
/// `z`: `u' = project(t_rc * backproject(u, z))`.
pub fn transfer_event(
    u: &Vector2<f64>,
    t_rc: &Pose,
    z: f64,
) -> Result<Vector2<f64>, MeasureError> {
    let p = backproject(u, z)?;
    let q = t_rc.transform_point(&p);
    Ok(project(&q)?)
}

/// Camera-to-reference transfer machinery for one camera pose, with the
/// rotations in matrix form. Building it once per pose keeps the per-pixel
/// and per-probe loops off the quaternion path.
pub struct TransferSampler<'a> {
    ctx: &'a MeasurementContext<'a>,
    r_rc: nalgebra::Matrix3<f64>,
    t_rc: nalgebra::Vector3<f64>,
    r_cr: nalgebra::Matrix3<f64>,
    t_cr: nalgebra::Vector3<f64>,
}

impl<'a> TransferSampler<'a> {
    pub fn new(ctx: &'a MeasurementContext<'a>, camera_pose: &Pose) -> Self {
        let kf = &ctx.map.keyframes[ctx.kf];
        let t_rc = kf.pose.inverse().compose(camera_pose);
        let t_cr = t_rc.inverse();
        TransferSampler {
            ctx,
            r_rc: t_rc.rotation_matrix(),
            t_rc: t_rc.translation,
            r_cr: t_cr.rotation_matrix(),
            t_cr: t_cr.translation,
        }
    }

    /// Fixed-point depth lookup along the ray `u` (see [`lookup_depth`]).
    pub fn depth(&self, u: &Vector2<f64>) -> Result<f64, MeasureError> {
        let ctx = self.ctx;
        let kf = &ctx.map.keyframes[ctx.kf];
        let mut z = ctx.map.mean_scene_depth;
        let mut prev = f64::NAN;
        for _ in 0..ctx.depth_iterations {
            let p_cam = backproject(u, z)?;
            let p_ref = self.r_rc * p_cam + self.t_rc;
            let u_ref = project(&p_ref)?;
            let pixel = kf.intrinsics.to_pixel(&u_ref);
            let d_ref = ctx.map.sample_depth(ctx.kf, &pixel)?;
            let surface_ref = backproject(&u_ref, d_ref)?;
            z = (self.r_cr * surface_ref + self.t_cr).z;
            if z <= 0.0 {
                return Err(MeasureError::BehindCamera);
            }
            if z == prev {
                break; // bit-exact fixed point, further rounds are no-ops
            }
            prev = z;
        }
        Ok(z)
    }

    /// Depth lookup, transfer, and log-intensity sample in one pass.
    pub fn log_intensity(&self, u: &Vector2<f64>) -> Result<f64, MeasureError> {
        let ctx = self.ctx;
        let kf = &ctx.map.keyframes[ctx.kf];
        let z = self.depth(u)?;
        let p_ref = self.r_rc * backproject(u, z)? + self.t_rc;
        let u_ref = project(&p_ref)?;
        let pixel = kf.intrinsics.to_pixel(&u_ref);
        Ok(ctx.map.sample_log_intensity(ctx.kf, &pixel)?)
    }
}

/// Depth of the map surface along the event ray `u`, in the event-camera
/// frame, found by fixed-point iteration against the reference depth map.
///
/// Starts from the mean scene depth; each round transfers `u` into the
/// reference image with the current estimate, reads the reference depth
/// there, and maps that surface point back into the event-camera frame.
pub fn lookup_depth(
    ctx: &MeasurementContext,
    u: &Vector2<f64>,
    camera_pose: &Pose,
) -> Result<f64, MeasureError> {
    TransferSampler::new(ctx, camera_pose).depth(u)
}

/// Transfer the event ray under `pose` and sample the reference log
/// intensity at the transferred point.
fn sample_transferred(
    ctx: &MeasurementContext,
    u: &Vector2<f64>,
    pose: &Pose,
) -> Result<f64, MeasureError> {
    TransferSampler::new(ctx, pose).log_intensity(u)
}

/// Pose at the previous event time, interpolated between the bracketing
/// poses of the reduced state.
fn past_pose(state: &ReducedState, t_query: f64) -> Result<Pose, MeasureError> {
    interpolate_pose(&state.xi_i, state.t_i, &state.xi_j, state.t_j, t_query)
        .map_err(MeasureError::from)
}

/// Predicted contrast: the log-intensity difference on the reference image
/// between the event's transfer at its own time and at the time of the
/// previous event at the same pixel.
pub fn predicted_contrast(
    ctx: &MeasurementContext,
    event: &Event,
    state: &ReducedState,
    timestamps: &TimestampMap,
) -> Result<f64, MeasureError> {
    let last = timestamps
        .last_time(event.x, event.y)
        .ok_or(MeasureError::NoPriorEvent)?;
    let u = ctx
        .sensor
        .calibrate(&Vector2::new(event.x as f64, event.y as f64));
    let l_now = sample_transferred(ctx, &u, &state.xi_c)?;
    let prev = past_pose(state, last)?;
    let l_prev = sample_transferred(ctx, &u, &prev)?;
    Ok(l_now - l_prev)
}

/// Dimensionless measurement residual `M = contrast / threshold - 1`, with
/// the threshold signed by the event polarity. Zero for an ideal event.
pub fn measurement(
    ctx: &MeasurementContext,
    event: &Event,
    state: &ReducedState,
    timestamps: &TimestampMap,
) -> Result<f64, MeasureError> {
    let contrast = predicted_contrast(ctx, event, state, timestamps)?;
    let c = ctx.signed_threshold(state.c, event.polarity);
    Ok(contrast / c - 1.0)
}

/// Apply an increment in normalized local coordinates to a pose:
/// translation in units of `trans_scale` meters, rotation as a body-frame
/// rotation vector in radians.
pub fn perturb_pose(pose: &Pose, delta: &SVector<f64, 6>, trans_scale: f64) -> Pose {
    let d_trans = nalgebra::Vector3::new(delta[0], delta[1], delta[2]) * trans_scale;
    let d_rot = nalgebra::Vector3::new(delta[3], delta[4], delta[5]);
    Pose {
        rotation: pose.rotation * nalgebra::UnitQuaternion::from_scaled_axis(d_rot),
        translation: pose.translation + d_trans,
    }
}

fn perturb_coord(pose: &Pose, coord: usize, delta: f64, trans_scale: f64) -> Pose {
    let mut d = SVector::<f64, 6>::zeros();
    d[coord] = delta;
    perturb_pose(pose, &d, trans_scale)
}

/// Predicted measurement and its gradient at the given state.
///
/// Pose coordinates are differentiated with central differences at
/// `ctx.fd_step` (normalized units); the threshold coordinate is analytic.
/// The current-pose block only moves the event-time sample and the
/// bracketing-pose blocks only move the previous-time sample, so each probe
/// re-evaluates a single transfer.
pub fn linearize(
    ctx: &MeasurementContext,
    event: &Event,
    state: &ReducedState,
    timestamps: &TimestampMap,
) -> Result<LinearizedMeasurement, MeasureError> {
    let last = timestamps
        .last_time(event.x, event.y)
        .ok_or(MeasureError::NoPriorEvent)?;
    let u = ctx
        .sensor
        .calibrate(&Vector2::new(event.x as f64, event.y as f64));
    let scale = ctx.map.mean_scene_depth;
    let h = ctx.fd_step;
    let c = ctx.signed_threshold(state.c, event.polarity);

    let l_now = sample_transferred(ctx, &u, &state.xi_c)?;
    let l_prev = sample_transferred(ctx, &u, &past_pose(state, last)?)?;
    let contrast = l_now - l_prev;
    let m0 = contrast / c - 1.0;

    let mut jac = StateVector::zeros();

    for k in 0..6 {
        let plus = sample_transferred(ctx, &u, &perturb_coord(&state.xi_c, k, h, scale))?;
        let minus = sample_transferred(ctx, &u, &perturb_coord(&state.xi_c, k, -h, scale))?;
        jac[XI_C + k] = (plus - minus) / (2.0 * h * c);
    }
    for k in 0..6 {
        let pose_p = interpolate_pose(
            &perturb_coord(&state.xi_i, k, h, scale),
            state.t_i,
            &state.xi_j,
            state.t_j,
            last,
        )?;
        let pose_m = interpolate_pose(
            &perturb_coord(&state.xi_i, k, -h, scale),
            state.t_i,
            &state.xi_j,
            state.t_j,
            last,
        )?;
        let plus = sample_transferred(ctx, &u, &pose_p)?;
        let minus = sample_transferred(ctx, &u, &pose_m)?;
        // M depends on the previous sample with a negative sign
        jac[XI_I + k] = -(plus - minus) / (2.0 * h * c);
    }
    for k in 0..6 {
        let pose_p = interpolate_pose(
            &state.xi_i,
            state.t_i,
            &perturb_coord(&state.xi_j, k, h, scale),
            state.t_j,
            last,
        )?;
        let pose_m = interpolate_pose(
            &state.xi_i,
            state.t_i,
            &perturb_coord(&state.xi_j, k, -h, scale),
            state.t_j,
            last,
        )?;
        let plus = sample_transferred(ctx, &u, &pose_p)?;
        let minus = sample_transferred(ctx, &u, &pose_m)?;
        jac[XI_J + k] = -(plus - minus) / (2.0 * h * c);
    }

    // d/dC of contrast/(p*C) - 1 over the positive threshold magnitude
    let c_mag = state.c.abs().max(ctx.c_min_floor);
    let p_sign = if event.polarity >= 0 { 1.0 } else { -1.0 };
    jac[C_IDX] = -p_sign * contrast / (c_mag * c_mag);

    if !m0.is_finite() || jac.iter().any(|v| !v.is_finite()) {
        return Err(MeasureError::NonFinite);
    }
    Ok(LinearizedMeasurement { m0, jac })
}

/// Normal-uniform mixture density of a residual.
pub fn mixture_density(m: f64, mp: &MixtureParams) -> f64 {
    let s2 = mp.sigma_m * mp.sigma_m;
    let gauss = (-0.5 * m * m / s2).exp() / (mp.sigma_m * (2.0 * std::f64::consts::PI).sqrt());
    let uniform = if m >= mp.m_min && m <= mp.m_max {
        mp.uniform_density()
    } else {
        0.0
    };
    mp.pi_m * gauss + (1.0 - mp.pi_m) * uniform
}

/// Decompose the linearized mixture likelihood into its two
/// exponential-family terms (Gaussian inlier term, uniform outlier term).
///
/// The outlier term's log-normalizer is `log(m_max - m_min)`, the value that
/// makes `exp(eta . T - A)` reproduce the uniform component exactly.
pub fn exp_family_terms(
    lin: &LinearizedMeasurement,
    mp: &MixtureParams,
) -> (ExpFamilyTerm, ExpFamilyTerm) {
    let jac = lin.jac;
    let gaussian = ExpFamilyTerm {
        quad: -0.5 * jac * jac.transpose(),
        lin: -lin.m0 * jac,
        inv_var: -0.5 * lin.m0 * lin.m0,
        log_sigma: -1.0,
        log_pi: 1.0,
        log_one_minus_pi: 0.0,
        log_normalizer: (2.0 * std::f64::consts::PI).sqrt().ln(),
    };
    let uniform = ExpFamilyTerm {
        quad: StateMatrix::zeros(),
        lin: StateVector::zeros(),
        inv_var: 0.0,
        log_sigma: 0.0,
        log_pi: 0.0,
        log_one_minus_pi: 1.0,
        log_normalizer: (mp.m_max - mp.m_min).ln(),
    };
    (gaussian, uniform)
}
