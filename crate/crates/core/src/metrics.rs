//! Trajectory error metrics: per-sample position and orientation errors of
//! an estimated trajectory against ground truth, with RMS/mean/std
//! summaries.

use thiserror::Error;

use crate::geometry::{geodesic_angle_deg, interpolate_pose, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("estimate and ground truth have no overlapping time range")]
    NoOverlap,
}

/// Population (1/N) summary statistics; `rms^2 = mean^2 + std^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rms: f64,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    pub fn of(values: &[f64]) -> ErrorStats {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ms = values.iter().map(|v| v * v).sum::<f64>() / n;
        ErrorStats {
            rms: ms.sqrt(),
            mean,
            std: (ms - mean * mean).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryError {
    /// Timestamps of the compared samples (estimate timestamps that fall
    /// inside the ground-truth range).
    pub timestamps: Vec<f64>,
    /// Euclidean position error, meters.
    pub position_m: Vec<f64>,
    /// Position error as percent of the mean scene depth.
    pub position_pct: Vec<f64>,
    /// Geodesic orientation error, degrees.
    pub orientation_deg: Vec<f64>,
    pub position_m_stats: ErrorStats,
    pub position_pct_stats: ErrorStats,
    pub orientation_stats: ErrorStats,
}

/// Compare an estimated trajectory against ground truth.
///
/// Ground truth is interpolated at the estimate timestamps (the estimate
/// stream is the denser one); estimate samples outside the ground-truth
/// range are dropped. No alignment transform is applied: both trajectories
/// live in the map frame.
pub fn align_and_compare(
    est: &[(f64, Pose)],
    gt: &[(f64, Pose)],
    mean_depth: f64,
) -> Result<TrajectoryError, MetricsError> {
    if est.is_empty() || gt.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let t_min = gt[0].0;
    let t_max = gt[gt.len() - 1].0;

    let compare_one = |&(t, ref pose): &(f64, Pose)| -> Option<(f64, f64, f64)> {
        if t < t_min || t > t_max {
            return None;
        }
        // last gt sample with timestamp <= t
        let idx = gt.partition_point(|&(gt_t, _)| gt_t <= t).saturating_sub(1);
        let reference = if idx + 1 < gt.len() {
            let (ta, pa) = gt[idx];
            let (tb, pb) = gt[idx + 1];
            interpolate_pose(&pa, ta, &pb, tb, t).expect("gt timestamps increase")
        } else {
            gt[idx].1
        };
        let pos = (pose.translation - reference.translation).norm();
        let ang = geodesic_angle_deg(&pose.rotation, &reference.rotation);
        Some((t, pos, ang))
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<(f64, f64, f64)> = {
        use rayon::prelude::*;
        est.par_iter().filter_map(compare_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<(f64, f64, f64)> = est.iter().filter_map(compare_one).collect();

    if rows.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let timestamps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let position_m: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let position_pct: Vec<f64> = rows.iter().map(|r| r.1 / mean_depth * 100.0).collect();
    let orientation_deg: Vec<f64> = rows.iter().map(|r| r.2).collect();

    Ok(TrajectoryError {
        position_m_stats: ErrorStats::of(&position_m),
        position_pct_stats: ErrorStats::of(&position_pct),
        orientation_stats: ErrorStats::of(&orientation_deg),
        timestamps,
        position_m,
        position_pct,
        orientation_deg,
    })
}
