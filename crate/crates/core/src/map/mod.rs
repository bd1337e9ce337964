//! The photometric depth map: reference log-intensity images, depth maps,
//! and poses, with sub-pixel bilinear queries.
//!
//! Depth holes are first class: invalid pixels are stored as NaN and any
//! query touching one fails with [`MapError::InvalidDepth`], so the caller
//! can discard the measurement.
//!
//! On-disk layout of a map directory:
//!   - `poses.txt` — one line per keyframe: `id tx ty tz qx qy qz qw`
//!   - `intrinsics.txt` — one line per keyframe: `id fx fy cx cy`
//!   - `intensity_NNN.pgm` — binary P5 grayscale, linear intensity
//!   - `depth_NNN.pfm` — grayscale little-endian float meters; values <= 0
//!     or non-finite are holes

mod pfm;
mod pgm;

use std::path::Path;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{geodesic_angle_deg, CameraIntrinsics, Pose};

pub use pfm::{read_pfm, write_pfm, PfmImage};
pub use pgm::{read_pgm, write_pgm, PgmImage};

/// Fraction of the per-image maximum below which linear intensities are
/// clamped before taking the log, so log intensity stays finite.
pub const INTENSITY_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("sample point ({x:.3}, {y:.3}) outside valid image region")]
    OutOfBounds { x: f64, y: f64 },
    #[error("depth hole at sample point ({x:.3}, {y:.3})")]
    InvalidDepth { x: f64, y: f64 },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("map has no keyframes")]
    Empty,
}

/// Row-major scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Valid region for bilinear sampling: image bounds minus a 1-pixel
    /// border.
    #[inline]
    pub fn in_sample_bounds(&self, x: f64, y: f64) -> bool {
        x >= 1.0 && y >= 1.0 && x <= (self.width - 2) as f64 && y <= (self.height - 2) as f64
    }

    /// Bilinear interpolation at (x, y). Caller must have checked bounds.
    #[inline]
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let i = y0 * self.width + x0;
        let v00 = self.data[i];
        let v10 = self.data[i + 1];
        let v01 = self.data[i + self.width];
        let v11 = self.data[i + self.width + 1];
        let top = v00 + (v10 - v00) * fx;
        let bot = v01 + (v11 - v01) * fx;
        top + (bot - top) * fy
    }

    /// The four cell corners used by bilinear sampling at (x, y).
    #[inline]
    fn cell(&self, x: f64, y: f64) -> [f64; 4] {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let i = y0 * self.width + x0;
        [
            self.data[i],
            self.data[i + 1],
            self.data[i + self.width],
            self.data[i + self.width + 1],
        ]
    }
}

/// One reference view: log intensity, depth in the reference camera frame,
/// world-from-camera pose, and intrinsics.
#[derive(Debug, Clone)]
pub struct ReferenceKeyframe {
    pub log_intensity: Grid,
    /// Meters; NaN marks a hole.
    pub depth: Grid,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl ReferenceKeyframe {
    pub fn new(
        log_intensity: Grid,
        depth: Grid,
        pose: Pose,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, MapError> {
        if log_intensity.width != depth.width || log_intensity.height != depth.height {
            return Err(MapError::DimensionMismatch(format!(
                "intensity {}x{} vs depth {}x{}",
                log_intensity.width, log_intensity.height, depth.width, depth.height
            )));
        }
        if log_intensity.width != intrinsics.width as usize
            || log_intensity.height != intrinsics.height as usize
        {
            return Err(MapError::DimensionMismatch(format!(
                "grids {}x{} vs intrinsics {}x{}",
                log_intensity.width, log_intensity.height, intrinsics.width, intrinsics.height
            )));
        }
        if log_intensity.data.iter().any(|v| !v.is_finite()) {
            return Err(MapError::DimensionMismatch(
                "log intensity contains non-finite values".into(),
            ));
        }
        Ok(ReferenceKeyframe {
            log_intensity,
            depth,
            pose,
            intrinsics,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PhotometricMap {
    pub keyframes: Vec<ReferenceKeyframe>,
    /// Mean of the valid depths of the first keyframe, meters. Used for
    /// error normalization and for scaling pose translation coordinates.
    pub mean_scene_depth: f64,
}

impl PhotometricMap {
    pub fn new(keyframes: Vec<ReferenceKeyframe>) -> Result<Self, MapError> {
        if keyframes.is_empty() {
            return Err(MapError::Empty);
        }
        let first = &keyframes[0];
        let (sum, n) = first
            .depth
            .as_slice()
            .iter()
            .filter(|d| d.is_finite() && **d > 0.0)
            .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
        if n == 0 {
            return Err(MapError::DimensionMismatch(
                "first keyframe has no valid depths".into(),
            ));
        }
        Ok(PhotometricMap {
            keyframes,
            mean_scene_depth: sum / n as f64,
        })
    }

    /// Bilinear log intensity at sub-pixel coordinates `u` (pixels).
    pub fn sample_log_intensity(&self, kf: usize, u: &Vector2<f64>) -> Result<f64, MapError> {
        let grid = &self.keyframes[kf].log_intensity;
        if !grid.in_sample_bounds(u.x, u.y) {
            return Err(MapError::OutOfBounds { x: u.x, y: u.y });
        }
        Ok(grid.bilinear(u.x, u.y))
    }

    /// Bilinear depth at sub-pixel coordinates `u` (pixels). Fails if any of
    /// the four neighbors is a hole.
    pub fn sample_depth(&self, kf: usize, u: &Vector2<f64>) -> Result<f64, MapError> {
        let grid = &self.keyframes[kf].depth;
        if !grid.in_sample_bounds(u.x, u.y) {
            return Err(MapError::OutOfBounds { x: u.x, y: u.y });
        }
        let corners = grid.cell(u.x, u.y);
        if corners.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(MapError::InvalidDepth { x: u.x, y: u.y });
        }
        Ok(grid.bilinear(u.x, u.y))
    }

    /// Keyframe whose pose is closest to `camera_pose` under the combined
    /// score: translation distance / mean scene depth + geodesic angle in
    /// radians.
    pub fn select_reference(&self, camera_pose: &Pose) -> usize {
        let mut best = 0;
        let mut best_score = f64::INFINITY;
        for (i, kf) in self.keyframes.iter().enumerate() {
            let dist = (kf.pose.translation - camera_pose.translation).norm();
            let angle = geodesic_angle_deg(&kf.pose.rotation, &camera_pose.rotation).to_radians();
            let score = dist / self.mean_scene_depth + angle;
            if score < best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> MapError {
    MapError::Parse {
        path: path.display().to_string(),
        message: msg.into(),
    }
}

fn read_keyed_lines(path: &Path, fields: usize) -> Result<Vec<(usize, Vec<f64>)>, MapError> {
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, e.to_string()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| parse_err(path, format!("line {}: bad keyframe id", lineno + 1)))?;
        let values: Result<Vec<f64>, _> = parts.map(str::parse).collect();
        let values =
            values.map_err(|_| parse_err(path, format!("line {}: bad number", lineno + 1)))?;
        if values.len() != fields {
            return Err(parse_err(
                path,
                format!("line {}: expected {} values, got {}", lineno + 1, fields, values.len()),
            ));
        }
        out.push((id, values));
    }
    Ok(out)
}

/// Load a map directory (see the module docs for the layout).
pub fn load_map(dir: &Path) -> Result<PhotometricMap, MapError> {
    let poses = read_keyed_lines(&dir.join("poses.txt"), 7)?;
    if poses.is_empty() {
        return Err(MapError::Empty);
    }
    let intrinsics_lines = read_keyed_lines(&dir.join("intrinsics.txt"), 4)?;

    let mut keyframes = Vec::with_capacity(poses.len());
    for (id, v) in &poses {
        let q_norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (q_norm - 1.0).abs() > 1e-3 {
            return Err(parse_err(
                &dir.join("poses.txt"),
                format!("keyframe {id}: quaternion norm {q_norm} too far from 1"),
            ));
        }
        let pose = Pose::from_tq([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]]);

        let ka = intrinsics_lines
            .iter()
            .find(|(kid, _)| kid == id)
            .ok_or_else(|| {
                parse_err(
                    &dir.join("intrinsics.txt"),
                    format!("missing intrinsics for keyframe {id}"),
                )
            })?;

        let pgm = read_pgm(&dir.join(format!("intensity_{id:03}.pgm")))?;
        let pfm = read_pfm(&dir.join(format!("depth_{id:03}.pfm")))?;
        if pgm.width != pfm.width || pgm.height != pfm.height {
            return Err(MapError::DimensionMismatch(format!(
                "keyframe {id}: intensity {}x{} vs depth {}x{}",
                pgm.width, pgm.height, pfm.width, pfm.height
            )));
        }

        let intrinsics = CameraIntrinsics::new(
            ka.1[0],
            ka.1[1],
            ka.1[2],
            ka.1[3],
            pgm.width as u32,
            pgm.height as u32,
        )
        .map_err(|e| parse_err(&dir.join("intrinsics.txt"), e.to_string()))?;

        let maxval = pgm.maxval as f64;
        let max_linear = pgm.samples.iter().copied().max().unwrap_or(0) as f64 / maxval;
        let floor = (max_linear * INTENSITY_FLOOR_FRACTION).max(f64::MIN_POSITIVE);
        let log_intensity = Grid::from_vec(
            pgm.width,
            pgm.height,
            pgm.samples
                .iter()
                .map(|&s| (s as f64 / maxval).max(floor).ln())
                .collect(),
        );
        let depth = Grid::from_vec(
            pfm.width,
            pfm.height,
            pfm.samples
                .iter()
                .map(|&d| {
                    let d = d as f64;
                    if d.is_finite() && d > 0.0 {
                        d
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        );

        keyframes.push(ReferenceKeyframe::new(log_intensity, depth, pose, intrinsics)?);
    }

    PhotometricMap::new(keyframes)
}

/// Write a map directory in the format `load_map` reads. Intensities are
/// re-linearized (exp) and quantized to 16-bit; for maps whose pixels sit
/// above the intensity floor the grid round-trips bit for bit.
pub fn save_map(dir: &Path, map: &PhotometricMap) -> Result<(), MapError> {
    std::fs::create_dir_all(dir).map_err(|e| parse_err(dir, e.to_string()))?;
    let mut poses = String::new();
    let mut intr = String::new();
    for (id, kf) in map.keyframes.iter().enumerate() {
        let t = kf.pose.translation;
        let q = kf.pose.rotation.quaternion();
        poses.push_str(&format!(
            "{id} {} {} {} {} {} {} {}\n",
            t.x, t.y, t.z, q.i, q.j, q.k, q.w
        ));
        intr.push_str(&format!(
            "{id} {} {} {} {}\n",
            kf.intrinsics.fx, kf.intrinsics.fy, kf.intrinsics.cx, kf.intrinsics.cy
        ));

        let maxval = 65535u16;
        let samples: Vec<u16> = kf
            .log_intensity
            .as_slice()
            .iter()
            .map(|&l| (l.exp() * maxval as f64).round().clamp(0.0, maxval as f64) as u16)
            .collect();
        write_pgm(
            &dir.join(format!("intensity_{id:03}.pgm")),
            &PgmImage {
                width: kf.log_intensity.width(),
                height: kf.log_intensity.height(),
                maxval,
                samples,
            },
        )?;

        let depth_samples: Vec<f32> = kf
            .depth
            .as_slice()
            .iter()
            .map(|&d| if d.is_finite() { d as f32 } else { 0.0 })
            .collect();
        write_pfm(
            &dir.join(format!("depth_{id:03}.pfm")),
            &PfmImage {
                width: kf.depth.width(),
                height: kf.depth.height(),
                samples: depth_samples,
            },
        )?;
    }
    std::fs::write(dir.join("poses.txt"), poses)
        .map_err(|e| parse_err(&dir.join("poses.txt"), e.to_string()))?;
    std::fs::write(dir.join("intrinsics.txt"), intr)
        .map_err(|e| parse_err(&dir.join("intrinsics.txt"), e.to_string()))?;
    Ok(())
}
