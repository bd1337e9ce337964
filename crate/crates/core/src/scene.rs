//! Synthetic benchmark scenes: a textured fronto-parallel plane and a
//! two-plane scene with a depth discontinuity. Textures are band-limited
//! sums of plane waves, smooth at the pixel scale and deterministic per
//! seed.

use std::f64::consts::PI;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::map::{Grid, PhotometricMap, ReferenceKeyframe};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Single fronto-parallel textured plane.
    Planar,
    /// Two fronto-parallel planes split down the image middle.
    TwoPlane,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planar_rocks" | "planar" => Ok(SceneKind::Planar),
            "two_plane_boxes" | "two_plane" => Ok(SceneKind::TwoPlane),
            other => Err(format!("unknown scene {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub kind: SceneKind,
    pub width: u32,
    pub height: u32,
    /// Keyframe focal length, pixels.
    pub focal: f64,
    /// Mean scene depth, meters.
    pub mean_depth: f64,
    /// Far/near depth ratio of the two-plane scene.
    pub depth_ratio: f64,
    /// Standard deviation of the log-intensity texture.
    pub texture_contrast: f64,
    /// Dominant texture wavelength, pixels.
    pub texture_scale: f64,
    pub texture_seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            kind: SceneKind::Planar,
            width: 256,
            height: 256,
            focal: 200.0,
            mean_depth: 0.6,
            depth_ratio: 2.0,
            texture_contrast: 0.25,
            texture_scale: 24.0,
            texture_seed: 7,
        }
    }
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

fn texture_waves(params: &SceneParams) -> Vec<Wave> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.texture_seed);
    (0..16)
        .map(|i| {
            let angle = rng.random_range(0.0..PI);
            let wavelength = params.texture_scale * rng.random_range(0.6..2.0);
            let k = 2.0 * PI / wavelength;
            Wave {
                kx: k * angle.cos(),
                ky: k * angle.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: 1.0 / (1.0 + 0.25 * i as f64),
            }
        })
        .collect()
}

/// Build the photometric map of a scene. The keyframe sits at the world
/// origin looking down +z; log intensity is kept at or below a headroom
/// margin so the linear image quantizes into 16 bits without clipping.
pub fn build_scene(params: &SceneParams) -> PhotometricMap {
    let (w, h) = (params.width as usize, params.height as usize);
    let waves = texture_waves(params);

    let mut field = Vec::with_capacity(w * h);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for wave in &waves {
                v += wave.amplitude * (wave.kx * x as f64 + wave.ky * y as f64 + wave.phase).sin();
            }
            field.push(v);
            sum += v;
            sum_sq += v * v;
        }
    }
    let n = (w * h) as f64;
    let mean = sum / n;
    let std = ((sum_sq / n - mean * mean).max(1e-12)).sqrt();
    let gain = params.texture_contrast / std;
    let max_dev = field
        .iter()
        .map(|v| ((v - mean) * gain).abs())
        .fold(0.0, f64::max);
    // keep log intensity <= -0.02 so exp() stays below 1.0
    let base = -0.02 - max_dev;
    let log_intensity = Grid::from_vec(
        w,
        h,
        field.iter().map(|v| base + (v - mean) * gain).collect(),
    );

    let depth = match params.kind {
        SceneKind::Planar => Grid::filled(w, h, params.mean_depth),
        SceneKind::TwoPlane => {
            let near = 2.0 * params.mean_depth / (1.0 + params.depth_ratio);
            let far = near * params.depth_ratio;
            Grid::from_fn(w, h, |x, _| if x < w / 2 { near } else { far })
        }
    };

    let intrinsics = CameraIntrinsics::centered(params.focal, params.width, params.height)
        .expect("positive scene dimensions");
    let kf = ReferenceKeyframe::new(log_intensity, depth, Pose::identity(), intrinsics)
        .expect("consistent scene grids");
    PhotometricMap::new(vec![kf]).expect("non-empty scene")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn planar_scene_statistics() {
        let params = SceneParams::default();
        let map = build_scene(&params);
        assert_relative_eq!(map.mean_scene_depth, 0.6, epsilon = 1e-12);
        let grid = &map.keyframes[0].log_intensity;
        assert!(grid.as_slice().iter().all(|v| v.is_finite() && *v < 0.0));
        // empirical contrast close to the requested one
        let n = grid.as_slice().len() as f64;
        let mean: f64 = grid.as_slice().iter().sum::<f64>() / n;
        let var: f64 = grid.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert_relative_eq!(var.sqrt(), params.texture_contrast, max_relative = 1e-6);
    }

    #[test]
    fn two_plane_scene_depths() {
        let params = SceneParams {
            kind: SceneKind::TwoPlane,
            mean_depth: 0.9,
            depth_ratio: 2.0,
            ..SceneParams::default()
        };
        let map = build_scene(&params);
        let depth = &map.keyframes[0].depth;
        assert_relative_eq!(depth.get(10, 128), 0.6, epsilon = 1e-12);
        assert_relative_eq!(depth.get(200, 128), 1.2, epsilon = 1e-12);
        assert_relative_eq!(map.mean_scene_depth, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn scenes_are_deterministic() {
        let params = SceneParams::default();
        let a = build_scene(&params);
        let b = build_scene(&params);
        for (x, y) in a.keyframes[0]
            .log_intensity
            .as_slice()
            .iter()
            .zip(b.keyframes[0].log_intensity.as_slice())
        {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
