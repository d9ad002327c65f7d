//! Initial latents and global motion dynamics.
//!
//! Every frame starts from one shared Gaussian sample. Frame `k` (1-based) is
//! that sample translated by `lambda·(k−1)·direction` latent pixels.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::tween::ControlSequence;

/// Pixel-to-latent downsampling factor per side.
pub const LATENT_SCALE: usize = 8;

/// Displacements below this many pixels are treated as "no motion".
const MIN_DISPLACEMENT_PX: f64 = 0.5;

/// Fraction of the latent width the default motion covers over the clip.
const DEFAULT_DRIFT_FRACTION: f64 = 0.125;

/// A `(channels, height, width)` latent tensor with finite entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid(Array3<f64>);

impl LatentGrid {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("latent contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Array3<f64>) -> Self {
        Self(values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Latent pixels travelled per frame step.
    pub lambda: f64,
    /// Unit vector `(ux, uy)`; `+x` is right, `+y` is down.
    pub direction: (f64, f64),
    pub enabled: bool,
}

impl MotionParams {
    pub fn disabled() -> Self {
        Self {
            lambda: 0.0,
            direction: (1.0, 0.0),
            enabled: false,
        }
    }

    /// Normalizes `direction`. A zero lambda yields disabled motion.
    pub fn new(lambda: f64, direction: (f64, f64)) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("motion lambda {lambda} must be >= 0")));
        }
        let norm = direction.0.hypot(direction.1);
        if !norm.is_finite() || norm == 0.0 {
            if lambda == 0.0 {
                return Ok(Self::disabled());
            }
            return Err(Error::InvalidConfig("motion direction must be a non-zero vector".into()));
        }
        Ok(Self {
            lambda,
            direction: (direction.0 / norm, direction.1 / norm),
            enabled: lambda > 0.0,
        })
    }
}

/// Per-frame latents; `frames[0]` is the unwarped base.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLatents {
    pub frames: Vec<LatentGrid>,
}

impl FrameLatents {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Raw debug dump: little-endian u32 header `C, h, w, N`, then every
    /// frame's values as little-endian f32 in `(c, y, x)` order.
    pub fn write_debug_dump<W: Write>(&self, mut out: W) -> Result<()> {
        let (c, h, w) = self.frames.first().map(LatentGrid::shape).unwrap_or((0, 0, 0));
        for v in [c, h, w, self.frames.len()] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for frame in &self.frames {
            for v in frame.values().iter() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// I.i.d. standard normal latent, fully determined by `seed`.
pub fn sample_base_latent(seed: u64, shape: (usize, usize, usize)) -> Result<LatentGrid> {
    if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
        return Err(Error::InvalidConfig(format!("latent shape {shape:?} has a zero dimension")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let values = Array3::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng));
    Ok(LatentGrid(values))
}

/// `lambda·(k−1)·direction` for the 1-based frame `k`.
pub fn motion_offset(frame_k: usize, params: &MotionParams) -> Result<(f64, f64)> {
    if frame_k < 1 {
        return Err(Error::InvalidFrameIndex(frame_k));
    }
    if !params.enabled {
        return Ok((0.0, 0.0));
    }
    let step = params.lambda * (frame_k - 1) as f64;
    Ok((step * params.direction.0, step * params.direction.1))
}

/// Translates the content by `(dx, dy)`: `out(x, y) = in(x − dx, y − dy)`,
/// bilinear, with coordinates clamped to the border.
pub fn warp(latent: &LatentGrid, offset: (f64, f64)) -> LatentGrid {
    let (dx, dy) = offset;
    if dx == 0.0 && dy == 0.0 {
        return latent.clone();
    }
    let src = latent.values();
    let (channels, h, w) = src.dim();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let mut out = Array3::zeros((channels, h, w));
    for y in 0..h {
        let sy = (y as f64 - dy).clamp(0.0, max_y);
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0 = y0 as usize;
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..w {
            let sx = (x as f64 - dx).clamp(0.0, max_x);
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0 = x0 as usize;
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..channels {
                let top = src[[c, y0, x0]] * (1.0 - fx) + src[[c, y0, x1]] * fx;
                let bottom = src[[c, y1, x0]] * (1.0 - fx) + src[[c, y1, x1]] * fx;
                out[[c, y, x]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    LatentGrid(out)
}

pub fn apply_motion(base: &LatentGrid, total_frames: usize, params: &MotionParams) -> Result<FrameLatents> {
    if total_frames == 0 {
        return Err(Error::InvalidFrameCount);
    }
    let frames = (1..=total_frames)
        .map(|k| motion_offset(k, params).map(|off| warp(base, off)))
        .collect::<Result<_>>()?;
    Ok(FrameLatents { frames })
}

/// Motion default derived from the sketches: direction of the stroke
/// centroid displacement between first and last control frame, with a speed
/// that drifts 12.5% of the latent width over the whole clip.
pub fn infer_direction(control: &ControlSequence) -> MotionParams {
    let centroids = control.centroids();
    let (first, last) = (centroids[0], centroids[centroids.len() - 1]);
    let (dx, dy) = (last.0 - first.0, last.1 - first.1);
    let displacement = dx.hypot(dy);
    if displacement < MIN_DISPLACEMENT_PX || control.len() < 2 {
        return MotionParams::disabled();
    }
    let latent_width = (control.resolution().1 / LATENT_SCALE).max(1) as f64;
    let lambda = DEFAULT_DRIFT_FRACTION * latent_width / (control.len() - 1) as f64;
    MotionParams {
        lambda,
        direction: (dx / displacement, dy / displacement),
        enabled: true,
    }
}
