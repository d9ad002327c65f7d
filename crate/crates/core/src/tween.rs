//! Keyframe tweening by distance-field blending.
//!
//! Each keyframe is turned into an exact Euclidean distance field. An
//! in-between frame blends the fields of its two neighbouring keyframes and
//! keeps the pixels whose blended distance falls inside a small band.
//!
//! A plain pointwise blend of two disjoint thin shapes has its minimum at
//! roughly half their separation, so nothing survives a narrow band and the
//! weighted minimum snaps to whichever keyframe is closer. With
//! [`Alignment::Centroid`] both fields are first translated toward the
//! interpolated stroke centroid, so translation is carried by the shift and
//! the blend only has to morph the shape difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{contact_strip, BinaryRaster};
use crate::sketch::{KeyframeSketch, SketchSequence};

/// Default extraction band in pixels.
pub const DEFAULT_BAND: f64 = 1.0;

/// Stands in for "no stroke in this column" during the separable transform.
const FAR: f64 = 1e20;

/// Per-pixel Euclidean distance (in pixels) to the nearest stroke pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} field",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Samples the field at a real-valued `(x, y)` position. Inside the grid
    /// this is bilinear; outside, the nearest border sample plus the distance
    /// to it.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let cx = x.clamp(0.0, max_x);
        let cy = y.clamp(0.0, max_y);
        let outside = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();

        let x0 = cx.floor();
        let y0 = cy.floor();
        let fx = cx - x0;
        let fy = cy - y0;
        let (c0, r0) = (x0 as usize, y0 as usize);
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
        let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
        top * (1.0 - fy) + bottom * fy + outside
    }

    /// Moves the field's content by `(dx, dy)` pixels.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        if dx == 0.0 && dy == 0.0 {
            return self.clone();
        }
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.height {
            for c in 0..self.width {
                values.push(self.sample(c as f64 - dx, r as f64 - dy));
            }
        }
        Self {
            height: self.height,
            width: self.width,
            values,
        }
    }
}

/// Exact Euclidean distance transform (separable lower-envelope algorithm of
/// Felzenszwalb and Huttenlocher). Squared distances are integers, so the
/// result matches a brute-force search exactly.
pub fn distance_transform(sketch: &KeyframeSketch) -> Result<DistanceField> {
    distance_transform_raster(sketch.grid())
}

pub fn distance_transform_raster(grid: &BinaryRaster) -> Result<DistanceField> {
    if grid.is_empty() {
        return Err(Error::EmptySketch);
    }
    let (h, w) = grid.resolution();
    let mut sq: Vec<f64> = grid
        .cells()
        .iter()
        .map(|&c| if c != 0 { 0.0 } else { FAR })
        .collect();

    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..w {
        for r in 0..h {
            f[r] = sq[r * w + c];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            sq[r * w + c] = d[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&sq[r * w..(r + 1) * w]);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        sq[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }

    Ok(DistanceField {
        height: h,
        width: w,
        values: sq.into_iter().map(f64::sqrt).collect(),
    })
}

/// 1-D squared distance transform: `d[q] = min_p (q - p)² + f[p]`.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = intersection(f, v[k], q);
        while s <= z[k] {
            k -= 1;
            s = intersection(f, v[k], q);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        *out = (qf - p as f64).powi(2) + f[p];
    }
}

/// Abscissa where the parabolas rooted at `p` and `q` cross.
#[inline]
fn intersection(f: &[f64], p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
}

/// Pointwise `(1 − alpha)·a + alpha·b`.
pub fn blend_fields(a: &DistanceField, b: &DistanceField, alpha: f64) -> Result<DistanceField> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    blend_weighted(a, b, 1.0 - alpha, alpha)
}

fn blend_weighted(a: &DistanceField, b: &DistanceField, wa: f64, wb: f64) -> Result<DistanceField> {
    if a.resolution() != b.resolution() {
        return Err(Error::ResolutionMismatch {
            expected: a.resolution(),
            found: b.resolution(),
        });
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| wa * x + wb * y)
        .collect();
    Ok(DistanceField {
        height: a.height,
        width: a.width,
        values,
    })
}

/// Keeps every pixel whose field value is at most `band`.
pub fn extract_sketch(field: &DistanceField, band: f64) -> Result<BinaryRaster> {
    check_band(band)?;
    let cells = field.values.iter().map(|&v| u8::from(v <= band)).collect();
    let raster = BinaryRaster::from_cells(field.height, field.width, cells)?;
    if raster.is_empty() {
        return Err(Error::EmptyResult { frame: None });
    }
    Ok(raster)
}

fn check_band(band: f64) -> Result<()> {
    if band.is_finite() && band >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidBand(band))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Translate both fields toward the interpolated stroke centroid before blending.
    #[default]
    Centroid,
    /// Blend the fields in place.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TweenOptions {
    pub band: f64,
    pub alignment: Alignment,
}

impl Default for TweenOptions {
    fn default() -> Self {
        Self {
            band: DEFAULT_BAND,
            alignment: Alignment::Centroid,
        }
    }
}

/// One binary control image per output frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlSequence {
    frames: Vec<BinaryRaster>,
}

impl ControlSequence {
    pub fn new(frames: Vec<BinaryRaster>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyKeyframes)?;
        let res = first.resolution();
        for (i, f) in frames.iter().enumerate() {
            if f.resolution() != res {
                return Err(Error::ResolutionMismatch {
                    expected: res,
                    found: f.resolution(),
                }
                .at_frame(i));
            }
            if f.is_empty() {
                return Err(Error::EmptyResult { frame: Some(i) });
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[BinaryRaster] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.frames[0].resolution()
    }

    /// Stroke centroid `(column, row)` of every frame.
    pub fn centroids(&self) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|f| f.centroid().expect("control frames are non-empty"))
            .collect()
    }

    pub fn contact_strip(&self) -> Result<image::GrayImage> {
        contact_strip(&self.frames)
    }
}

/// Produces one control frame per output frame with default alignment.
pub fn interpolate_sequence(seq: &SketchSequence, band: f64) -> Result<ControlSequence> {
    interpolate_sequence_with(
        seq,
        &TweenOptions {
            band,
            ..TweenOptions::default()
        },
    )
}

/// Keyframe indices reproduce their sketch bit-exactly; frames before the
/// first or after the last keyframe hold it; frame `k` between keyframes `i`
/// and `j` is extracted from the blend with weight `(k − i)/(j − i)` on `j`.
pub fn interpolate_sequence_with(seq: &SketchSequence, opts: &TweenOptions) -> Result<ControlSequence> {
    check_band(opts.band)?;
    let keys = seq.keyframes();
    let fields: Vec<DistanceField> = keys.iter().map(distance_transform).collect::<Result<_>>()?;
    let centroids: Vec<(f64, f64)> = keys
        .iter()
        .map(|k| k.grid().centroid().expect("validated keyframes are non-empty"))
        .collect();

    let frame_at = |k: usize| -> Result<BinaryRaster> {
        let next = keys.partition_point(|kf| kf.frame_index() <= k);
        if next == 0 {
            return Ok(keys[0].grid().clone());
        }
        let prev = next - 1;
        if keys[prev].frame_index() == k || next == keys.len() {
            return Ok(keys[prev].grid().clone());
        }
        tween_between(
            (&keys[prev], &fields[prev], centroids[prev]),
            (&keys[next], &fields[next], centroids[next]),
            k,
            opts,
        )
        .map_err(|e| match e {
            Error::EmptyResult { .. } => Error::EmptyResult { frame: Some(k) },
            other => other.at_frame(k),
        })
    };

    let total = seq.total_frames();
    #[cfg(feature = "parallel")]
    let frames: Result<Vec<BinaryRaster>> = {
        use rayon::prelude::*;
        (0..total).into_par_iter().map(frame_at).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let frames: Result<Vec<BinaryRaster>> = (0..total).map(frame_at).collect();

    Ok(ControlSequence { frames: frames? })
}

fn tween_between(
    (ka, fa, ca): (&KeyframeSketch, &DistanceField, (f64, f64)),
    (kb, fb, cb): (&KeyframeSketch, &DistanceField, (f64, f64)),
    k: usize,
    opts: &TweenOptions,
) -> Result<BinaryRaster> {
    let (i, j) = (ka.frame_index(), kb.frame_index());
    let span = (j - i) as f64;
    // Weights are formed from integer ratios so that reversing the keyframe
    // order gives bit-identical frames.
    let wa = (j - k) as f64 / span;
    let wb = (k - i) as f64 / span;
    let blended = match opts.alignment {
        Alignment::None => blend_weighted(fa, fb, wa, wb)?,
        Alignment::Centroid => {
            let (dx, dy) = (cb.0 - ca.0, cb.1 - ca.1);
            let sa = fa.translated(wb * dx, wb * dy);
            let sb = fb.translated(-(wa * dx), -(wa * dy));
            blend_weighted(&sa, &sb, wa, wb)?
        }
    };
    extract_sketch(&blended, opts.band)
}
