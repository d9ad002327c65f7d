//! WebAssembly bindings behind `www/index.html`.
//!
//! Three operations, each returning an RGBA image for a canvas:
//! tweening drawn keyframes into a contact strip, visualising a keyframe's
//! distance field, and previewing the motion-warped initial latents.

use wasm_bindgen::prelude::*;

use stf_core::latent::{apply_motion, sample_base_latent, MotionParams};
use stf_core::request::KeyframeDoc;
use stf_core::sketch::{rasterize_stroke_set, validate_sequence, KeyframeSketch, Stroke};
use stf_core::tween::{distance_transform_raster, interpolate_sequence_with, Alignment, TweenOptions};

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Image {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    note: String,
}

#[wasm_bindgen]
impl Image {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Row-major RGBA bytes, ready for `ImageData`.
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// One-line summary for display.
    #[wasm_bindgen(getter)]
    pub fn note(&self) -> String {
        self.note.clone()
    }
}

impl Image {
    fn from_fn(width: usize, height: usize, note: String, mut pixel: impl FnMut(usize, usize) -> [u8; 4]) -> Self {
        let mut rgba = Vec::with_capacity(width * height * 4);
        for r in 0..height {
            for c in 0..width {
                rgba.extend_from_slice(&pixel(r, c));
            }
        }
        Self {
            width: width as u32,
            height: height as u32,
            rgba,
            note,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 4] {
        let i = (row * self.width as usize + col) * 4;
        self.rgba[i..i + 4].try_into().unwrap()
    }
}

const INK: [u8; 4] = [240, 240, 240, 255];
const PAPER: [u8; 4] = [20, 22, 28, 255];

/// Tweens keyframes given as `[{"frame_index": 0, "strokes": [...]}, ...]`
/// into a horizontal strip of `total_frames` tiles.
pub fn tween(keyframes_json: &str, total_frames: usize, height: usize, width: usize, band: f64, align: bool) -> Result<Image, String> {
    let docs: Vec<KeyframeDoc> = serde_json::from_str(keyframes_json).map_err(|e| format!("keyframes: {e}"))?;
    let keyframes = docs
        .iter()
        .map(|d| {
            let strokes = d.strokes.as_deref().ok_or("each keyframe needs strokes")?;
            let grid = rasterize_stroke_set(strokes, (height, width)).map_err(|e| e.to_string())?;
            KeyframeSketch::new(grid, d.frame_index).map_err(|e| format!("frame {}: {e}", d.frame_index))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let seq = validate_sequence(keyframes, total_frames).map_err(|e| e.to_string())?;
    let opts = TweenOptions {
        band,
        alignment: if align { Alignment::Centroid } else { Alignment::None },
    };
    let control = interpolate_sequence_with(&seq, &opts).map_err(|e| e.to_string())?;
    let xs: Vec<String> = control
        .centroids()
        .iter()
        .map(|&(x, _)| format!("{x:.1}"))
        .collect();
    let frames = control.frames();
    Ok(Image::from_fn(width * frames.len(), height, format!("centroid x: {}", xs.join(", ")), |r, c| {
        if frames[c / width].get(r, c % width) {
            INK
        } else {
            PAPER
        }
    }))
}

/// Distance from every pixel to the nearest stroke, as a colour ramp that
/// saturates at `max_distance` pixels. Stroke pixels are drawn white.
pub fn distance_field(strokes_json: &str, height: usize, width: usize, max_distance: f64) -> Result<Image, String> {
    let strokes: Vec<Stroke> = serde_json::from_str(strokes_json).map_err(|e| format!("strokes: {e}"))?;
    let grid = rasterize_stroke_set(&strokes, (height, width)).map_err(|e| e.to_string())?;
    let field = distance_transform_raster(&grid).map_err(|e| e.to_string())?;
    let max = field.values().iter().copied().fold(0.0, f64::max);
    let scale = max_distance.max(1.0);
    Ok(Image::from_fn(width, height, format!("farthest pixel {max:.1} px from a stroke"), |r, c| {
        let d = field.get(r, c);
        if d == 0.0 {
            return [255, 255, 255, 255];
        }
        let t = (d / scale).min(1.0);
        [(40.0 + 215.0 * t) as u8, (60.0 + 140.0 * t * t) as u8, (140.0 * (1.0 - t)) as u8, 255]
    }))
}

/// Channel 0 of the motion-warped initial latents for `frames` frames,
/// tiled horizontally. Values map from `[-2.5, 2.5]` to grey.
pub fn motion(seed: u64, frames: usize, size: usize, lambda: f64, ux: f64, uy: f64) -> Result<Image, String> {
    let params = MotionParams::new(lambda, (ux, uy)).map_err(|e| e.to_string())?;
    let base = sample_base_latent(seed, (1, size, size)).map_err(|e| e.to_string())?;
    let latents = apply_motion(&base, frames, &params).map_err(|e| e.to_string())?;
    let last = (frames.max(1) - 1) as f64 * params.lambda;
    Ok(Image::from_fn(
        size * frames,
        size,
        format!("last frame shifted {last:.2} latent px"),
        |r, c| {
            let v = latents.frames[c / size].values()[[0, r, c % size]];
            let g = ((v + 2.5) / 5.0 * 255.0).clamp(0.0, 255.0) as u8;
            [g, g, g, 255]
        },
    ))
}

#[wasm_bindgen]
pub fn tween_strip(keyframes_json: &str, total_frames: usize, height: usize, width: usize, band: f64, align: bool) -> Result<Image, JsError> {
    tween(keyframes_json, total_frames, height, width, band, align).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn distance_heatmap(strokes_json: &str, height: usize, width: usize, max_distance: f64) -> Result<Image, JsError> {
    distance_field(strokes_json, height, width, max_distance).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn motion_preview(seed: u32, frames: usize, size: usize, lambda: f64, ux: f64, uy: f64) -> Result<Image, JsError> {
    motion(seed as u64, frames, size, lambda, ux, uy).map_err(|e| JsError::new(&e))
}
