//! Binary rasters: the canonical storage for sketches and control frames.

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use std::io::Cursor;

use crate::error::{Error, Result};

/// A row-major `height × width` grid whose cells are exactly 0 or 1
/// (1 = stroke).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryRaster {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryRaster {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Builds a raster from cell values; any non-zero value becomes 1.
    pub fn from_cells(height: usize, width: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} cells for a {height}x{width} raster",
                cells.len()
            )));
        }
        let data = cells.into_iter().map(|c| u8::from(c != 0)).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(u8::from(f(r, c)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, stroke: bool) {
        self.data[row * self.width + col] = u8::from(stroke);
    }

    pub fn stroke_count(&self) -> usize {
        self.data.iter().filter(|&&c| c != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.stroke_count() == 0
    }

    /// Iterates over `(row, col)` of every stroke pixel.
    pub fn strokes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(move |(i, _)| (i / w, i % w))
    }

    /// Mean `(column, row)` of the stroke pixels, or `None` for an empty raster.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (r, c) in self.strokes() {
            sx += c as f64;
            sy += r as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Intersection-over-union of the stroke sets. Two empty rasters have IoU 1.
    pub fn iou(&self, other: &BinaryRaster) -> f64 {
        assert_eq!(self.resolution(), other.resolution());
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += usize::from(*a != 0 && *b != 0);
            union += usize::from(*a != 0 || *b != 0);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Strokes as 255, background as 0.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    /// Canonical serialization: single-channel 8-bit PNG with values {0, 255}.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_gray_image().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Tiles rasters left to right into a single grayscale image.
pub fn contact_strip(frames: &[BinaryRaster]) -> Result<GrayImage> {
    let first = frames.first().ok_or(Error::EmptyKeyframes)?;
    let (h, w) = first.resolution();
    let mut strip = GrayImage::new((w * frames.len()) as u32, h as u32);
    for (i, frame) in frames.iter().enumerate() {
        if frame.resolution() != (h, w) {
            return Err(Error::ResolutionMismatch {
                expected: (h, w),
                found: frame.resolution(),
            });
        }
        image::imageops::replace(&mut strip, &frame.to_gray_image(), (i * w) as i64, 0);
    }
    Ok(strip)
}

pub fn encode_png_gray(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
