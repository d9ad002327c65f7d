//! Sketch ingestion: decoding, polarity normalization, vector rasterization
//! and keyframe sequence validation.

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryRaster;

/// Luminance at or above this value counts as "bright".
const LUMA_THRESHOLD: u8 = 128;

/// A binary scribble pinned to a frame of the output clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyframeSketch {
    grid: BinaryRaster,
    frame_index: usize,
}

impl KeyframeSketch {
    pub fn new(grid: BinaryRaster, frame_index: usize) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptySketch);
        }
        Ok(Self { grid, frame_index })
    }

    pub fn grid(&self) -> &BinaryRaster {
        &self.grid
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.grid.resolution()
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }
}

/// Validated keyframes: non-empty, strictly increasing indices inside
/// `0..total_frames`, one shared resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchSequence {
    keyframes: Vec<KeyframeSketch>,
    total_frames: usize,
}

impl SketchSequence {
    pub fn keyframes(&self) -> &[KeyframeSketch] {
        &self.keyframes
    }

    pub fn total_frames(&self) -> usize {
        self.total_frames
    }

    pub fn resolution(&self) -> (usize, usize) {
        self.keyframes[0].resolution()
    }
}

/// Decodes PNG/JPEG bytes into a canonical sketch (bright strokes on a dark
/// background, stroke pixels never more than half the image).
pub fn load_sketch(
    data: &[u8],
    frame_index: usize,
    target_resolution: (usize, usize),
) -> Result<KeyframeSketch> {
    let (h, w) = target_resolution;
    if h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!(
            "target resolution {h}x{w} has a zero side"
        )));
    }
    let decoded =
        image::load_from_memory(data).map_err(|e| Error::UndecodableImage(e.to_string()))?;
    let mut gray = decoded.to_luma8();
    if gray.dimensions() != (w as u32, h as u32) {
        gray = image::imageops::resize(&gray, w as u32, h as u32, FilterType::Nearest);
    }

    let bright: Vec<u8> = gray
        .pixels()
        .map(|p| u8::from(p.0[0] >= LUMA_THRESHOLD))
        .collect();
    let bright_count = bright.iter().filter(|&&b| b != 0).count();
    let cells = if 2 * bright_count > bright.len() {
        bright.into_iter().map(|b| 1 - b).collect()
    } else {
        bright
    };
    KeyframeSketch::new(BinaryRaster::from_cells(h, w, cells)?, frame_index)
}

/// One polyline in normalized `[0,1]²` coordinates, `(x, y)` with y pointing down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<[f64; 2]>,
    /// Stroke width in output pixels.
    pub width: f64,
}

/// Rasterizes polylines that share one width. See [`rasterize_stroke_set`].
pub fn rasterize_strokes(
    polylines: &[Vec<[f64; 2]>],
    stroke_width: f64,
    target_resolution: (usize, usize),
) -> Result<BinaryRaster> {
    let strokes: Vec<Stroke> = polylines
        .iter()
        .map(|points| Stroke {
            points: points.clone(),
            width: stroke_width,
        })
        .collect();
    rasterize_stroke_set(&strokes, target_resolution)
}

/// Pixel `(r, c)` is a stroke iff the point `(c, r)` lies within `width / 2`
/// of a segment of some polyline, where a normalized point `(x, y)` maps to
/// `(x·W, y·H)` in pixel units.
pub fn rasterize_stroke_set(strokes: &[Stroke], target_resolution: (usize, usize)) -> Result<BinaryRaster> {
    let (h, w) = target_resolution;
    if strokes.is_empty() {
        return Err(Error::EmptySketch);
    }
    let mut segments = Vec::new();
    for stroke in strokes {
        if !(stroke.width.is_finite() && stroke.width > 0.0) {
            return Err(Error::InvalidStroke(format!(
                "width {} must be positive",
                stroke.width
            )));
        }
        if stroke.points.len() < 2 {
            return Err(Error::InvalidStroke(format!(
                "polyline has {} point(s), at least 2 required",
                stroke.points.len()
            )));
        }
        for p in &stroke.points {
            if !p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::InvalidStroke(format!(
                    "point ({}, {}) is outside the unit square",
                    p[0], p[1]
                )));
            }
        }
        let radius = stroke.width / 2.0;
        for pair in stroke.points.windows(2) {
            let a = (pair[0][0] * w as f64, pair[0][1] * h as f64);
            let b = (pair[1][0] * w as f64, pair[1][1] * h as f64);
            segments.push((a, b, radius));
        }
    }

    let mut grid = BinaryRaster::zeros(h, w);
    for &(a, b, radius) in &segments {
        // Only visit the segment's padded bounding box.
        let c0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
        let c1 = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let r0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
        let r1 = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        let r2 = radius * radius;
        for r in r0..=r1 {
            for c in c0..=c1 {
                if !grid.get(r, c) && point_segment_dist2((c as f64, r as f64), a, b) <= r2 {
                    grid.set(r, c, true);
                }
            }
        }
    }
    if grid.is_empty() {
        return Err(Error::EmptySketch);
    }
    Ok(grid)
}

/// Squared Euclidean distance from `p` to the closed segment `ab`.
pub fn point_segment_dist2(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - qx).powi(2) + (p.1 - qy).powi(2)
}

/// Checks keyframe ordering, range and resolution. Grids are moved, never modified.
pub fn validate_sequence(keyframes: Vec<KeyframeSketch>, total_frames: usize) -> Result<SketchSequence> {
    if total_frames == 0 {
        return Err(Error::InvalidFrameCount);
    }
    let first = keyframes.first().ok_or(Error::EmptyKeyframes)?;
    let resolution = first.resolution();
    for kf in &keyframes {
        if kf.resolution() != resolution {
            return Err(Error::MixedResolution {
                expected: resolution,
                found: kf.resolution(),
            });
        }
        if kf.grid.is_empty() {
            return Err(Error::EmptySketch);
        }
    }
    for pair in keyframes.windows(2) {
        let (prev, next) = (pair[0].frame_index, pair[1].frame_index);
        if prev == next {
            return Err(Error::DuplicateIndex { index: next });
        }
        if next < prev {
            return Err(Error::UnsortedIndices {
                previous: prev,
                next,
            });
        }
    }
    if let Some(kf) = keyframes.iter().find(|kf| kf.frame_index >= total_frames) {
        return Err(Error::IndexOutOfRange {
            index: kf.frame_index,
            total_frames,
        });
    }
    Ok(SketchSequence {
        keyframes,
        total_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, ImageFormat, Luma, RgbImage};
    use proptest::prelude::*;
    use std::io::Cursor;

    fn png_bytes(img: &GrayImage) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    fn stick_figure(w: u32, h: u32, fg: u8, bg: u8) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let head = (x as i64 - 20).pow(2) + (y as i64 - 10).pow(2) <= 16;
            let body = x == 20 && (14..40).contains(&y);
            let arms = y == 22 && (12..29).contains(&x);
            let legs = (40..56).contains(&y) && (x as i64 - 20).abs() == (y as i64 - 40) / 2;
            Luma([if head || body || arms || legs { fg } else { bg }])
        })
    }

    #[test]
    fn black_image_is_empty() {
        let img = GrayImage::new(512, 512);
        let err = load_sketch(&png_bytes(&img), 0, (512, 512)).unwrap_err();
        assert!(matches!(err, Error::EmptySketch));
    }

    #[test]
    fn canonical_input_is_unchanged() {
        let img = stick_figure(64, 64, 255, 0);
        let sketch = load_sketch(&png_bytes(&img), 3, (64, 64)).unwrap();
        assert_eq!(sketch.frame_index(), 3);
        for (x, y, p) in img.enumerate_pixels() {
            assert_eq!(sketch.grid().get(y as usize, x as usize), p.0[0] == 255);
        }
    }

    #[test]
    fn dark_on_white_scan_is_inverted() {
        // Brute-force oracle: count source pixels below the luminance threshold.
        let img = stick_figure(64, 64, 20, 240);
        let rgb = RgbImage::from_fn(64, 64, |x, y| {
            let v = img.get_pixel(x, y).0[0];
            image::Rgb([v, v, v])
        });
        let mut out = Cursor::new(Vec::new());
        rgb.write_to(&mut out, ImageFormat::Png).unwrap();
        let dark = img.pixels().filter(|p| p.0[0] < 128).count();

        let sketch = load_sketch(&out.into_inner(), 0, (64, 64)).unwrap();
        assert_eq!(sketch.grid().stroke_count(), dark);
        for (x, y, p) in img.enumerate_pixels() {
            assert_eq!(sketch.grid().get(y as usize, x as usize), p.0[0] < 128);
        }
    }

    #[test]
    fn garbage_bytes_are_undecodable() {
        let err = load_sketch(b"not an image", 0, (8, 8)).unwrap_err();
        assert!(matches!(err, Error::UndecodableImage(_)));
    }

    #[test]
    fn jpeg_is_accepted_and_resized() {
        let img = stick_figure(64, 64, 255, 0);
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Jpeg).unwrap();
        let sketch = load_sketch(&out.into_inner(), 0, (32, 32)).unwrap();
        assert_eq!(sketch.resolution(), (32, 32));
        assert!(sketch.grid().stroke_count() > 0);
    }

    #[test]
    fn load_is_idempotent_on_canonical_png() {
        let img = stick_figure(48, 64, 10, 200);
        let once = load_sketch(&png_bytes(&img), 0, (40, 40)).unwrap();
        let again = load_sketch(&once.grid().to_png().unwrap(), 0, (40, 40)).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn empty_polyline_list_is_rejected() {
        assert!(matches!(rasterize_strokes(&[], 2.0, (8, 8)), Err(Error::EmptySketch)));
        assert!(matches!(
            rasterize_strokes(&[vec![[0.5, 0.5]]], 2.0, (8, 8)),
            Err(Error::InvalidStroke(_))
        ));
        assert!(matches!(
            rasterize_strokes(&[vec![[0.0, 0.0], [1.0, 1.0]]], 0.0, (8, 8)),
            Err(Error::InvalidStroke(_))
        ));
    }

    /// Per-pixel distance-to-segment oracle, written independently of the
    /// bounding-box scan used by the rasterizer.
    fn oracle(a: (f64, f64), b: (f64, f64), width: f64, h: usize, w: usize) -> BinaryRaster {
        BinaryRaster::from_fn(h, w, |r, c| {
            let (px, py) = (c as f64, r as f64);
            let (ax, ay, bx, by) = (a.0 * w as f64, a.1 * h as f64, b.0 * w as f64, b.1 * h as f64);
            let len2 = (bx - ax).powi(2) + (by - ay).powi(2);
            let t = (((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / len2).clamp(0.0, 1.0);
            let d = ((px - ax - t * (bx - ax)).powi(2) + (py - ay - t * (by - ay)).powi(2)).sqrt();
            d <= width / 2.0
        })
    }

    #[test]
    fn horizontal_segment_band() {
        let grid = rasterize_strokes(&[vec![[0.0, 0.5], [1.0, 0.5]]], 3.0, (64, 64)).unwrap();
        assert_eq!(grid, oracle((0.0, 0.5), (1.0, 0.5), 3.0, 64, 64));
        let rows: Vec<usize> = (0..64).filter(|&r| grid.get(r, 10)).collect();
        assert_eq!(rows, vec![31, 32, 33]);
    }

    #[test]
    fn diagonal_segment_band() {
        let grid = rasterize_strokes(&[vec![[0.0, 0.0], [1.0, 1.0]]], 2.0, (32, 32)).unwrap();
        assert_eq!(grid, oracle((0.0, 0.0), (1.0, 1.0), 2.0, 32, 32));
        assert!(grid.get(0, 0) && grid.get(31, 31) && grid.get(5, 6));
        assert!(!grid.get(5, 7));
    }

    fn kf(index: usize) -> KeyframeSketch {
        KeyframeSketch::new(BinaryRaster::filled(4, 4), index).unwrap()
    }

    #[test]
    fn validate_sequence_cases() {
        let seq = validate_sequence(vec![kf(0), kf(8)], 16).unwrap();
        assert_eq!(seq.keyframes().len(), 2);
        assert!(matches!(
            validate_sequence(vec![kf(0), kf(0)], 16),
            Err(Error::DuplicateIndex { index: 0 })
        ));
        assert!(matches!(
            validate_sequence(vec![kf(20)], 16),
            Err(Error::IndexOutOfRange { index: 20, total_frames: 16 })
        ));
        assert!(matches!(
            validate_sequence(vec![kf(5), kf(2)], 16),
            Err(Error::UnsortedIndices { previous: 5, next: 2 })
        ));
        assert!(matches!(validate_sequence(vec![], 16), Err(Error::EmptyKeyframes)));
        let other = KeyframeSketch::new(BinaryRaster::filled(8, 4), 3).unwrap();
        assert!(matches!(
            validate_sequence(vec![kf(0), other], 16),
            Err(Error::MixedResolution { .. })
        ));
    }

    proptest! {
        #[test]
        fn densification_does_not_change_raster(
            pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..6),
            width in 0.5f64..6.0,
        ) {
            let line: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let mut dense = Vec::new();
            for pair in line.windows(2) {
                dense.push(pair[0]);
                dense.push([(pair[0][0] + pair[1][0]) / 2.0, (pair[0][1] + pair[1][1]) / 2.0]);
            }
            dense.push(*line.last().unwrap());
            let a = rasterize_strokes(&[line], width, (32, 32));
            let b = rasterize_strokes(&[dense], width, (32, 32));
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    // Tolerate only boundary ties, where a pixel centre sits
                    // at exactly width/2 from the line.
                    let diff = a.cells().iter().zip(b.cells()).filter(|(x, y)| x != y).count();
                    prop_assert!(diff == 0, "{diff} pixels differ");
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one rasterization failed"),
            }
        }

        #[test]
        fn polarity_keeps_strokes_in_minority(cells in prop::collection::vec(0u8..=1, 64)) {
            let img = GrayImage::from_fn(8, 8, |x, y| Luma([cells[(y * 8 + x) as usize] * 255]));
            if let Ok(s) = load_sketch(&png_bytes(&img), 0, (8, 8)) {
                prop_assert!(2 * s.grid().stroke_count() <= 64);
            }
        }

        #[test]
        fn validation_preserves_grids(cells in prop::collection::vec(0u8..=1, 16)) {
            let mut cells = cells;
            cells[0] = 1;
            let grid = BinaryRaster::from_cells(4, 4, cells).unwrap();
            let seq = validate_sequence(vec![KeyframeSketch::new(grid.clone(), 1).unwrap()], 2).unwrap();
            prop_assert_eq!(seq.keyframes()[0].grid(), &grid);
        }
    }
}
