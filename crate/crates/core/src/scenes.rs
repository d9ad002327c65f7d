//! Ready-made keyframe sketches for demos and tests.

use crate::error::Result;
use crate::sketch::{rasterize_stroke_set, validate_sequence, KeyframeSketch, SketchSequence, Stroke};

/// A stick figure (head, torso, arms, legs) centred horizontally on `x`,
/// in normalized coordinates.
pub fn stick_figure(x: f64, width: f64) -> Vec<Stroke> {
    let s = |points: Vec<[f64; 2]>| Stroke { points, width };
    let head: Vec<[f64; 2]> = (0..=12)
        .map(|i| {
            let a = i as f64 / 12.0 * std::f64::consts::TAU;
            [x + 0.06 * a.cos(), 0.25 + 0.06 * a.sin()]
        })
        .collect();
    vec![
        s(head),
        s(vec![[x, 0.31], [x, 0.6]]),
        s(vec![[x - 0.1, 0.45], [x, 0.38], [x + 0.1, 0.45]]),
        s(vec![[x - 0.08, 0.8], [x, 0.6], [x + 0.08, 0.8]]),
    ]
}

/// The walking scenario: one figure at the left, middle and right of the
/// frame at indices 0, `n/2` and `n-1`.
pub fn walking_trio(total_frames: usize, resolution: (usize, usize)) -> Result<SketchSequence> {
    let last = total_frames.saturating_sub(1);
    let stroke_width = resolution.1 as f64 / 64.0 * 1.5;
    let keyframes = [(0, 0.2), (last / 2, 0.5), (last, 0.8)]
        .into_iter()
        .map(|(index, x)| KeyframeSketch::new(rasterize_stroke_set(&stick_figure(x, stroke_width), resolution)?, index))
        .collect::<Result<Vec<_>>>()?;
    validate_sequence(keyframes, total_frames)
}
