//! Sketch-guided video generation.
//!
//! Keyframe sketches are tweened into a control video through distance-field
//! blending, the initial latents are motion-warped from one shared sample,
//! and a control-conditioned latent diffusion model is sampled with
//! cross-frame attention anchored on the first frame.
//!
//! ```
//! use stf_core::{rasterize_strokes, validate_sequence, interpolate_sequence, KeyframeSketch};
//!
//! let left = rasterize_strokes(&[vec![[0.2, 0.2], [0.2, 0.8]]], 2.0, (32, 32)).unwrap();
//! let right = rasterize_strokes(&[vec![[0.6, 0.2], [0.6, 0.8]]], 2.0, (32, 32)).unwrap();
//! let seq = validate_sequence(
//!     vec![KeyframeSketch::new(left, 0).unwrap(), KeyframeSketch::new(right, 4).unwrap()],
//!     5,
//! )
//! .unwrap();
//! let control = interpolate_sequence(&seq, 1.0).unwrap();
//! assert_eq!(control.len(), 5);
//! ```

pub mod attention;
pub mod error;
pub mod export;
pub mod latent;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod request;
pub mod scenes;
pub mod schedule;
pub mod sketch;
pub mod tween;

pub use attention::{cross_frame_attend, cache_first_frame, AttentionTensors, FirstFrameContext, PatchReport, PatchScope};
pub use error::{Error, Result};
pub use latent::{apply_motion, infer_direction, motion_offset, sample_base_latent, warp, FrameLatents, LatentGrid, MotionParams};
pub use model::{load_models, patch_model, unpatch_model, ModelBundle, ResidualStack};
pub use pipeline::{GenerationConfig, GenerationOutput, GenerationRequest, MotionSetting, Pipeline, VideoFrames};
pub use raster::BinaryRaster;
pub use request::{RequestDocument, ValidationErrors};
pub use sketch::{load_sketch, rasterize_strokes, validate_sequence, KeyframeSketch, SketchSequence, Stroke};
pub use tween::{blend_fields, distance_transform, extract_sketch, interpolate_sequence, ControlSequence, DistanceField};
