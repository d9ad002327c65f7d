//! JSON request documents shared by the CLI and the job service.

use base64::Engine;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::attention::PatchScope;
use crate::error::Error;
use crate::latent::MotionParams;
use crate::pipeline::{GenerationConfig, GenerationRequest, MotionSetting};
use crate::sketch::{load_sketch, rasterize_stroke_set, validate_sequence, KeyframeSketch, Stroke};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDocument {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    pub total_frames: usize,
    pub resolution: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_frame: Option<CrossFrameDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_tokens: Option<bool>,
    pub model: String,
    pub keyframes: Vec<KeyframeDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MotionDoc {
    Keyword(MotionKeyword),
    Fixed { lambda: f64, direction: [f64; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKeyword {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossFrameDoc {
    Off,
    MainDenoiser,
    MainPlusControlBranch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeDoc {
    pub frame_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png_base64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strokes: Option<Vec<Stroke>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    /// Dotted path into the document, e.g. `keyframes[1].strokes`.
    pub field: String,
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationErrors {
    pub errors: Vec<FieldError>,
}

impl ValidationErrors {
    fn push(&mut self, field: impl Into<String>, code: &str, message: impl Into<String>) {
        self.errors.push(FieldError {
            field: field.into(),
            code: code.to_string(),
            message: message.into(),
        });
    }

    fn push_err(&mut self, field: impl Into<String>, err: &Error) {
        self.push(field, err.code(), err.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn single(field: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        let mut v = Self::default();
        v.push(field, code, message);
        v
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {} ({})", e.field, e.message, e.code)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

impl From<MotionSetting> for MotionDoc {
    fn from(m: MotionSetting) -> Self {
        match m {
            MotionSetting::Auto => MotionDoc::Keyword(MotionKeyword::Auto),
            MotionSetting::Fixed(p) if !p.enabled => MotionDoc::Fixed {
                lambda: 0.0,
                direction: [p.direction.0, p.direction.1],
            },
            MotionSetting::Fixed(p) => MotionDoc::Fixed {
                lambda: p.lambda,
                direction: [p.direction.0, p.direction.1],
            },
        }
    }
}

impl From<Option<PatchScope>> for CrossFrameDoc {
    fn from(scope: Option<PatchScope>) -> Self {
        match scope {
            None => CrossFrameDoc::Off,
            Some(PatchScope::MainDenoiser) => CrossFrameDoc::MainDenoiser,
            Some(PatchScope::MainPlusControlBranch) => CrossFrameDoc::MainPlusControlBranch,
        }
    }
}

impl From<CrossFrameDoc> for Option<PatchScope> {
    fn from(doc: CrossFrameDoc) -> Self {
        match doc {
            CrossFrameDoc::Off => None,
            CrossFrameDoc::MainDenoiser => Some(PatchScope::MainDenoiser),
            CrossFrameDoc::MainPlusControlBranch => Some(PatchScope::MainPlusControlBranch),
        }
    }
}

impl RequestDocument {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ValidationErrors> {
        serde_json::from_slice(bytes).map_err(|e| ValidationErrors::single("$", "InvalidJson", e.to_string()))
    }

    /// Every setting resolved against the defaults, without keyframes.
    pub fn config(&self) -> Result<GenerationConfig, ValidationErrors> {
        let mut errs = ValidationErrors::default();
        let [h, w] = self.resolution;
        let mut cfg = GenerationConfig::new(self.total_frames, (h, w));
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.guidance_scale {
            cfg.guidance_scale = v;
        }
        if let Some(v) = self.control_scale {
            cfg.control_scale = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.band {
            cfg.band = v;
        }
        if let Some(v) = self.frame_rate {
            cfg.frame_rate = v;
        }
        if let Some(v) = self.strict_tokens {
            cfg.strict_tokens = v;
        }
        if let Some(v) = self.cross_frame {
            cfg.cross_frame = v.into();
        }
        match &self.motion {
            None | Some(MotionDoc::Keyword(MotionKeyword::Auto)) => cfg.motion = MotionSetting::Auto,
            Some(MotionDoc::Fixed { lambda, direction }) => match MotionParams::new(*lambda, (direction[0], direction[1])) {
                Ok(p) => cfg.motion = MotionSetting::Fixed(p),
                Err(e) => errs.push_err("motion", &e),
            },
        }

        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            errs.push("resolution", "InvalidConfig", format!("{h}x{w} must be positive multiples of 8"));
        }
        if self.total_frames == 0 {
            errs.push_err("total_frames", &Error::InvalidFrameCount);
        }
        if cfg.steps == 0 {
            errs.push("steps", "InvalidConfig", "must be at least 1");
        }
        if !(cfg.guidance_scale.is_finite() && cfg.guidance_scale >= 0.0) {
            errs.push("guidance_scale", "InvalidConfig", "must be a finite number >= 0");
        }
        if !(0.0..=2.0).contains(&cfg.control_scale) {
            errs.push("control_scale", "InvalidConfig", "must be in [0, 2]");
        }
        if !(cfg.band.is_finite() && cfg.band >= 0.0) {
            errs.push_err("band", &Error::InvalidBand(cfg.band));
        }
        if !(cfg.frame_rate.is_finite() && cfg.frame_rate > 0.0) {
            errs.push("frame_rate", "InvalidConfig", "must be positive");
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(errs)
        }
    }

    /// Decodes and rasterizes the keyframes, then validates the sequence.
    pub fn keyframe_sketches(&self, resolution: (usize, usize)) -> Result<Vec<KeyframeSketch>, ValidationErrors> {
        let mut errs = ValidationErrors::default();
        let mut sketches = Vec::with_capacity(self.keyframes.len());
        for (i, kf) in self.keyframes.iter().enumerate() {
            let field = format!("keyframes[{i}]");
            let sketch = match (&kf.png_base64, &kf.strokes) {
                (Some(_), Some(_)) | (None, None) => {
                    errs.push(field, "InvalidKeyframe", "exactly one of png_base64 or strokes is required");
                    continue;
                }
                (Some(b64), None) => base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| Error::UndecodableImage(format!("invalid base64: {e}")))
                    .and_then(|bytes| load_sketch(&bytes, kf.frame_index, resolution))
                    .map_err(|e| (format!("{field}.png_base64"), e)),
                (None, Some(strokes)) => rasterize_stroke_set(strokes, resolution)
                    .and_then(|grid| KeyframeSketch::new(grid, kf.frame_index))
                    .map_err(|e| (format!("{field}.strokes"), e)),
            };
            match sketch {
                Ok(s) => sketches.push(s),
                Err((field, e)) => errs.push_err(field, &e),
            }
        }
        if errs.is_empty() {
            Ok(sketches)
        } else {
            Err(errs)
        }
    }

    pub fn resolve(&self) -> Result<GenerationRequest, ValidationErrors> {
        let mut errs = ValidationErrors::default();
        if self.prompt.trim().is_empty() {
            errs.push_err("prompt", &Error::EmptyPrompt);
        }
        if self.model.trim().is_empty() {
            errs.push("model", "UnknownModel", "model identifier must not be empty");
        }
        let cfg = match self.config() {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                errs.errors.extend(e.errors);
                None
            }
        };
        let Some(cfg) = cfg else {
            return Err(errs);
        };
        let sketches = match self.keyframe_sketches(cfg.resolution) {
            Ok(s) => s,
            Err(e) => {
                errs.errors.extend(e.errors);
                return Err(errs);
            }
        };
        let sequence = match validate_sequence(sketches, cfg.total_frames) {
            Ok(seq) => seq,
            Err(e) => {
                errs.push_err("keyframes", &e);
                return Err(errs);
            }
        };
        if !errs.is_empty() {
            return Err(errs);
        }
        GenerationRequest::new(
            self.prompt.clone(),
            self.negative_prompt.clone().unwrap_or_default(),
            sequence,
            cfg,
        )
        .map_err(|e| ValidationErrors::single("$", e.code(), e.to_string()))
    }

    /// Copies every resolved setting from `cfg` into the document.
    pub fn apply_config(&mut self, cfg: &GenerationConfig) {
        self.total_frames = cfg.total_frames;
        self.resolution = [cfg.resolution.0, cfg.resolution.1];
        self.steps = Some(cfg.steps);
        self.guidance_scale = Some(cfg.guidance_scale);
        self.control_scale = Some(cfg.control_scale);
        self.seed = Some(cfg.seed);
        self.band = Some(cfg.band);
        self.motion = Some(cfg.motion.into());
        self.cross_frame = Some(cfg.cross_frame.into());
        self.frame_rate = Some(cfg.frame_rate);
        self.strict_tokens = Some(cfg.strict_tokens);
    }
}
