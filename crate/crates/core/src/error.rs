use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("sketch contains no stroke pixels")]
    EmptySketch,
    #[error("invalid stroke: {0}")]
    InvalidStroke(String),
    #[error("no keyframes supplied")]
    EmptyKeyframes,
    #[error("keyframe index {index} appears more than once")]
    DuplicateIndex { index: usize },
    #[error("keyframe indices are not increasing: {next} follows {previous}")]
    UnsortedIndices { previous: usize, next: usize },
    #[error("keyframe index {index} is outside a clip of {total_frames} frames")]
    IndexOutOfRange { index: usize, total_frames: usize },
    #[error("keyframe resolution {found:?} differs from {expected:?}")]
    MixedResolution {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("total frame count must be at least 1")]
    InvalidFrameCount,
    #[error("resolution mismatch: expected {expected:?}, found {found:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("blend weight {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("extraction band {0} must be a non-negative finite number")]
    InvalidBand(f64),
    #[error("no pixel lies within the extraction band{}", frame.map(|f| format!(" (frame {f})")).unwrap_or_default())]
    EmptyResult { frame: Option<usize> },
    #[error("frame index {0} is invalid (frames are numbered from 1)")]
    InvalidFrameIndex(usize),
    #[error("attention batch has no frames")]
    EmptyBatch,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("model exposes no self-attention sites in the requested scope")]
    NoAttentionSites,
    #[error("prompt has {tokens} tokens, the encoder window is {limit}")]
    TokenLimitExceeded { tokens: usize, limit: usize },
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("timestep {timestep} is not in the remaining sampling schedule")]
    ScheduleExhausted { timestep: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("denoising step {step} (t={timestep}): {source}")]
    AtStep {
        step: usize,
        timestep: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_frame(self, frame: usize) -> Self {
        Error::AtFrame {
            frame,
            source: Box::new(self),
        }
    }

    pub fn at_step(self, step: usize, timestep: usize) -> Self {
        Error::AtStep {
            step,
            timestep,
            source: Box::new(self),
        }
    }

    /// The innermost error, with frame/step context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } | Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Stable machine-readable name, used in service error documents.
    pub fn code(&self) -> &'static str {
        match self.root() {
            Error::UndecodableImage(_) => "UndecodableImage",
            Error::EmptySketch => "EmptySketch",
            Error::InvalidStroke(_) => "InvalidStroke",
            Error::EmptyKeyframes => "EmptyKeyframes",
            Error::DuplicateIndex { .. } => "DuplicateIndex",
            Error::UnsortedIndices { .. } => "UnsortedIndices",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::MixedResolution { .. } => "MixedResolution",
            Error::InvalidFrameCount => "InvalidFrameCount",
            Error::ResolutionMismatch { .. } => "ResolutionMismatch",
            Error::AlphaOutOfRange(_) => "AlphaOutOfRange",
            Error::InvalidBand(_) => "InvalidBand",
            Error::EmptyResult { .. } => "EmptyResult",
            Error::InvalidFrameIndex(_) => "InvalidFrameIndex",
            Error::EmptyBatch => "EmptyBatch",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoAttentionSites => "NoAttentionSites",
            Error::TokenLimitExceeded { .. } => "TokenLimitExceeded",
            Error::EmptyPrompt => "EmptyPrompt",
            Error::ScheduleExhausted { .. } => "ScheduleExhausted",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownModel(_) => "UnknownModel",
            Error::Io(_) => "Io",
            Error::Image(_) => "Image",
            Error::Json(_) => "Json",
            Error::AtFrame { .. } | Error::AtStep { .. } => unreachable!("root() strips context"),
        }
    }
}
