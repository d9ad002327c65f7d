//! `stf generate`, `stf tween`, `stf sketches` and `stf serve`.
//!
//! Flags and `--config` files are merged into one [`CliSettings`] (flags
//! win), which is then turned into the same request document the service
//! accepts. `manifest.json` stores the fully resolved settings, so passing it
//! back through `--config` reproduces the run.

use base64::Engine;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stf_core::request::{CrossFrameDoc, KeyframeDoc, MotionDoc, MotionKeyword};
use stf_core::scenes::walking_trio;
use stf_core::tween::interpolate_sequence;
use stf_core::{validate_sequence, Pipeline, RequestDocument, Stroke, ValidationErrors};

use crate::artifacts::{write_generation, ArtifactPaths, CONTROL_STRIP};
use crate::service::{serve, ServiceConfig};

pub const DEFAULT_MODEL: &str = "toy:0";
pub const DEFAULT_RESOLUTION: [usize; 2] = [256, 256];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Pipeline(#[from] stf_core::Error),
    #[error("{0}")]
    Service(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Pipeline(_) | CliError::Service(_) => 1,
        }
    }
}

impl From<ValidationErrors> for CliError {
    fn from(e: ValidationErrors) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "stf", version, about = "Sketch-guided text-to-video generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Debug logging on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a video from keyframe sketches and a prompt.
    Generate(GenerateArgs),
    /// Write the interpolated control frames and contact strip only.
    Tween(TweenArgs),
    /// Write the walking stick-figure keyframes as PNGs.
    Sketches(SketchesArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeSpec {
    pub index: usize,
    pub path: PathBuf,
}

impl FromStr for KeyframeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (index, path) = s.split_once(':').ok_or_else(|| format!("expected INDEX:PATH, got `{s}`"))?;
        let index = index.trim().parse().map_err(|_| format!("keyframe index `{index}` is not a non-negative integer"))?;
        if path.is_empty() {
            return Err(format!("keyframe `{s}` has an empty path"));
        }
        Ok(Self {
            index,
            path: PathBuf::from(path),
        })
    }
}

impl std::fmt::Display for KeyframeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.index, self.path.display())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution(pub usize, pub usize);

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{s}` is not HxW"));
        Ok(Resolution(parse(h)?, parse(w)?))
    }
}

pub fn parse_motion(s: &str) -> Result<MotionDoc, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(MotionDoc::Keyword(MotionKeyword::Auto));
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected `lambda,ux,uy` or `auto`, got `{s}`"))?;
    match parts[..] {
        [lambda, ux, uy] => Ok(MotionDoc::Fixed {
            lambda,
            direction: [ux, uy],
        }),
        _ => Err(format!("expected `lambda,ux,uy` or `auto`, got `{s}`")),
    }
}

pub fn parse_cross_frame(s: &str) -> Result<CrossFrameDoc, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("expected off, main_denoiser or main_plus_control_branch, got `{s}`"))
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    /// Keyframe as INDEX:PATH (PNG/JPEG image, or a JSON list of strokes). Repeatable.
    #[arg(long = "keyframe", value_name = "INDEX:PATH")]
    pub keyframes: Vec<KeyframeSpec>,
    /// Total number of frames.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Output resolution as HxW, multiples of 8.
    #[arg(long)]
    pub resolution: Option<Resolution>,
    /// Distance threshold for extracting in-between strokes, in pixels.
    #[arg(long)]
    pub band: Option<f64>,
    /// JSON settings file or a previous manifest.json; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub sequence: SequenceArgs,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub negative_prompt: Option<String>,
    /// DDIM steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Control residual multiplier in [0, 2].
    #[arg(long)]
    pub control_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `lambda,ux,uy` or `auto`.
    #[arg(long, value_parser = parse_motion)]
    pub motion: Option<MotionDoc>,
    /// Cross-frame attention scope: off, main_denoiser or main_plus_control_branch.
    #[arg(long, value_parser = parse_cross_frame)]
    pub cross_frame: Option<CrossFrameDoc>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    /// `toy:<seed>` or the name of a weights file in the model directory.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, env = "STF_MODEL_DIR")]
    pub model_dir: Option<PathBuf>,
    /// Encode MP4 with ffmpeg when available (falls back to GIF).
    #[arg(long)]
    pub mp4: bool,
}

#[derive(Debug, Args)]
pub struct TweenArgs {
    #[command(flatten)]
    pub sequence: SequenceArgs,
}

#[derive(Debug, Args)]
pub struct SketchesArgs {
    #[arg(long, default_value_t = 9)]
    pub frames: usize,
    #[arg(long, default_value = "128x128")]
    pub resolution: Resolution,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7860")]
    pub addr: SocketAddr,
    /// Directory holding one sub-directory per job.
    #[arg(long, default_value = "stf-data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "STF_MODEL_DIR")]
    pub model_dir: Option<PathBuf>,
    #[arg(long)]
    pub mp4: bool,
}

/// Every generation setting; absent fields take the pipeline defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    /// `INDEX:PATH` entries; relative paths resolve against the file's directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keyframes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[usize; 2]>,
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
    pub model: Option<String>,
}

impl CliSettings {
    /// Reads a settings file, or the `config` section of a manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: serde_json::Value =
            serde_json::from_slice(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        if let Some(inner) = value.get_mut("config").filter(|v| v.is_object()) {
            value = inner.take();
        }
        let mut settings: Self =
            serde_json::from_value(value).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for entry in &mut settings.keyframes {
            let spec: KeyframeSpec = entry.parse().map_err(invalid)?;
            if spec.path.is_relative() {
                *entry = KeyframeSpec {
                    index: spec.index,
                    path: base.join(spec.path),
                }
                .to_string();
            }
        }
        Ok(settings)
    }

    fn merge_sequence(&mut self, args: &SequenceArgs) {
        if !args.keyframes.is_empty() {
            self.keyframes = args.keyframes.iter().map(ToString::to_string).collect();
        }
        set(&mut self.total_frames, args.frames);
        set(&mut self.resolution, args.resolution.map(|r| [r.0, r.1]));
        set(&mut self.band, args.band);
    }

    fn merge_generate(&mut self, args: &GenerateArgs) {
        self.merge_sequence(&args.sequence);
        set(&mut self.prompt, args.prompt.clone());
        set(&mut self.negative_prompt, args.negative_prompt.clone());
        set(&mut self.steps, args.steps);
        set(&mut self.guidance_scale, args.guidance);
        set(&mut self.control_scale, args.control_scale);
        set(&mut self.seed, args.seed);
        set(&mut self.motion, args.motion.clone());
        set(&mut self.cross_frame, args.cross_frame);
        set(&mut self.frame_rate, args.frame_rate);
        set(&mut self.model, args.model.clone());
    }

    fn keyframe_specs(&self) -> Result<Vec<KeyframeSpec>, CliError> {
        self.keyframes.iter().map(|k| k.parse().map_err(invalid)).collect()
    }

    /// Builds the request document, reading every keyframe file.
    pub fn to_document(&self) -> Result<RequestDocument, CliError> {
        let specs = self.keyframe_specs()?;
        if specs.is_empty() {
            return Err(invalid("at least one --keyframe is required"));
        }
        let keyframes = specs.iter().map(read_keyframe).collect::<Result<Vec<_>, _>>()?;
        let total_frames = self
            .total_frames
            .unwrap_or_else(|| specs.iter().map(|s| s.index).max().unwrap_or(0) + 1);
        Ok(RequestDocument {
            prompt: self.prompt.clone().unwrap_or_default(),
            negative_prompt: self.negative_prompt.clone(),
            total_frames,
            resolution: self.resolution.unwrap_or(DEFAULT_RESOLUTION),
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            control_scale: self.control_scale,
            seed: self.seed,
            band: self.band,
            motion: self.motion.clone(),
            cross_frame: self.cross_frame,
            frame_rate: self.frame_rate,
            strict_tokens: None,
            model: self.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            keyframes,
        })
    }

    /// The settings with every default filled in and keyframe paths made absolute.
    fn resolved(&self, doc: &RequestDocument, cfg: &stf_core::GenerationConfig) -> Result<Self, CliError> {
        let keyframes = self
            .keyframe_specs()?
            .into_iter()
            .map(|s| {
                let path = fs::canonicalize(&s.path).unwrap_or(s.path);
                KeyframeSpec { index: s.index, path }.to_string()
            })
            .collect();
        Ok(Self {
            prompt: Some(doc.prompt.clone()),
            negative_prompt: Some(doc.negative_prompt.clone().unwrap_or_default()),
            keyframes,
            total_frames: Some(cfg.total_frames),
            resolution: Some([cfg.resolution.0, cfg.resolution.1]),
            steps: Some(cfg.steps),
            guidance_scale: Some(cfg.guidance_scale),
            control_scale: Some(cfg.control_scale),
            seed: Some(cfg.seed),
            band: Some(cfg.band),
            motion: Some(cfg.motion.into()),
            cross_frame: Some(cfg.cross_frame.into()),
            frame_rate: Some(cfg.frame_rate),
            model: Some(doc.model.clone()),
        })
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn read_keyframe(spec: &KeyframeSpec) -> Result<KeyframeDoc, CliError> {
    let bytes =
        fs::read(&spec.path).map_err(|e| invalid(format!("keyframe {}: {e}", spec.path.display())))?;
    let is_json = spec.path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let strokes: Vec<Stroke> = serde_json::from_slice(&bytes)
            .map_err(|e| invalid(format!("keyframe {}: {e}", spec.path.display())))?;
        Ok(KeyframeDoc {
            frame_index: spec.index,
            png_base64: None,
            strokes: Some(strokes),
        })
    } else {
        Ok(KeyframeDoc {
            frame_index: spec.index,
            png_base64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
            strokes: None,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CliSettings,
    pub motion: stf_core::MotionParams,
    pub cross_frame_sites: usize,
    pub frame_count: usize,
    pub artifacts: ArtifactPaths,
    pub timings: stf_core::pipeline::Timings,
    pub version: String,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Tween(args) => cmd_tween(&args),
        Command::Sketches(args) => cmd_sketches(&args),
        Command::Serve(args) => cmd_serve(args),
    }
}

fn base_settings(config: &Option<PathBuf>) -> Result<CliSettings, CliError> {
    match config {
        Some(path) => CliSettings::load(path),
        None => Ok(CliSettings::default()),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut settings = base_settings(&args.sequence.config)?;
    settings.merge_generate(args);
    let doc = settings.to_document()?;
    let request = doc.resolve()?;
    stf_core::model::resolve_model_id(&doc.model, args.model_dir.as_deref()).map_err(|e| invalid(e.to_string()))?;
    let out = &args.sequence.out;
    fs::create_dir_all(out).map_err(|e| invalid(format!("output directory {}: {e}", out.display())))?;

    let mut pipeline = Pipeline::from_model_id(&doc.model, args.model_dir.as_deref())?;
    let output = pipeline.run(&request, |p| {
        eprintln!(
            "step {}/{} t={} elapsed {:.2}s",
            p.step,
            p.total_steps,
            p.timestep,
            p.elapsed.as_secs_f64()
        );
    })?;
    let (artifacts, _) = write_generation(&output, out, args.mp4)?;
    let manifest = Manifest {
        config: settings.resolved(&doc, &request.config)?,
        motion: output.motion,
        cross_frame_sites: output.patch.as_ref().map_or(0, |p| p.count),
        frame_count: output.video.len(),
        artifacts,
        timings: output.timings.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(stf_core::Error::from)?;
    fs::write(out.join("manifest.json"), json).map_err(stf_core::Error::from)?;
    eprintln!("wrote {} frames to {}", output.video.len(), out.display());
    Ok(())
}

pub fn cmd_tween(args: &TweenArgs) -> Result<(), CliError> {
    let mut settings = base_settings(&args.sequence.config)?;
    settings.merge_sequence(&args.sequence);
    let doc = settings.to_document()?;
    let cfg = doc.config()?;
    let sketches = doc.keyframe_sketches(cfg.resolution)?;
    let seq = validate_sequence(sketches, cfg.total_frames).map_err(|e| invalid(e.to_string()))?;
    let control = interpolate_sequence(&seq, cfg.band)?;
    let out = &args.sequence.out;
    stf_core::export::write_control_frames(&control, out)?;
    stf_core::export::write_control_strip(&control, &out.join(CONTROL_STRIP))?;
    eprintln!("wrote {} control frames to {}", control.len(), out.display());
    Ok(())
}

pub fn cmd_sketches(args: &SketchesArgs) -> Result<(), CliError> {
    let Resolution(h, w) = args.resolution;
    if args.frames < 3 {
        return Err(invalid("--frames must be at least 3"));
    }
    let seq = walking_trio(args.frames, (h, w))?;
    fs::create_dir_all(&args.out).map_err(stf_core::Error::from)?;
    let mut stdout = std::io::stdout().lock();
    for k in seq.keyframes() {
        let path = args.out.join(format!("keyframe_{:04}.png", k.frame_index()));
        fs::write(&path, k.grid().to_png()?).map_err(stf_core::Error::from)?;
        let _ = writeln!(stdout, "--keyframe {}:{}", k.frame_index(), path.display());
    }
    Ok(())
}

pub fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let config = ServiceConfig {
        data_dir: args.data_dir,
        model_dir: args.model_dir,
        prefer_mp4: args.mp4,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.to_string()))?;
    runtime
        .block_on(serve(config, args.addr))
        .map_err(|e| CliError::Service(e.to_string()))
}
