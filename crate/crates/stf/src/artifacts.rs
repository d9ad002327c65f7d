//! On-disk layout of a finished generation, shared by the CLI and the service.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use stf_core::export::{write_control_frames, write_control_strip, write_frames, write_video, VideoFormat};
use stf_core::GenerationOutput;

pub const CONTROL_STRIP: &str = "control_strip.png";
pub const CONTROL_DIR: &str = "control";
pub const FRAMES_DIR: &str = "frames";

/// Artifact locations relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_strip: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video: Option<String>,
}

/// Writes the control strip, control frames, RGB frames and the video into
/// `dir`.
pub fn write_generation(output: &GenerationOutput, dir: &Path, prefer_mp4: bool) -> stf_core::Result<(ArtifactPaths, VideoFormat)> {
    fs::create_dir_all(dir)?;
    write_control_strip(&output.control, &dir.join(CONTROL_STRIP))?;
    write_control_frames(&output.control, &dir.join(CONTROL_DIR))?;
    let frames_dir = dir.join(FRAMES_DIR);
    write_frames(&output.video, &frames_dir)?;
    let (video, format) = write_video(&output.video, &frames_dir, dir, prefer_mp4)?;
    let name = video.file_name().expect("video path has a file name").to_string_lossy().into_owned();
    Ok((
        ArtifactPaths {
            control_strip: Some(CONTROL_STRIP.into()),
            frames_dir: Some(FRAMES_DIR.into()),
            video: Some(name),
        },
        format,
    ))
}
