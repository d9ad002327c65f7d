//! Writing frames, control images and videos to disk.

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, ImageEncoder, RgbImage, RgbaImage};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use crate::error::Result;
use crate::pipeline::VideoFrames;
use crate::raster::encode_png_gray;
use crate::tween::ControlSequence;

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.png")
}

pub fn control_file_name(i: usize) -> String {
    format!("control_{i:04}.png")
}

pub fn frame_image(video: &VideoFrames, i: usize) -> RgbImage {
    let (h, w, _) = video.frames[i].dim();
    RgbImage::from_raw(w as u32, h as u32, video.rgb8(i)).expect("frame buffer matches its dimensions")
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

/// Writes `frame_%04d.png` for every frame and returns the paths.
pub fn write_frames(video: &VideoFrames, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    (0..video.len())
        .map(|i| {
            let path = dir.join(frame_file_name(i));
            fs::write(&path, encode_png_rgb(&frame_image(video, i))?)?;
            Ok(path)
        })
        .collect()
}

/// Writes `control_%04d.png` for every control frame.
pub fn write_control_frames(control: &ControlSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    control
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(control_file_name(i));
            fs::write(&path, f.to_png()?)?;
            Ok(path)
        })
        .collect()
}

pub fn write_control_strip(control: &ControlSequence, path: &Path) -> Result<()> {
    fs::write(path, encode_png_gray(&control.contact_strip()?)?)?;
    Ok(())
}

/// Animated, endlessly looping GIF. Frame delays are rounded to whole
/// milliseconds.
pub fn encode_gif(video: &VideoFrames) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = GifEncoder::new_with_speed(&mut out, 10);
        enc.set_repeat(Repeat::Infinite)?;
        let delay_ms = (1000.0 / video.frame_rate).round().max(1.0) as u32;
        for i in 0..video.len() {
            let rgba: RgbaImage = image::DynamicImage::ImageRgb8(frame_image(video, i)).to_rgba8();
            enc.encode_frame(Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(delay_ms, 1)))?;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    Gif,
    Mp4,
}

impl VideoFormat {
    pub fn content_type(self) -> &'static str {
        match self {
            VideoFormat::Gif => "image/gif",
            VideoFormat::Mp4 => "video/mp4",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            VideoFormat::Gif => "gif",
            VideoFormat::Mp4 => "mp4",
        }
    }

    /// Sniffs the container from its first bytes.
    pub fn detect(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
            Some(VideoFormat::Gif)
        } else if bytes.len() >= 8 && &bytes[4..8] == b"ftyp" {
            Some(VideoFormat::Mp4)
        } else {
            None
        }
    }
}

/// Writes `video.mp4` through an `ffmpeg` found on `PATH` when `prefer_mp4`
/// is set, otherwise (or when encoding fails) `video.gif`.
/// `frames_dir` must already hold the numbered frame PNGs.
pub fn write_video(video: &VideoFrames, frames_dir: &Path, out_dir: &Path, prefer_mp4: bool) -> Result<(PathBuf, VideoFormat)> {
    if prefer_mp4 {
        let path = out_dir.join("video.mp4");
        if encode_mp4_with_ffmpeg(frames_dir, video.frame_rate, &path) {
            return Ok((path, VideoFormat::Mp4));
        }
        log::warn!("ffmpeg unavailable or failed; writing GIF instead");
    }
    let path = out_dir.join("video.gif");
    fs::write(&path, encode_gif(video)?)?;
    Ok((path, VideoFormat::Gif))
}

fn encode_mp4_with_ffmpeg(frames_dir: &Path, frame_rate: f64, out: &Path) -> bool {
    let status = Command::new("ffmpeg")
        .args(["-y", "-loglevel", "error", "-framerate"])
        .arg(frame_rate.to_string())
        .arg("-i")
        .arg(frames_dir.join("frame_%04d.png"))
        .args(["-pix_fmt", "yuv420p", "-vf", "pad=ceil(iw/2)*2:ceil(ih/2)*2"])
        .arg(out)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status();
    matches!(status, Ok(s) if s.success()) && fs::metadata(out).map(|m| m.len() > 0).unwrap_or(false)
}
