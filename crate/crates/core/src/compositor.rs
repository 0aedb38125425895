// SPDX-License-Identifier: Apache-2.0

//! Re-insertion of the animated face into the artwork and final muxing.

use std::path::Path;

use crate::animation::FrameSequence;
use crate::codec::ArtifactName;
use crate::container::{ContainerError, Mp4Writer};
use crate::image::{ImageBuffer, ImageError};
use crate::model::{AssetKind, BoundingBox, MediaAsset};
use crate::voicing::AudioSegment;

#[derive(Debug, thiserror::Error)]
pub enum CompositorError {
    #[error("patch is {got_w}x{got_h}, box {box_w}x{box_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        box_w: i64,
        box_h: i64,
    },
    #[error("box {bbox} is outside the {width}x{height} base image")]
    OutOfBounds { bbox: BoundingBox, width: usize, height: usize },
    #[error("animation has no frames")]
    EmptyAnimation,
    #[error("video lasts {video_s:.4} s, audio {audio_s:.4} s (tolerance {tolerance_s:.4} s)")]
    DurationMismatch { video_s: f64, audio_s: f64, tolerance_s: f64 },
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bilinear resize with pixel-center alignment. Same-size input is copied
/// unchanged.
pub fn resize_frame(f: &ImageBuffer, w: usize, h: usize) -> ImageBuffer {
    assert!(w > 0 && h > 0, "target size must be positive");
    if (w, h) == (f.width(), f.height()) {
        return f.clone();
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(w, f.width());
    let ys = axis(h, f.height());
    let c = f.channels();
    let mut out = ImageBuffer::filled(w, h, c, 0);
    for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
        let (r0, r1) = (f.row(y0), f.row(y1));
        let dst = out.row_mut(y);
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let top = r0[x0 * c + ch] as f64 * (1.0 - tx) + r0[x1 * c + ch] as f64 * tx;
                let bot = r1[x0 * c + ch] as f64 * (1.0 - tx) + r1[x1 * c + ch] as f64 * tx;
                dst[x * c + ch] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Returns a copy of `base` with `patch` pasted at `bbox`.
pub fn insert_region(base: &ImageBuffer, patch: &ImageBuffer, bbox: BoundingBox) -> Result<ImageBuffer, CompositorError> {
    if patch.width() as i64 != bbox.w || patch.height() as i64 != bbox.h {
        return Err(CompositorError::DimensionMismatch {
            got_w: patch.width(),
            got_h: patch.height(),
            box_w: bbox.w,
            box_h: bbox.h,
        });
    }
    if !bbox.is_inside(base.width() as i64, base.height() as i64) {
        return Err(CompositorError::OutOfBounds {
            bbox,
            width: base.width(),
            height: base.height(),
        });
    }
    let patch = patch.to_channels(base.channels());
    let c = base.channels();
    let (x, y, w) = (bbox.x as usize, bbox.y as usize, bbox.w as usize);
    let mut out = base.clone();
    for row in 0..patch.height() {
        out.row_mut(y + row)[x * c..(x + w) * c].copy_from_slice(patch.row(row));
    }
    Ok(out)
}

fn compose_one(base: &ImageBuffer, frame: &ImageBuffer, bbox: BoundingBox) -> Result<ImageBuffer, CompositorError> {
    if bbox.w <= 0 || bbox.h <= 0 {
        return Err(CompositorError::OutOfBounds {
            bbox,
            width: base.width(),
            height: base.height(),
        });
    }
    insert_region(base, &resize_frame(frame, bbox.w as usize, bbox.h as usize), bbox)
}

fn compose_batch(base: &ImageBuffer, frames: &[ImageBuffer], bbox: BoundingBox) -> Result<Vec<ImageBuffer>, CompositorError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(frames.len().max(1));
    if workers <= 1 {
        return frames.iter().map(|f| compose_one(base, f, bbox)).collect();
    }
    let per = frames.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = frames
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(|f| compose_one(base, f, bbox)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(frames.len());
        for h in handles {
            out.extend(h.join().expect("composition worker panicked")?);
        }
        Ok(out)
    })
}

/// Pastes every animation frame, resized to the box, into a copy of `base`.
pub fn compose_video(base: &ImageBuffer, anim: &FrameSequence, bbox: BoundingBox) -> Result<FrameSequence, CompositorError> {
    if anim.is_empty() {
        return Err(CompositorError::EmptyAnimation);
    }
    Ok(FrameSequence::new(compose_batch(base, &anim.frames, bbox)?, anim.fps))
}

pub fn mux_tolerance_s(fps: f64, sample_rate: u32) -> f64 {
    1.0 / fps + 1.0 / sample_rate as f64
}

fn check_durations(video_s: f64, fps: f64, audio: &AudioSegment) -> Result<(), CompositorError> {
    let audio_s = audio.duration_s();
    let tolerance_s = mux_tolerance_s(fps, audio.sample_rate);
    if (video_s - audio_s).abs() > tolerance_s + 1e-9 {
        return Err(CompositorError::DurationMismatch {
            video_s,
            audio_s,
            tolerance_s,
        });
    }
    Ok(())
}

/// Writes `<dir>/<name>.mp4` with the audio starting at t = 0.
pub fn mux(video: &FrameSequence, audio: &AudioSegment, out_name: &ArtifactName, dir: &Path) -> Result<MediaAsset, CompositorError> {
    if video.is_empty() {
        return Err(CompositorError::EmptyAnimation);
    }
    check_durations(video.duration_s(), video.fps, audio)?;
    let file = out_name.with_extension(AssetKind::FinalVideo.extension());
    let summary = crate::container::write_mp4(&dir.join(&file), video, Some(audio))?;
    Ok(MediaAsset {
        kind: AssetKind::FinalVideo,
        path: file,
        duration_s: Some(summary.duration_s),
        fps: Some(video.fps),
        hash: String::new(),
    })
}

/// Composes and muxes in one streaming pass, so full-size frames are never
/// all held in memory. With `frames_dir`, each composed frame is also saved
/// as `%06d.png` there.
pub fn render_final(
    base: &ImageBuffer,
    anim: &FrameSequence,
    bbox: BoundingBox,
    audio: &AudioSegment,
    out_path: &Path,
    frames_dir: Option<&Path>,
) -> Result<f64, CompositorError> {
    const BATCH: usize = 32;
    if anim.is_empty() {
        return Err(CompositorError::EmptyAnimation);
    }
    check_durations(anim.duration_s(), anim.fps, audio)?;
    if let Some(d) = frames_dir {
        std::fs::create_dir_all(d)?;
    }
    let mut writer = Mp4Writer::create(out_path, base.width(), base.height(), anim.fps)?;
    let mut index = 0usize;
    for batch in anim.frames.chunks(BATCH) {
        for frame in compose_batch(base, batch, bbox)? {
            writer.push_frame(&frame)?;
            if let Some(d) = frames_dir {
                frame.save_png(&d.join(format!("{index:06}.png")))?;
            }
            index += 1;
        }
    }
    Ok(writer.finish(Some(audio))?.duration_s)
}
