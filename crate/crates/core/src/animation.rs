// SPDX-License-Identifier: Apache-2.0

//! Portrait-animation contract: pose gating, per-chunk animation and
//! concatenation.

use std::collections::HashMap;

use crate::backend::BackendError;
use crate::compositor::resize_frame;
use crate::digest::Digest;
use crate::image::ImageBuffer;
use crate::voicing::AudioSegment;

/// Frame rate assumed when a backend does not declare one.
pub const DEFAULT_FPS: f64 = 25.0;

#[derive(Debug, thiserror::Error)]
pub enum AnimationError {
    #[error("portrait animation needs a square face, got {width}x{height}")]
    NonSquareInput { width: usize, height: usize },
    #[error("audio is {duration_s:.3} s, longer than the {max_len_s} s limit")]
    AudioTooLong { duration_s: f64, max_len_s: f64 },
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("chunk {index}: {source}")]
    Chunk {
        index: usize,
        #[source]
        source: Box<AnimationError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<ImageBuffer>,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<ImageBuffer>, fps: f64) -> Self {
        Self { frames, fps }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn last(&self) -> Option<&ImageBuffer> {
        self.frames.last()
    }

    pub fn extend(&mut self, other: FrameSequence) {
        self.frames.extend(other.frames);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadPoseEstimate {
    pub yaw_degrees: f64,
}

/// True iff the head is turned less than `threshold_deg` away from frontal.
pub fn check_animatable(pose: HeadPoseEstimate, threshold_deg: f64) -> bool {
    debug_assert!(threshold_deg > 0.0);
    pose.yaw_degrees.abs() < threshold_deg
}

pub trait PortraitAnimator: Send + Sync {
    fn name(&self) -> &str;

    fn id(&self) -> String {
        self.name().to_string()
    }

    /// Output frame rate, if the backend fixes one.
    fn declared_fps(&self) -> Option<f64> {
        None
    }

    fn animate(&self, face: &ImageBuffer, audio: &AudioSegment, fps: f64) -> Result<FrameSequence, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimationOptions {
    pub fps: f64,
    pub max_len_s: f64,
}

impl Default for AnimationOptions {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            max_len_s: 20.0,
        }
    }
}

pub fn expected_frames(duration_s: f64, fps: f64) -> usize {
    (duration_s * fps).round() as usize
}

/// Animates one face for one audio segment. The result always has
/// `round(duration * fps)` frames of the face's size: backend output that is
/// a few frames off is trimmed or padded with its last frame, and frames of a
/// different resolution are resized.
pub fn animate_face(
    backend: &dyn PortraitAnimator,
    face: &ImageBuffer,
    audio: &AudioSegment,
    opts: &AnimationOptions,
) -> Result<FrameSequence, AnimationError> {
    if !face.is_square() {
        return Err(AnimationError::NonSquareInput {
            width: face.width(),
            height: face.height(),
        });
    }
    let duration_s = audio.duration_s();
    if duration_s > opts.max_len_s {
        return Err(AnimationError::AudioTooLong {
            duration_s,
            max_len_s: opts.max_len_s,
        });
    }
    let fps = backend.declared_fps().unwrap_or(opts.fps);
    let want = expected_frames(duration_s, fps);
    let mut seq = backend.animate(face, audio, fps)?;
    if seq.is_empty() && want > 0 {
        return Err(BackendError::new(backend.name(), "returned no frames").into());
    }
    if seq.len() != want {
        log::warn!("{}: {} frames for {} expected, adjusting", backend.name(), seq.len(), want);
        if seq.len() > want {
            seq.frames.truncate(want);
        } else if let Some(last) = seq.frames.last().cloned() {
            seq.frames.resize(want, last);
        }
    }
    for f in &mut seq.frames {
        if f.width() != face.width() || f.height() != face.height() {
            *f = resize_frame(f, face.width(), face.height());
        }
    }
    seq.fps = fps;
    Ok(seq)
}

/// Completed per-chunk animations, so a failed multi-chunk run can resume
/// without re-animating the chunks that succeeded.
pub trait ChunkCache {
    fn load(&mut self, key: &str) -> Option<FrameSequence>;
    fn store(&mut self, key: &str, frames: &FrameSequence);
}

#[derive(Debug, Default)]
pub struct MemoryChunkCache {
    entries: HashMap<String, FrameSequence>,
}

impl MemoryChunkCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChunkCache for MemoryChunkCache {
    fn load(&mut self, key: &str) -> Option<FrameSequence> {
        self.entries.get(key).cloned()
    }

    fn store(&mut self, key: &str, frames: &FrameSequence) {
        self.entries.insert(key.to_string(), frames.clone());
    }
}

struct NoCache;

impl ChunkCache for NoCache {
    fn load(&mut self, _: &str) -> Option<FrameSequence> {
        None
    }
    fn store(&mut self, _: &str, _: &FrameSequence) {}
}

/// Cache key of one chunk: backend identity, options, face pixels and
/// chunk samples.
pub fn chunk_key(backend: &dyn PortraitAnimator, face: &ImageBuffer, chunk: &AudioSegment, opts: &AnimationOptions) -> String {
    let mut d = Digest::new("anim-chunk");
    d.str(&backend.id()).f64("fps", opts.fps).f64("max", opts.max_len_s);
    d.field("dims", format!("{:?}", face.dims())).bytes(face.data());
    d.field("sr", chunk.sample_rate);
    let bytes: Vec<u8> = chunk.samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    d.bytes(&bytes);
    d.finish()
}

/// Animates every chunk from the original still and concatenates in order.
pub fn animate_chunks(
    backend: &dyn PortraitAnimator,
    face: &ImageBuffer,
    chunks: &[AudioSegment],
    opts: &AnimationOptions,
) -> Result<FrameSequence, AnimationError> {
    animate_chunks_cached(backend, face, chunks, opts, &mut NoCache)
}

pub fn animate_chunks_cached(
    backend: &dyn PortraitAnimator,
    face: &ImageBuffer,
    chunks: &[AudioSegment],
    opts: &AnimationOptions,
    cache: &mut dyn ChunkCache,
) -> Result<FrameSequence, AnimationError> {
    let fps = backend.declared_fps().unwrap_or(opts.fps);
    let mut out = FrameSequence::new(Vec::new(), fps);
    for (index, chunk) in chunks.iter().enumerate() {
        let key = chunk_key(backend, face, chunk, opts);
        let seq = match cache.load(&key) {
            Some(seq) => seq,
            None => {
                let seq = animate_face(backend, face, chunk, opts).map_err(|e| AnimationError::Chunk {
                    index,
                    source: Box::new(e),
                })?;
                cache.store(&key, &seq);
                seq
            }
        };
        out.extend(seq);
    }
    Ok(out)
}
