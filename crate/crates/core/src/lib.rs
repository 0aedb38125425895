// SPDX-License-Identifier: Apache-2.0

//! Turns the faces in artworks into narrated talking-portrait videos: face
//! detection and square cropping, first-person narration from a
//! vision-language model, speech synthesis, audio-driven animation and
//! compositing back into the artwork, plus the metrics used to judge them.

pub mod animation;
pub mod backend;
pub mod backends;
pub mod codec;
pub mod compositor;
pub mod container;
pub mod dataset;
pub mod digest;
pub mod evaluation;
pub mod face;
pub mod image;
pub mod manifest;
pub mod model;
pub mod narration;
pub mod pipeline;
pub mod voicing;

pub use animation::{FrameSequence, PortraitAnimator};
pub use backend::BackendError;
pub use backends::{BackendChoices, BackendSet};
pub use codec::ArtifactName;
pub use face::FaceDetector;
pub use image::ImageBuffer;
pub use manifest::{JobState, RunManifest};
pub use model::{ArtworkMetadata, BoundingBox, FaceRecord, Gender, MediaAsset};
pub use narration::{PromptMode, VisionLanguageModel};
pub use pipeline::{resume, run_pipeline, PipelineConfig, RunOutcome};
pub use voicing::{AudioSegment, SpeechSynthesizer};
