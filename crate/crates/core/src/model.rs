// SPDX-License-Identifier: Apache-2.0

//! Shared domain types used by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Integer pixel rectangle. `x`/`y` is the top-left corner, `x` grows right
/// and `y` grows down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl BoundingBox {
    pub const fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    pub fn is_square(&self) -> bool {
        self.w == self.h
    }

    pub fn right(&self) -> i64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h
    }

    pub fn area(&self) -> i64 {
        self.w.max(0) * self.h.max(0)
    }

    /// True when the box lies entirely within a `width` x `height` image.
    pub fn is_inside(&self, width: i64, height: i64) -> bool {
        self.is_valid() && self.x >= 0 && self.y >= 0 && self.right() <= width && self.bottom() <= height
    }

    /// Intersection-over-union with another box; 0 when either is empty.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(&self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown gender token `{0}`")]
pub struct UnknownGender(pub String);

impl FromStr for Gender {
    type Err = UnknownGender;

    /// Strict parse of the canonical lowercase tokens. Backend vocabularies
    /// ("Woman", "M", ...) go through [`crate::face::normalize_gender`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "female" => Ok(Gender::Female),
            "male" => Ok(Gender::Male),
            other => Err(UnknownGender(other.to_string())),
        }
    }
}

/// One detected face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub face_id: u32,
    /// Raw detector output.
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// After squaring and clamping; this is the box used for crop and paste.
    pub square_box: BoundingBox,
    pub gender: Gender,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtworkMetadata {
    pub author: String,
    pub title: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source_file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    FaceCrop,
    Audio,
    FaceAnimation,
    FinalVideo,
}

impl AssetKind {
    /// Pipeline order of the per-face stages.
    pub const ORDER: [AssetKind; 4] = [
        AssetKind::FaceCrop,
        AssetKind::Audio,
        AssetKind::FaceAnimation,
        AssetKind::FinalVideo,
    ];

    pub fn position(&self) -> usize {
        *self as usize
    }

    pub fn is_video(&self) -> bool {
        matches!(self, AssetKind::FaceAnimation | AssetKind::FinalVideo)
    }

    pub fn extension(&self) -> &'static str {
        match self {
            AssetKind::FaceCrop => "png",
            AssetKind::Audio => "wav",
            AssetKind::FaceAnimation | AssetKind::FinalVideo => "mp4",
        }
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssetKind::FaceCrop => "face_crop",
            AssetKind::Audio => "audio",
            AssetKind::FaceAnimation => "face_animation",
            AssetKind::FinalVideo => "final_video",
        })
    }
}

/// A stored intermediate, referenced from the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaAsset {
    pub kind: AssetKind,
    /// Relative to the run directory.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
    /// Digest of the stage inputs and the configuration the stage reads.
    pub hash: String,
}

impl MediaAsset {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(d) = self.duration_s {
            if d.is_nan() || d < 0.0 {
                return Err(format!("negative duration {d} for {}", self.kind));
            }
        }
        if self.kind.is_video() {
            match self.fps {
                Some(f) if f > 0.0 => {}
                other => return Err(format!("video asset {} needs fps > 0, got {other:?}", self.kind)),
            }
        }
        Ok(())
    }
}
