// SPDX-License-Identifier: Apache-2.0

//! Per-run manifest: the record every stage reads and appends to, persisted as
//! `manifest.json` in the run directory so interrupted runs can resume.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ArtworkMetadata, AssetKind, BoundingBox, FaceRecord, Gender, MediaAsset};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("face {0} is not in the manifest")]
    UnknownFace(u32),
    #[error("face {face_id}: cannot append {kind} after {have} completed stage(s)")]
    StageOrderViolation {
        face_id: u32,
        kind: AssetKind,
        have: usize,
    },
    #[error("face {face_id}: illegal state transition {from:?} -> {to:?}")]
    IllegalTransition {
        face_id: u32,
        from: JobState,
        to: JobState,
    },
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("corrupt manifest {path}: {reason}")]
    CorruptManifest { path: String, reason: String },
    #[error("missing asset file {0}")]
    MissingAsset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-face job state. Progression is monotone and `Failed` is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Detected,
    Described,
    Voiced,
    Animated,
    Composited,
    Failed(String),
}

impl JobState {
    fn rank(&self) -> Option<u8> {
        match self {
            JobState::Pending => Some(0),
            JobState::Detected => Some(1),
            JobState::Described => Some(2),
            JobState::Voiced => Some(3),
            JobState::Animated => Some(4),
            JobState::Composited => Some(5),
            JobState::Failed(_) => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, JobState::Failed(_))
    }

    pub fn can_advance_to(&self, next: &JobState) -> bool {
        match (self.rank(), next.rank()) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(a), Some(b)) => b > a,
        }
    }
}

impl std::fmt::Display for JobState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            JobState::Pending => "pending",
            JobState::Detected => "detected",
            JobState::Described => "described",
            JobState::Voiced => "voiced",
            JobState::Animated => "animated",
            JobState::Composited => "composited",
            JobState::Failed(reason) => return write!(f, "failed({reason})"),
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NarrationStatus {
    Usable,
    Refusal,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrationRecord {
    /// Curated text handed to speech synthesis; empty unless usable.
    pub text: String,
    pub status: NarrationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub raw: String,
    pub attempts: u32,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceEntry {
    pub face_id: u32,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub square_box: BoundingBox,
    pub gender: Gender,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_degrees: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub state: JobState,
    #[serde(default)]
    pub assets: Vec<MediaAsset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narration: Option<NarrationRecord>,
}

impl FaceEntry {
    pub fn new(record: &FaceRecord) -> Self {
        Self {
            face_id: record.face_id,
            bbox: record.bbox,
            square_box: record.square_box,
            gender: record.gender,
            confidence: record.confidence,
            yaw_degrees: None,
            warnings: Vec::new(),
            state: JobState::Detected,
            assets: Vec::new(),
            narration: None,
        }
    }

    pub fn record(&self) -> FaceRecord {
        FaceRecord {
            face_id: self.face_id,
            bbox: self.bbox,
            square_box: self.square_box,
            gender: self.gender,
            confidence: self.confidence,
        }
    }

    pub fn asset(&self, kind: AssetKind) -> Option<&MediaAsset> {
        self.assets.iter().find(|a| a.kind == kind)
    }

    pub fn advance(&mut self, next: JobState) -> Result<(), ManifestError> {
        if !self.state.can_advance_to(&next) {
            return Err(ManifestError::IllegalTransition {
                face_id: self.face_id,
                from: self.state.clone(),
                to: next,
            });
        }
        self.state = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub backend: String,
    /// Number of faces the backend returned, before face selection.
    pub detected: usize,
    pub hash: String,
    /// Every normalized detection, so face selection can change on resume
    /// without re-running the detector.
    #[serde(default)]
    pub records: Vec<DetectedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedRecord {
    #[serde(flatten)]
    pub record: FaceRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw_degrees: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Logical clock entry: the order in which stages completed during the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_id: Option<u32>,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub source: String,
    pub metadata: Option<ArtworkMetadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionRecord>,
    pub faces: Vec<FaceEntry>,
    #[serde(default)]
    pub stages: Vec<StageEvent>,
}

impl RunManifest {
    pub fn new(source: impl Into<String>, metadata: Option<ArtworkMetadata>) -> Self {
        Self {
            source: source.into(),
            metadata,
            detection: None,
            faces: Vec::new(),
            stages: Vec::new(),
        }
    }

    pub fn face(&self, face_id: u32) -> Option<&FaceEntry> {
        self.faces.iter().find(|f| f.face_id == face_id)
    }

    pub fn face_mut(&mut self, face_id: u32) -> Result<&mut FaceEntry, ManifestError> {
        self.faces
            .iter_mut()
            .find(|f| f.face_id == face_id)
            .ok_or(ManifestError::UnknownFace(face_id))
    }

    pub fn log_stage(&mut self, face_id: Option<u32>, stage: impl Into<String>) {
        let seq = self.stages.len() as u64 + 1;
        self.stages.push(StageEvent {
            seq,
            face_id,
            stage: stage.into(),
        });
    }

    /// Appends `asset` to the face's stage list. Stages must arrive in
    /// pipeline order: the asset kind has to be the next one after the
    /// assets already recorded.
    pub fn append(&mut self, face_id: u32, asset: MediaAsset) -> Result<(), ManifestError> {
        asset.validate().map_err(ManifestError::InvalidAsset)?;
        let face = self.face_mut(face_id)?;
        let have = face.assets.len();
        if asset.kind.position() != have {
            return Err(ManifestError::StageOrderViolation {
                face_id,
                kind: asset.kind,
                have,
            });
        }
        face.assets.push(asset);
        Ok(())
    }

    /// Checks that every recorded asset exists relative to `run_dir`.
    pub fn verify_assets(&self, run_dir: &Path) -> Result<(), ManifestError> {
        for face in &self.faces {
            for asset in &face.assets {
                let p = run_dir.join(&asset.path);
                if !p.exists() {
                    return Err(ManifestError::MissingAsset(p.display().to_string()));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ManifestError> {
        let m: RunManifest = serde_json::from_str(text).map_err(|e| ManifestError::CorruptManifest {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        for face in &m.faces {
            for (i, asset) in face.assets.iter().enumerate() {
                if asset.kind.position() != i {
                    return Err(ManifestError::CorruptManifest {
                        path: origin.to_string(),
                        reason: format!("face {} stages out of order", face.face_id),
                    });
                }
            }
        }
        Ok(m)
    }

    /// Writes through a temporary file and renames, so a crash never leaves a
    /// half-written manifest behind.
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }
}
