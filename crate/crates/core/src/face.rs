// SPDX-License-Identifier: Apache-2.0

//! Face detection contract, gender label normalization, box squaring,
//! clamping and crop extraction.

use std::path::Path;

use crate::backend::BackendError;
use crate::image::ImageBuffer;
use crate::model::{BoundingBox, FaceRecord, Gender};

#[derive(Debug, thiserror::Error)]
pub enum FaceError {
    #[error(transparent)]
    BackendFailure(#[from] BackendError),
    #[error("unknown gender label `{0}`")]
    UnknownGenderLabel(String),
    #[error("box {bbox} is not inside the {width}x{height} image")]
    OutOfBounds {
        bbox: BoundingBox,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectorCapabilities {
    pub gender_estimation: bool,
    pub pose_estimation: bool,
}

/// What a detection backend hands back for one face, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub bbox: BoundingBox,
    pub gender_label: Option<String>,
    pub confidence: f64,
    pub yaw_degrees: Option<f64>,
}

pub trait FaceDetector: Send + Sync {
    fn name(&self) -> &str;

    /// Identity used in cache keys; should change whenever the backend's
    /// output for the same image could change.
    fn id(&self) -> String {
        self.name().to_string()
    }

    fn capabilities(&self) -> DetectorCapabilities;

    fn detect(&self, image: &ImageBuffer, source: &Path) -> Result<Vec<RawDetection>, BackendError>;
}

/// A normalized detection, ready for the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedFace {
    pub record: FaceRecord,
    pub yaw_degrees: Option<f64>,
    pub warnings: Vec<String>,
}

/// What to do with gender labels the mapping does not know.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenderPolicy {
    pub fallback: Gender,
}

impl Default for GenderPolicy {
    fn default() -> Self {
        Self {
            fallback: Gender::Female,
        }
    }
}

pub fn normalize_gender(raw_label: &str) -> Result<Gender, FaceError> {
    match raw_label.trim().to_ascii_lowercase().as_str() {
        "woman" | "female" | "f" => Ok(Gender::Female),
        "man" | "male" | "m" => Ok(Gender::Male),
        _ => Err(FaceError::UnknownGenderLabel(raw_label.to_string())),
    }
}

/// Runs the backend and normalizes its output: records are sorted by
/// confidence (descending, stable for ties), numbered from 0 in that order,
/// and given a squared box clamped to the image.
pub fn detect_faces(
    backend: &dyn FaceDetector,
    image: &ImageBuffer,
    source: &Path,
    policy: GenderPolicy,
) -> Result<Vec<DetectedFace>, FaceError> {
    let raw = backend.detect(image, source)?;
    let (img_w, img_h) = (image.width() as i64, image.height() as i64);

    let mut kept = Vec::with_capacity(raw.len());
    for det in raw {
        if !(0.0..=1.0).contains(&det.confidence) {
            return Err(BackendError::new(
                backend.name(),
                format!("confidence {} outside [0, 1]", det.confidence),
            )
            .into());
        }
        if !det.bbox.is_valid() {
            return Err(BackendError::new(backend.name(), format!("degenerate box {}", det.bbox)).into());
        }
        let b = det.bbox;
        if b.right() <= 0 || b.bottom() <= 0 || b.x >= img_w || b.y >= img_h {
            log::warn!("{}: dropping box {} outside {}x{} image", backend.name(), b, img_w, img_h);
            continue;
        }
        kept.push(det);
    }
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    Ok(kept
        .into_iter()
        .enumerate()
        .map(|(i, det)| {
            let mut warnings = Vec::new();
            let gender = match det.gender_label.as_deref() {
                Some(label) => normalize_gender(label).unwrap_or_else(|_| {
                    warnings.push(format!("unknown_gender_label:{label}"));
                    policy.fallback
                }),
                None => {
                    warnings.push("missing_gender_label".to_string());
                    policy.fallback
                }
            };
            let square = clamp_box(square_box(det.bbox), img_w, img_h);
            DetectedFace {
                record: FaceRecord {
                    face_id: i as u32,
                    bbox: det.bbox,
                    square_box: square,
                    gender,
                    confidence: det.confidence,
                },
                yaw_degrees: det.yaw_degrees,
                warnings,
            }
        })
        .collect())
}

/// Grows the shorter side to make the box square around the same center,
/// using floor division throughout. No clamping.
pub fn square_box(b: BoundingBox) -> BoundingBox {
    let size = b.w.max(b.h);
    let x_center = b.x + b.w.div_euclid(2);
    let y_center = b.y + b.h.div_euclid(2);
    BoundingBox::new(x_center - size.div_euclid(2), y_center - size.div_euclid(2), size, size)
}

/// Moves a square box the minimum distance needed to lie inside the image.
/// A box larger than the shorter image side is first shrunk to that side,
/// re-centered on its original center.
pub fn clamp_box(b: BoundingBox, img_w: i64, img_h: i64) -> BoundingBox {
    debug_assert!(b.is_square());
    debug_assert!(img_w > 0 && img_h > 0);
    let limit = img_w.min(img_h);
    let (mut x, mut y, mut side) = (b.x, b.y, b.w);
    if side > limit {
        let cx = x + side.div_euclid(2);
        let cy = y + side.div_euclid(2);
        side = limit;
        x = cx - side.div_euclid(2);
        y = cy - side.div_euclid(2);
    }
    x = x.clamp(0, img_w - side);
    y = y.clamp(0, img_h - side);
    BoundingBox::new(x, y, side, side)
}

/// Copies the region `[x, x+w) x [y, y+h)`. The box must lie inside the image.
pub fn crop_face(image: &ImageBuffer, b: BoundingBox) -> Result<ImageBuffer, FaceError> {
    if !b.is_inside(image.width() as i64, image.height() as i64) {
        return Err(FaceError::OutOfBounds {
            bbox: b,
            width: image.width(),
            height: image.height(),
        });
    }
    let (x, y, w, h) = (b.x as usize, b.y as usize, b.w as usize, b.h as usize);
    let c = image.channels();
    let mut data = Vec::with_capacity(w * h * c);
    for row in y..y + h {
        data.extend_from_slice(&image.row(row)[x * c..(x + w) * c]);
    }
    Ok(ImageBuffer::from_raw(w, h, c, data).expect("crop geometry"))
}
