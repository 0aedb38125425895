// SPDX-License-Identifier: Apache-2.0

//! Artifact filename codec: `<stem>_<face_id>_<w>_<h>_<x>_<y>_<gender>.<ext>`.
//!
//! The stem is the source image filename without its extension and may itself
//! contain underscores, so decoding consumes the fixed fields from the right.

use std::fmt;

use crate::model::{BoundingBox, Gender};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed artifact name `{name}`: {reason}")]
    MalformedName { name: String, reason: String },
}

fn malformed(name: &str, reason: impl Into<String>) -> CodecError {
    CodecError::MalformedName {
        name: name.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArtifactName {
    pub stem: String,
    pub face_id: u32,
    pub w: i64,
    pub h: i64,
    pub x: i64,
    pub y: i64,
    pub gender: Gender,
}

impl ArtifactName {
    pub fn new(stem: impl Into<String>, face_id: u32, crop: BoundingBox, gender: Gender) -> Self {
        Self {
            stem: stem.into(),
            face_id,
            w: crop.w,
            h: crop.h,
            x: crop.x,
            y: crop.y,
            gender,
        }
    }

    pub fn crop_box(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }

    /// Name without extension.
    pub fn base(&self) -> String {
        format!(
            "{}_{}_{}_{}_{}_{}_{}",
            self.stem, self.face_id, self.w, self.h, self.x, self.y, self.gender
        )
    }

    pub fn with_extension(&self, ext: &str) -> String {
        encode_artifact_name(self, ext)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stem.is_empty() {
            return Err("empty stem".into());
        }
        if self.stem.contains(['/', '\\']) {
            return Err("stem contains a path separator".into());
        }
        if self.w <= 0 || self.h <= 0 {
            return Err(format!("non-positive crop size {}x{}", self.w, self.h));
        }
        Ok(())
    }
}

impl fmt::Display for ArtifactName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.base())
    }
}

/// Total on names satisfying [`ArtifactName::validate`] and an extension
/// without dots.
pub fn encode_artifact_name(a: &ArtifactName, ext: &str) -> String {
    debug_assert!(!ext.is_empty() && !ext.contains('.'));
    format!("{}.{}", a.base(), ext)
}

pub fn decode_artifact_name(name: &str) -> Result<ArtifactName, CodecError> {
    decode_with_extension(name).map(|(a, _)| a)
}

/// Decodes a file name, returning the record and its extension.
pub fn decode_with_extension(name: &str) -> Result<(ArtifactName, String), CodecError> {
    let (base, ext) = name
        .rsplit_once('.')
        .ok_or_else(|| malformed(name, "missing extension"))?;
    if ext.is_empty() {
        return Err(malformed(name, "empty extension"));
    }

    let mut fields = base.rsplitn(7, '_');
    let mut next = |what: &str| {
        fields
            .next()
            .ok_or_else(|| malformed(name, format!("missing {what} field (need 7 underscore-delimited tokens)")))
    };
    let gender_tok = next("gender")?;
    let y_tok = next("y")?;
    let x_tok = next("x")?;
    let h_tok = next("h")?;
    let w_tok = next("w")?;
    let id_tok = next("face_id")?;
    let stem = next("stem")?;

    let gender = gender_tok
        .parse::<Gender>()
        .map_err(|e| malformed(name, e.to_string()))?;
    let int = |tok: &str, what: &str| -> Result<i64, CodecError> {
        let v: i64 = tok
            .parse()
            .map_err(|_| malformed(name, format!("{what} `{tok}` is not an integer")))?;
        // Only canonical renderings decode, so encode(decode(s)) == s.
        if v.to_string() != tok {
            return Err(malformed(name, format!("{what} `{tok}` is not in canonical form")));
        }
        Ok(v)
    };
    let face_id = int(id_tok, "face_id")?;
    let face_id = u32::try_from(face_id).map_err(|_| malformed(name, "face_id out of range"))?;

    let a = ArtifactName {
        stem: stem.to_string(),
        face_id,
        w: int(w_tok, "w")?,
        h: int(h_tok, "h")?,
        x: int(x_tok, "x")?,
        y: int(y_tok, "y")?,
        gender,
    };
    a.validate().map_err(|r| malformed(name, r))?;
    Ok((a, ext.to_string()))
}
