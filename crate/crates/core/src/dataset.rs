// SPDX-License-Identifier: Apache-2.0

//! Artwork metadata tables: CSV with header `author,title,date,source_file`.

use std::path::Path;

use crate::model::ArtworkMetadata;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("header must be `author,title,date,source_file`, got `{0}`")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const HEADER: [&str; 4] = ["author", "title", "date", "source_file"];

pub fn parse_dataset_manifest(text: &str) -> Result<Vec<ArtworkMetadata>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| DatasetError::MalformedRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(DatasetError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| DatasetError::MalformedRow { line, reason };
        let field = |i: usize| rec.get(i).unwrap_or("");
        let year = field(2)
            .parse::<i32>()
            .map_err(|_| bad(format!("date `{}` is not an integer year", field(2))))?;
        if field(0).is_empty() || field(1).is_empty() {
            return Err(bad("author and title are required".into()));
        }
        out.push(ArtworkMetadata {
            author: field(0).to_string(),
            title: field(1).to_string(),
            year,
            source_file: field(3).to_string(),
        });
    }
    Ok(out)
}

pub fn load_dataset_manifest(path: &Path) -> Result<Vec<ArtworkMetadata>, DatasetError> {
    parse_dataset_manifest(&std::fs::read_to_string(path)?)
}

/// The row describing `image`: matched on file name, then on stem. A table
/// with a single row applies to any image.
pub fn metadata_for<'a>(rows: &'a [ArtworkMetadata], image: &Path) -> Option<&'a ArtworkMetadata> {
    let name = image.file_name()?.to_string_lossy();
    let stem = image.file_stem()?.to_string_lossy();
    let row_stem = |r: &ArtworkMetadata| {
        Path::new(&r.source_file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    rows.iter()
        .find(|r| !r.source_file.is_empty() && Path::new(&r.source_file).file_name().is_some_and(|n| n.to_string_lossy() == name))
        .or_else(|| rows.iter().find(|r| !r.source_file.is_empty() && row_stem(r) == stem))
        .or_else(|| (rows.len() == 1).then(|| &rows[0]))
}
