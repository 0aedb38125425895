// SPDX-License-Identifier: Apache-2.0

//! Quality and benchmark metrics: PSNR, Fréchet distance over embedding
//! distributions, detection confusion counts, and report export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::animation::FrameSequence;
use crate::face::FaceDetector;
use crate::image::ImageBuffer;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::model::{AssetKind, BoundingBox};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("covariance is not positive semi-definite (eigenvalue {0:e})")]
    NonPsd(f64),
    #[error("empty animation")]
    EmptyAnimation,
    #[error("annotations line {line}: {reason}")]
    MalformedAnnotation { line: usize, reason: String },
    #[error("fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Run(String),
}

/// Eigenvalues above `-PSD_TOLERANCE` (scaled by the matrix magnitude when
/// that exceeds 1) count as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// `10 log10(max^2 / MSE)` over all pixels and channels; `+inf` when the
/// images are identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, max_val: f64) -> Result<f64, EvalError> {
    if a.dims() != b.dims() {
        return Err(EvalError::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// PSNR between the still given to the animator and the animation's last
/// frame.
pub fn psnr_drift(face_crop: &ImageBuffer, animation: &FrameSequence) -> Result<f64, EvalError> {
    let last = animation.last().ok_or(EvalError::EmptyAnimation)?;
    psnr(face_crop, last, 255.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n - 1) covariance.
pub fn fit_gaussian(embeddings: &[Vec<f64>]) -> Result<GaussianSummary, EvalError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(EvalError::InsufficientSamples(n));
    }
    let d = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|v| v.len() != d) {
        return Err(EvalError::DimensionMismatch(format!("vector of length {} among length {d}", bad.len())));
    }
    let x = DMatrix::from_fn(n, d, |i, j| embeddings[i][j]);
    let mean: DVector<f64> = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianSummary { mean, covariance: cov })
}

fn psd_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, EvalError> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE * scale {
        return Err(EvalError::NonPsd(min));
    }
    Ok(eig)
}

/// `|mu1 - mu2|^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2))`, with the trace of the
/// square root taken from the symmetric matrix `C1^(1/2) C2 C1^(1/2)`.
pub fn frechet_distance(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64, EvalError> {
    let d = g1.dim();
    if g2.dim() != d || g1.covariance.shape() != (d, d) || g2.covariance.shape() != (d, d) {
        return Err(EvalError::DimensionMismatch(format!("{d} vs {}", g2.dim())));
    }
    let e1 = psd_eigen(&g1.covariance)?;
    psd_eigen(&g2.covariance)?;
    let sqrt_vals = DVector::from_iterator(d, e1.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
    let sqrt_c1 = &e1.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * e1.eigenvectors.transpose();
    let s = &sqrt_c1 * &g2.covariance * &sqrt_c1;
    let s = (&s + s.transpose()) * 0.5;
    let trace_sqrt: f64 = psd_eigen(&s)?.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()).sum();
    let diff = (&g1.mean - &g2.mean).norm_squared();
    let fd = diff + g1.covariance.trace() + g2.covariance.trace() - 2.0 * trace_sqrt;
    Ok(fd.max(0.0))
}

pub fn fid_score(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64, EvalError> {
    frechet_distance(&fit_gaussian(real)?, &fit_gaussian(generated)?)
}

/// Maps an image (or clip) to a feature vector for Fréchet scoring.
pub trait ImageEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, image: &ImageBuffer) -> Vec<f64>;
}

pub trait ClipEmbedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, clip: &FrameSequence) -> Vec<f64>;
}

/// Gray thumbnail of `side x side` pixels scaled to [0, 1]. A model-free
/// stand-in for a learned image embedding.
#[derive(Debug, Clone, Copy)]
pub struct ThumbnailEmbedder {
    pub side: usize,
}

impl Default for ThumbnailEmbedder {
    fn default() -> Self {
        Self { side: 8 }
    }
}

impl ImageEmbedder for ThumbnailEmbedder {
    fn name(&self) -> &str {
        "thumbnail"
    }

    fn embed(&self, image: &ImageBuffer) -> Vec<f64> {
        let g = crate::compositor::resize_frame(&image.to_channels(1), self.side, self.side);
        g.data().iter().map(|&v| v as f64 / 255.0).collect()
    }
}

/// Per-pixel temporal mean and standard deviation of gray thumbnails.
#[derive(Debug, Clone, Copy)]
pub struct ThumbnailClipEmbedder {
    pub side: usize,
}

impl Default for ThumbnailClipEmbedder {
    fn default() -> Self {
        Self { side: 4 }
    }
}

impl ClipEmbedder for ThumbnailClipEmbedder {
    fn name(&self) -> &str {
        "thumbnail-clip"
    }

    fn embed(&self, clip: &FrameSequence) -> Vec<f64> {
        let e = ThumbnailEmbedder { side: self.side };
        let per: Vec<Vec<f64>> = clip.frames.iter().map(|f| e.embed(f)).collect();
        let d = self.side * self.side;
        let n = per.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| per.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let std = (0..d).map(|j| (per.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt());
        mean.iter().cloned().chain(std).collect()
    }
}

/// Embedding sets stored as JSON: `{"<name>": {"real": [[..]], "gen": [[..]]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingSets {
    pub real: Vec<Vec<f64>>,
    #[serde(rename = "gen")]
    pub generated: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

pub fn load_embedding_fixtures(path: &Path) -> Result<BTreeMap<String, EmbeddingSets>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| EvalError::Fixture(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| EvalError::Fixture("top level must be an object".into()))?;
    obj.iter()
        .filter(|(_, v)| v.is_object())
        .map(|(k, v)| {
            serde_json::from_value(v.clone())
                .map(|s| (k.clone(), s))
                .map_err(|e| EvalError::Fixture(format!("{k}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Greedy one-to-one matching by descending IoU. Pairs at or above the
/// threshold are true positives; an image with neither predictions nor
/// truth counts as one true negative.
pub fn match_detections(pred: &[BoundingBox], truth: &[BoundingBox], iou_threshold: f64) -> ConfusionCounts {
    assert!(iou_threshold > 0.0 && iou_threshold <= 1.0, "IoU threshold must be in (0, 1]");
    if pred.is_empty() && truth.is_empty() {
        return ConfusionCounts { tn: 1, ..Default::default() };
    }
    let mut pairs: Vec<(f64, BoundingBox, BoundingBox, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let iou = p.iou(t);
            if iou >= iou_threshold {
                pairs.push((iou, *p, *t, i, j));
            }
        }
    }
    // Ties break on box geometry, so the result does not depend on input order.
    let key = |b: &BoundingBox| (b.x, b.y, b.w, b.h);
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| key(&a.1).cmp(&key(&b.1)))
            .then_with(|| key(&a.2).cmp(&key(&b.2)))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut tp = 0;
    for (_, _, _, i, j) in pairs {
        if !pred_used[i] && !truth_used[j] {
            pred_used[i] = true;
            truth_used[j] = true;
            tp += 1;
        }
    }
    ConfusionCounts {
        tp,
        fp: pred.len() as u64 - tp,
        fn_: truth.len() as u64 - tp,
        tn: 0,
    }
}

/// One benchmark image with its ground-truth boxes (possibly none).
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub stem: String,
    pub path: PathBuf,
    pub image: ImageBuffer,
    pub truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub results: BTreeMap<String, ConfusionCounts>,
    pub failures: BTreeMap<String, String>,
}

impl BenchmarkReport {
    /// `backend,tp,fp,fn,tn` rows, one per backend that completed.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["backend", "tp", "fp", "fn", "tn"])?;
        for (name, c) in &self.results {
            w.write_record([name.clone(), c.tp.to_string(), c.fp.to_string(), c.fn_.to_string(), c.tn.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
    }
}

/// Runs every backend over the corpus in parallel. A backend that fails on
/// any image is reported under `failures` and left out of `results`.
pub fn benchmark_detectors(backends: &[&dyn FaceDetector], corpus: &[AnnotatedImage], iou_threshold: f64) -> BenchmarkReport {
    let outcomes: Vec<(String, Result<ConfusionCounts, String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = backends
            .iter()
            .map(|b| {
                s.spawn(move || {
                    let mut total = ConfusionCounts::default();
                    for item in corpus {
                        let dets = b.detect(&item.image, &item.path).map_err(|e| format!("{}: {e}", item.stem))?;
                        let pred: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
                        total += match_detections(&pred, &item.truth, iou_threshold);
                    }
                    Ok(total)
                })
            })
            .collect();
        backends
            .iter()
            .zip(handles)
            .map(|(b, h)| (b.id(), h.join().unwrap_or_else(|_| Err("backend panicked".into()))))
            .collect()
    });
    let mut report = BenchmarkReport::default();
    for (name, outcome) in outcomes {
        match outcome {
            Ok(c) => {
                report.results.insert(name, c);
            }
            Err(e) => {
                log::warn!("detector {name} failed: {e}");
                report.failures.insert(name, e);
            }
        }
    }
    report
}

/// Parses `stem x y w h` lines; `stem none` marks an image without faces.
/// Stems keep first-appearance order.
pub fn parse_annotations(text: &str) -> Result<Vec<(String, Vec<BoundingBox>)>, EvalError> {
    let mut out: Vec<(String, Vec<BoundingBox>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| EvalError::MalformedAnnotation { line: i + 1, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        let boxes = match f.as_slice() {
            [_, "none"] => None,
            [_, x, y, w, h] => {
                let n = |s: &str| s.parse::<i64>().map_err(|_| bad(format!("bad integer `{s}`")));
                let b = BoundingBox::new(n(x)?, n(y)?, n(w)?, n(h)?);
                if !b.is_valid() {
                    return Err(bad(format!("degenerate box {b}")));
                }
                Some(b)
            }
            _ => return Err(bad("expected `stem x y w h` or `stem none`".into())),
        };
        let stem = f[0].to_string();
        let pos = match out.iter().position(|(s, _)| *s == stem) {
            Some(p) => p,
            None => {
                out.push((stem, Vec::new()));
                out.len() - 1
            }
        };
        out[pos].1.extend(boxes);
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "PNG"];

/// Pairs annotation stems with images `<dir>/<stem>.{png,jpg,jpeg}`.
pub fn load_corpus(dir: &Path, annotations: &[(String, Vec<BoundingBox>)]) -> Result<Vec<AnnotatedImage>, EvalError> {
    annotations
        .iter()
        .map(|(stem, truth)| {
            let path = IMAGE_EXTENSIONS
                .iter()
                .map(|e| dir.join(format!("{stem}.{e}")))
                .find(|p| p.exists())
                .ok_or_else(|| EvalError::Fixture(format!("no image for `{stem}` in {}", dir.display())))?;
            let image = ImageBuffer::load(&path).map_err(|e| EvalError::Fixture(format!("{}: {e}", path.display())))?;
            Ok(AnnotatedImage {
                stem: stem.clone(),
                path,
                image,
                truth: truth.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacePsnr {
    pub name: String,
    /// `None` stands for +infinity (identical images).
    pub psnr_db: Option<f64>,
}

impl FacePsnr {
    pub fn new(name: impl Into<String>, psnr_db: f64) -> Self {
        Self {
            name: name.into(),
            psnr_db: psnr_db.is_finite().then_some(psnr_db),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub faces: Vec<FacePsnr>,
    pub psnr_median: Option<f64>,
    pub fid: Option<f64>,
    pub fvd: Option<f64>,
    pub detection: BTreeMap<String, ConfusionCounts>,
}

/// Median of the finite values; `None` when there are none.
pub fn median_finite(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

impl EvaluationReport {
    pub fn from_psnr(faces: Vec<FacePsnr>) -> Self {
        let values: Vec<f64> = faces.iter().filter_map(|f| f.psnr_db).collect();
        Self {
            psnr_median: median_finite(&values),
            faces,
            ..Self::default()
        }
    }

    /// `name,psnr_db` rows; identical pairs are written as `inf`.
    pub fn psnr_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "psnr_db"])?;
        for f in &self.faces {
            let v = f.psnr_db.map_or_else(|| "inf".to_string(), |v| format!("{v:.4}"));
            w.write_record([f.name.as_str(), v.as_str()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "faces: {}", self.faces.len());
        for f in &self.faces {
            let _ = writeln!(s, "  {}: {} dB", f.name, f.psnr_db.map_or("inf".to_string(), |v| format!("{v:.4}")));
        }
        let _ = writeln!(s, "psnr median: {} dB", fmt(self.psnr_median));
        let _ = writeln!(s, "fid: {}", fmt(self.fid));
        let _ = writeln!(s, "fvd: {}", fmt(self.fvd));
        for (name, c) in &self.detection {
            let _ = writeln!(s, "detector {name}: tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
        }
        s
    }
}

/// Per-face PSNR drift for every face of a run directory that has both a
/// crop and an animation.
pub fn evaluate_run(run_dir: &Path) -> Result<EvaluationReport, EvalError> {
    let run_err = |e: &dyn std::fmt::Display| EvalError::Run(e.to_string());
    let manifest = RunManifest::load(&run_dir.join(MANIFEST_FILE)).map_err(|e| run_err(&e))?;
    let mut faces = Vec::new();
    for face in &manifest.faces {
        let (Some(crop), Some(anim)) = (face.asset(AssetKind::FaceCrop), face.asset(AssetKind::FaceAnimation)) else {
            continue;
        };
        let crop_img = ImageBuffer::load(&run_dir.join(&crop.path)).map_err(|e| run_err(&e))?;
        let video = crate::container::read_mp4(&run_dir.join(&anim.path)).map_err(|e| run_err(&e))?.video;
        let name = Path::new(&crop.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        faces.push(FacePsnr::new(name, psnr_drift(&crop_img, &video)?));
    }
    Ok(EvaluationReport::from_psnr(faces))
}

/// FID/FVD from committed embedding sets: keys ending in `fid` / `fvd`.
pub fn scores_from_fixtures(sets: &BTreeMap<String, EmbeddingSets>) -> Result<(Option<f64>, Option<f64>), EvalError> {
    let score = |suffix: &str| -> Result<Option<f64>, EvalError> {
        sets.iter()
            .find(|(k, _)| k.to_ascii_lowercase().ends_with(suffix))
            .map(|(_, s)| fid_score(&s.real, &s.generated))
            .transpose()
    };
    Ok((score("fid")?, score("fvd")?))
}

/// Image FID between the pictures in `reference_dir` and every frame of
/// `videos`, under `embedder`.
pub fn reference_fid(embedder: &dyn ImageEmbedder, reference_dir: &Path, videos: &[PathBuf]) -> Result<f64, EvalError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(reference_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| ["png", "jpg", "jpeg"].contains(&x.to_string_lossy().to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let real = paths
        .iter()
        .map(|p| ImageBuffer::load(p).map(|i| embedder.embed(&i)).map_err(|e| EvalError::Run(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut generated = Vec::new();
    for v in videos {
        let decoded = crate::container::read_mp4(v).map_err(|e| EvalError::Run(format!("{}: {e}", v.display())))?;
        generated.extend(decoded.video.frames.iter().map(|f| embedder.embed(f)));
    }
    fid_score(&real, &generated)
}
