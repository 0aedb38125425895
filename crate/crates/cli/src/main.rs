// SPDX-License-Identifier: Apache-2.0

//! `speaking-images`: turn a portrait in an artwork into a short talking video.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use speaking_images::backends::{BackendChoices, BackendKind, BackendSet};
use speaking_images::dataset::{load_dataset_manifest, metadata_for};
use speaking_images::evaluation::{
    benchmark_detectors, evaluate_run, load_corpus, load_embedding_fixtures, parse_annotations, reference_fid,
    scores_from_fixtures, ThumbnailEmbedder,
};
use speaking_images::face::FaceDetector;
use speaking_images::model::Gender;
use speaking_images::narration::PromptMode;
use speaking_images::pipeline::{resume, run_pipeline, FaceSelection, PipelineConfig, PipelineError, RunOutcome};

#[derive(Parser)]
#[command(name = "speaking-images", version, about = "Animate the faces in artworks into narrated videos")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one image.
    Run(RunArgs),
    /// Score face detectors against an annotated corpus.
    BenchDetect(BenchArgs),
    /// Compute quality metrics for a finished run directory.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simple,
    Detailed,
}

#[derive(Args)]
struct RunArgs {
    image: PathBuf,
    /// Artwork table (`author,title,date,source_file`).
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Defaults to `detailed` when metadata is found, else `simple`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// `main`, `all`, or comma-separated face ids.
    #[arg(long, default_value = "main")]
    faces: FaceSelection,
    #[arg(long, default_value_t = 20.0)]
    max_audio: f64,
    #[arg(long, default_value_t = 30.0)]
    pose_limit: f64,
    /// Fail faces turned beyond the pose limit instead of warning.
    #[arg(long)]
    pose_block: bool,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long, default_value_t = 2)]
    max_sentences: usize,
    #[arg(long, default_value_t = 1)]
    retries: u32,
    /// `detection=X,llm=Y,tts=Z,anim=W`; X is `mock`, `http` or `cmd:PROGRAM ARGS`.
    #[arg(long)]
    backends: Option<String>,
    /// Use mock backends for every stage.
    #[arg(long)]
    mock_all: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reuse the stages recorded in this manifest.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// `ID=GENDER`, repeatable.
    #[arg(long = "gender-override", value_parser = parse_override)]
    gender_overrides: Vec<(u32, Gender)>,
    /// Number of faces processed concurrently.
    #[arg(long, default_value_t = 1)]
    parallel_faces: usize,
    /// Also keep every composed frame as a PNG.
    #[arg(long)]
    frames: bool,
}

#[derive(Args)]
struct BenchArgs {
    corpus: PathBuf,
    annotations: PathBuf,
    /// Detector backends to compare (`mock`, `cmd:PROGRAM ARGS`).
    #[arg(long, value_delimiter = ',', default_value = "mock")]
    backends: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Write the table as CSV here as well as to stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    run_dir: PathBuf,
    /// JSON embedding sets; keys ending in `fid`/`fvd` give those scores.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Directory of real images for a thumbnail-embedding FID.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn parse_override(s: &str) -> Result<(u32, Gender), String> {
    let (id, g) = s.split_once('=').ok_or("expected ID=GENDER")?;
    let id = id.trim().parse().map_err(|_| format!("bad face id `{id}`"))?;
    let g = g.trim().parse::<Gender>().map_err(|e| e.to_string())?;
    Ok((id, g))
}

/// A failure that maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::BenchDetect(a) => cmd_bench(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)));
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<u8> {
    let meta = match &a.meta {
        Some(csv) => {
            let rows = load_dataset_manifest(csv).map_err(|e| usage(format!("{}: {e}", csv.display())))?;
            let found = metadata_for(&rows, &a.image).cloned();
            if found.is_none() {
                warn!("no metadata row for {}", a.image.display());
            }
            found
        }
        None => None,
    };
    let mode = match a.mode {
        Some(ModeArg::Simple) => PromptMode::Simple,
        Some(ModeArg::Detailed) => PromptMode::Detailed,
        None if meta.is_some() => PromptMode::Detailed,
        None => PromptMode::Simple,
    };
    let choices = if a.mock_all {
        BackendChoices::all_mock()
    } else {
        match &a.backends {
            Some(spec) => BackendChoices::parse(spec).map_err(usage)?,
            None => BackendChoices::all_mock(),
        }
    };
    let backends = BackendSet::from_choices(&choices).map_err(|e| usage(e.to_string()))?;
    let cfg = PipelineConfig {
        mode,
        max_sentences: a.max_sentences,
        retries: a.retries,
        max_audio_len_s: a.max_audio,
        pose_limit_deg: a.pose_limit,
        pose_block: a.pose_block,
        fps: a.fps,
        out_dir: a.out.clone(),
        faces: a.faces.clone(),
        gender_overrides: a.gender_overrides.iter().cloned().collect(),
        write_frames: a.frames,
        parallel_faces: a.parallel_faces,
        ..PipelineConfig::default()
    };
    if !a.image.is_file() {
        bail!(usage(format!("no such image: {}", a.image.display())));
    }
    let outcome = match &a.resume {
        Some(manifest) => resume(&cfg, &backends, manifest, Some(&a.image))?,
        None => run_pipeline(&cfg, &backends, &a.image, meta)?,
    };
    report_run(&outcome);
    Ok(outcome.exit_code() as u8)
}

fn report_run(o: &RunOutcome) {
    info!(
        "backend calls: detector={} llm={} tts={} anim={}",
        o.calls.detector, o.calls.vlm, o.calls.tts, o.calls.animator
    );
    if o.manifest.faces.is_empty() {
        println!("no faces detected");
    }
    for f in &o.manifest.faces {
        println!("face {}: {}", f.face_id, f.state);
    }
    for v in o.final_videos() {
        println!("{}", v.display());
    }
    println!("manifest: {}", o.manifest_path.display());
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.annotations).with_context(|| a.annotations.display().to_string())?;
    let annotations = parse_annotations(&text).map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(&a.corpus, &annotations)?;
    let mut detectors = Vec::new();
    for spec in &a.backends {
        let kind: BackendKind = spec.parse().map_err(usage)?;
        let set = BackendSet::from_choices(&BackendChoices(
            [(speaking_images::backends::Stage::Detection, kind)].into_iter().collect(),
        ))
        .map_err(|e| usage(e.to_string()))?;
        detectors.push(set.detector);
    }
    let refs: Vec<&dyn FaceDetector> = detectors.iter().map(|d| d.as_ref()).collect();
    let report = benchmark_detectors(&refs, &corpus, a.iou);
    let csv = report.to_csv()?;
    print!("{csv}");
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).with_context(|| p.display().to_string())?;
    }
    for (name, why) in &report.failures {
        eprintln!("{name}: {why}");
    }
    Ok(if report.results.is_empty() && !report.failures.is_empty() { 1 } else { 0 })
}

fn cmd_eval(a: EvalArgs) -> Result<u8> {
    if !a.run_dir.is_dir() {
        bail!(usage(format!("not a directory: {}", a.run_dir.display())));
    }
    let mut report = evaluate_run(&a.run_dir)?;
    if let Some(fx) = &a.embeddings {
        let sets = load_embedding_fixtures(fx)?;
        let (fid, fvd) = scores_from_fixtures(&sets)?;
        report.fid = fid;
        report.fvd = fvd;
    }
    if let Some(dir) = &a.reference {
        let videos = final_videos(&a.run_dir)?;
        if videos.is_empty() {
            return Err(anyhow!("run has no final videos to compare"));
        }
        report.fid = Some(reference_fid(&ThumbnailEmbedder::default(), dir, &videos)?);
    }
    std::fs::write(a.run_dir.join("psnr.csv"), report.psnr_csv()?)?;
    std::fs::write(a.run_dir.join("evaluation.json"), report.to_json())?;
    if a.json {
        print!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(0)
}

fn final_videos(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = speaking_images::manifest::RunManifest::load(&run_dir.join(speaking_images::manifest::MANIFEST_FILE))?;
    Ok(manifest
        .faces
        .iter()
        .filter_map(|f| f.asset(speaking_images::model::AssetKind::FinalVideo))
        .map(|a| run_dir.join(&a.path))
        .collect())
}
