// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn artworks() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/artworks.csv")
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speaking-images"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let img = fixture("ladyermine.png");
    assert_eq!(bin(&["run"]).status.code(), Some(2));
    assert_eq!(bin(&["run", s(&img), "--fps", "0"]).status.code(), Some(2));
    assert_eq!(bin(&["run", s(&img), "--mode", "detailed"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "missing.png"]).status.code(), Some(2));
    assert_eq!(bin(&["run", s(&img), "--backends", "detection=http"]).status.code(), Some(2));
    assert_eq!(bin(&["run", s(&img), "--gender-override", "0=robot"]).status.code(), Some(2));
}

#[test]
fn detailed_run_with_metadata_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let img = fixture("ladyermine.png");
    let o = bin(&["run", s(&img), "--meta", s(&artworks()), "--out", s(&out), "--frames"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("face 0: composited"), "{stdout}");

    let run_dir = out.join("ladyermine");
    let manifest = std::fs::read_to_string(run_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("Lady with an Ermine"));
    assert!(run_dir.join("frames/ladyermine_0_36_36_42_24_female/000000.png").exists());

    let e = bin(&[
        "eval",
        s(&run_dir),
        "--embeddings",
        s(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/frechet_fixtures.json")),
    ]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    let text = String::from_utf8_lossy(&e.stdout);
    assert!(text.contains("fid: 293.6700"), "{text}");
    assert!(text.contains("fvd: 295.8060"), "{text}");
    let csv = std::fs::read_to_string(run_dir.join("psnr.csv")).unwrap();
    assert!(csv.starts_with("name,psnr_db\nladyermine_0_36_36_42_24_female,"), "{csv}");
    assert!(run_dir.join("evaluation.json").exists());
}

#[test]
fn all_faces_failed_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("profile.png");
    std::fs::copy(fixture("ladyermine.png"), &img).unwrap();
    std::fs::write(dir.path().join("profile.faces.txt"), "0 46 24 28 36 male 0.9 80\n").unwrap();
    let out = dir.path().join("out");
    let o = bin(&["run", s(&img), "--pose-block", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin(&["run", s(&img), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn resume_flag_reuses_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let img = fixture("ladyermine.png");
    assert_eq!(bin(&["run", s(&img), "--out", s(&out)]).status.code(), Some(0));
    let manifest = out.join("ladyermine/manifest.json");
    let before = std::fs::read(&manifest).unwrap();
    let o = bin(&["-v", "run", s(&img), "--out", s(&out), "--resume", s(&manifest)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("detector=0 llm=0 tts=0 anim=0"));
    assert_eq!(std::fs::read(&manifest).unwrap(), before);
}

#[test]
fn bench_detect_over_fixture_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.csv");
    let o = bin(&[
        "bench-detect",
        s(&fixture("")),
        s(&fixture("annotations.txt")),
        "--backends",
        "mock",
        "--csv",
        s(&table),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout, "backend,tp,fp,fn,tn\nmock-detector,1,0,0,1\n");
    assert_eq!(std::fs::read_to_string(&table).unwrap(), stdout);
}
