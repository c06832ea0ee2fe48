use std::path::Path;
use std::process::{Command, Output};

use probsplat::config::{RunConfig, KEYS};
use probsplat::scene::{read_image, write_splats};

const SMALL: &str = "\
# tiny scene and schedule
views = 12
width = 32
height = 32
focal = 38
points = 300
object_splats = 250
clutter_splats = 40
held_out_views = 2
iterations = 120
densify_from = 40
densify_interval = 40
densify_until = 80
prune_interval = 40
mask_replace_at = 60
prob_prune_start = 60
distortion_from = 20
normal_from = 40
densify_grad_threshold = 2e-3
";

fn probsplat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probsplat"))
        .current_dir(dir)
        .env_remove("PROBSPLAT_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = probsplat(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.conf"), SMALL).unwrap();
    dir
}

#[test]
fn help_lists_every_key_with_its_default() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for (key, value) in RunConfig::default().entries() {
        assert!(help.contains(key), "{key} missing");
        assert!(help.contains(&format!("(default {value})")), "{key} default missing");
    }
    assert_eq!(KEYS.len(), RunConfig::default().entries().len());
    for cmd in ["generate", "refine", "train", "render", "eval", "ablate"] {
        assert!(help.contains(cmd));
    }
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(probsplat(d, &["--set", "no_such_key=1", "generate"]).status.code(), Some(2));
    assert_eq!(probsplat(d, &["--set", "misdetection_fraction=1.5", "generate"]).status.code(), Some(2));
    assert_eq!(probsplat(d, &["--threads", "0", "generate"]).status.code(), Some(2));
    assert_eq!(probsplat(d, &["frobnicate"]).status.code(), Some(2));
    let eval = probsplat(d, &["--config", "small.conf", "eval"]);
    assert_eq!(eval.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&eval.stderr).contains("generate"));
    std::fs::write(d.join("bad.conf"), "views = 10\nviews\n").unwrap();
    let bad = probsplat(d, &["--config", "bad.conf", "generate"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.conf:2"));
}

#[test]
fn pipeline_runs_end_to_end_and_resumes_exactly() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.conf"];
    ok(d, &[&c[..], &["generate"]].concat());
    ok(d, &[&c[..], &["refine"]].concat());
    ok(d, &[&c[..], &["--threads", "2", "train"]].concat());
    let full = std::fs::read(d.join("run/train/splats.ply")).unwrap();
    let history = std::fs::read(d.join("run/train/history.csv")).unwrap();

    // resume from the mask replacement checkpoint
    ok(d, &[&c[..], &["train", "--resume", "run/train/checkpoints/iter_000060"]].concat());
    assert_eq!(std::fs::read(d.join("run/train/splats.ply")).unwrap(), full);
    assert_eq!(std::fs::read(d.join("run/train/history.csv")).unwrap(), history);
    // the latest checkpoint is the final one, so resuming is a no-op
    ok(d, &[&c[..], &["train", "--resume"]].concat());
    assert_eq!(std::fs::read(d.join("run/train/splats.ply")).unwrap(), full);

    let rendered = ok(d, &[&c[..], &["render"]].concat());
    assert!(rendered.contains("rendered 12 views"));
    assert!(d.join("run/render/rgb/view_009.ppm").exists());
    assert!(d.join("run/render/mask/view_009.pgm").exists());
    let table = ok(d, &[&c[..], &["eval"]].concat());
    assert!(table.contains("mean"));
    assert!(d.join("run/eval/report.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.conf"];
    ok(d, &[&c[..], &["generate"]].concat());
    let first = std::fs::read(d.join("data/points.ply")).unwrap();
    let cams = std::fs::read(d.join("data/cameras.txt")).unwrap();
    ok(d, &[&c[..], &["generate"]].concat());
    assert_eq!(std::fs::read(d.join("data/points.ply")).unwrap(), first);
    assert_eq!(std::fs::read(d.join("data/cameras.txt")).unwrap(), cams);

    ok(d, &[&c[..], &["refine"]].concat());
    ok(d, &[&c[..], &["--threads", "1", "train"]].concat());
    ok(d, &[&c[..], &["render"]].concat());
    let a = std::fs::read(d.join("run/render/mask/view_000.pgm")).unwrap();
    let model = std::fs::read(d.join("run/train/splats.ply")).unwrap();
    ok(d, &[&c[..], &["--threads", "3", "train"]].concat());
    ok(d, &[&c[..], &["render"]].concat());
    assert_eq!(std::fs::read(d.join("run/train/splats.ply")).unwrap(), model);
    assert_eq!(std::fs::read(d.join("run/render/mask/view_000.pgm")).unwrap(), a);
}

#[test]
fn zero_iterations_write_the_initial_checkpoint_only() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.conf", "--set", "iterations=0"];
    ok(d, &[&c[..], &["generate"]].concat());
    ok(d, &[&c[..], &["refine"]].concat());
    let out = ok(d, &[&c[..], &["train"]].concat());
    assert!(out.contains("trained 0 iterations"));
    let names: Vec<String> = std::fs::read_dir(d.join("run/train/checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    assert_eq!(names, ["iter_000000"]);
}

#[test]
fn refinement_can_be_disabled() {
    let dir = setup();
    let d = dir.path();
    let c = ["--config", "small.conf", "--set", "enable_refinement=false"];
    ok(d, &[&c[..], &["generate"]].concat());
    let out = ok(d, &[&c[..], &["refine"]].concat());
    assert!(out.contains("kept 300 points; 0 of 10 views invalidated"), "{out}");
}

#[test]
fn empty_model_renders_black_frames() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "small.conf", "generate"]);
    write_splats(&[], &d.join("empty.ply")).unwrap();
    ok(d, &["render", "--splats", "empty.ply", "--cameras", "data/cameras.txt", "--out", "black"]);
    let img = read_image(&d.join("black/rgb/view_003.ppm")).unwrap();
    assert!(img.data.iter().all(|&v| v == 0.0));
    let mask = read_image(&d.join("black/mask/view_003.pgm")).unwrap();
    assert!(mask.data.iter().all(|&v| v == 0.0));
}
