//! End-to-end drivers behind the command-line tool.
//!
//! Run directory layout:
//!
//! ```text
//! refine/foreground.ply      points used for initialization
//! refine/views.txt           `index valid` per training view
//! refine/confidence.csv      point and view confidence scores
//! train/checkpoints/iter_NNNNNN/
//! train/splats.ply           final model
//! train/history.csv          per-iteration losses and splat counts
//! train/events.txt           density control and mask replacement log
//! train/masks/view_NNN.pgm   replaced supervision masks by dataset view index
//! train/config.txt           effective configuration
//! eval/report.csv, eval/report.txt
//! ablation/<row>/...         one run directory per ablation row
//! ablation.csv, ablation.txt
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::eval::{ablation_csv, ablation_table, evaluate_views, report, EvalOptions, EvalReport};
use crate::fsutil::{read_to_string, write_atomic};
use crate::refine::{refine_views, ConfidenceReport};
use crate::render::{render_view, RenderOptions};
use crate::scene::{
    read_cameras, read_point_cloud, read_splats, write_image, write_point_cloud, write_splats, BitDepth, Dataset,
    PointCloud, SplatPrimitive, View,
};
use crate::synth::generate_dataset;
use crate::train::{
    checkpoint_dir, init_from_points, read_checkpoint, resume, supervision_views, train, TrainOptions, TrainState,
};
use crate::{Error, Result};

fn refine_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join("refine")
}

fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join("train")
}

pub fn checkpoints_root(cfg: &RunConfig) -> PathBuf {
    train_dir(cfg).join("checkpoints")
}

pub fn final_splats_path(cfg: &RunConfig) -> PathBuf {
    train_dir(cfg).join("splats.ply")
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if !cfg.data_dir.join("cameras.txt").exists() {
        return Err(Error::Data(format!("no dataset at {}; run `generate` first", cfg.data_dir.display())));
    }
    Dataset::load(&cfg.data_dir)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    generate_dataset(&cfg.scene, &cfg.data_dir)
}

/// Foreground cloud and training view flags after refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub cloud: PointCloud,
    pub report: ConfidenceReport,
}

/// Runs refinement over the training views, or passes everything through
/// when refinement is disabled.
pub fn refine_dataset(cfg: &RunConfig, ds: &mut Dataset) -> Result<Refined> {
    let idx = ds.training_indices();
    if cfg.enable_refinement {
        let (cloud, report) = refine_views(&ds.points, &mut ds.views, &idx, cfg.tau_point, cfg.tau_view)?;
        return Ok(Refined { cloud, report });
    }
    let report = ConfidenceReport {
        point_scores: vec![None; ds.points.len()],
        point_kept: vec![true; ds.points.len()],
        view_valid: idx.iter().map(|&i| ds.views[i].valid).collect(),
        view_scores: vec![None; idx.len()],
        view_indices: idx,
        tau_point: cfg.tau_point,
        tau_view: cfg.tau_view,
    };
    Ok(Refined { cloud: ds.points.clone(), report })
}

pub fn cmd_refine(cfg: &RunConfig) -> Result<Refined> {
    cfg.validate()?;
    let mut ds = load_dataset(cfg)?;
    let r = refine_dataset(cfg, &mut ds)?;
    let dir = refine_dir(cfg);
    write_point_cloud(&r.cloud, &dir.join("foreground.ply"))?;
    let mut flags = String::new();
    for (i, v) in r.report.view_indices.iter().zip(&r.report.view_valid) {
        let _ = writeln!(flags, "{i} {}", *v as u8);
    }
    write_atomic(&dir.join("views.txt"), flags.as_bytes())?;
    write_atomic(&dir.join("confidence.csv"), r.report.to_csv().as_bytes())?;
    Ok(r)
}

/// Training views with refinement flags applied, plus their dataset indices.
fn load_refined(cfg: &RunConfig, ds: &Dataset) -> Result<(PointCloud, Vec<usize>, Vec<View>)> {
    let dir = refine_dir(cfg);
    let flags_path = dir.join("views.txt");
    if !flags_path.exists() {
        return Err(Error::Data(format!("no refinement outputs in {}; run `refine` first", dir.display())));
    }
    let mut views = ds.views.clone();
    let mut idx = Vec::new();
    for (n, line) in read_to_string(&flags_path)?.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::parse(&flags_path, n + 1, "expected `index valid`");
        if f.is_empty() {
            continue;
        }
        if f.len() != 2 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let valid = match f[1] {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let v = views.get_mut(i).ok_or_else(|| Error::parse(&flags_path, n + 1, format!("no view {i}")))?;
        v.valid = valid;
        idx.push(i);
    }
    let cloud = read_point_cloud(&dir.join("foreground.ply"))?;
    let train_views = idx.iter().map(|&i| views[i].clone()).collect();
    Ok((cloud, idx, train_views))
}

/// Most recent checkpoint below the run's checkpoint root.
pub fn latest_checkpoint(cfg: &RunConfig) -> Result<PathBuf> {
    let root = checkpoints_root(cfg);
    let entries = std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut best: Option<(usize, PathBuf)> = None;
    for e in entries {
        let e = e.map_err(|err| Error::io(&root, err))?;
        let name = e.file_name().to_string_lossy().to_string();
        if let Some(n) = name.strip_prefix("iter_").and_then(|s| s.parse::<usize>().ok()) {
            if best.as_ref().is_none_or(|(b, _)| n > *b) {
                best = Some((n, e.path()));
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| Error::Data(format!("no checkpoints in {}", root.display())))
}

/// Trains from the refined cloud, or continues from `resume_from`.
pub fn cmd_train(cfg: &RunConfig, resume_from: Option<&Path>, log_every: usize) -> Result<TrainState> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let (cloud, idx, views) = load_refined(cfg, &ds)?;
    let opts = TrainOptions { checkpoint_root: Some(checkpoints_root(cfg)), log_every };
    let state = match resume_from {
        Some(dir) => resume(&views, read_checkpoint(dir)?, &cfg.train, &opts)?,
        None => train(&views, init_from_points(&cloud)?, &cfg.train, &opts)?,
    };
    let dir = train_dir(cfg);
    write_splats(&state.splats, &dir.join("splats.ply"))?;
    write_atomic(&dir.join("history.csv"), crate::train::history_csv(&state.history).as_bytes())?;
    write_atomic(&dir.join("events.txt"), crate::train::events_text(&state.events).as_bytes())?;
    write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    let sup = supervision_views(&views, &state, &cfg.train);
    for (pos, _) in &state.replaced_masks {
        let path = dir.join("masks").join(format!("view_{:03}.pgm", idx[*pos]));
        write_image(&sup[*pos].prob_mask, &path, BitDepth::Sixteen)?;
    }
    Ok(state)
}

/// Renders every camera of `cameras` to `out/rgb` and `out/mask`.
pub fn cmd_render(splats_path: &Path, cameras: &Path, out: &Path) -> Result<usize> {
    let splats = read_splats(splats_path)?;
    let cams = read_cameras(cameras)?;
    let opts = RenderOptions { keep_hits: false, ..RenderOptions::default() };
    for (i, cam) in cams.iter().enumerate() {
        let r = render_view(&splats, cam, &opts);
        write_image(&r.rgb.map(|v| v.clamp(0.0, 1.0)), &out.join("rgb").join(format!("view_{i:03}.ppm")), BitDepth::Eight)?;
        write_image(&r.prob.map(|v| v.clamp(0.0, 1.0)), &out.join("mask").join(format!("view_{i:03}.pgm")), BitDepth::Sixteen)?;
    }
    Ok(cams.len())
}

fn read_history_counts(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split(',')
                .nth(2)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(path, n + 1, "missing splat count"))
        })
        .collect()
}

/// Scores `splats` on the held-out views against ground-truth masks.
pub fn evaluate_model(cfg: &RunConfig, ds: &Dataset, splats: &[SplatPrimitive], counts: &[usize], name: &str, seconds: f64) -> Result<EvalReport> {
    let gt = ds.ground_truth.as_ref().ok_or_else(|| {
        Error::Data(format!("dataset {} has no gt_masks; evaluation needs ground-truth masks", cfg.data_dir.display()))
    })?;
    if ds.held_out.is_empty() {
        return Err(Error::Data("dataset has no held-out views".into()));
    }
    let views: Vec<(usize, &View)> = ds.held_out.iter().map(|&i| (i, &ds.views[i])).collect();
    let masks: Vec<_> = ds.held_out.iter().map(|&i| &gt.masks[i]).collect();
    let opts = EvalOptions { tau: cfg.eval_tau, full_frame: cfg.full_frame_metrics };
    report(name, evaluate_views(splats, &views, &masks, &opts)?, counts, seconds)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let splats = read_splats(&final_splats_path(cfg))?;
    let counts = read_history_counts(&train_dir(cfg).join("history.csv"))?;
    let name = cfg.run_dir.file_name().map_or("run".to_string(), |n| n.to_string_lossy().to_string());
    let r = evaluate_model(cfg, &ds, &splats, &counts, &name, 0.0)?;
    let dir = cfg.run_dir.join("eval");
    write_atomic(&dir.join("report.csv"), r.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.txt"), r.to_table().as_bytes())?;
    Ok(r)
}

/// Ablation rows: binary masks alone, then probability masks with mask
/// replacement and data refinement added in turn.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let row = |binary: bool, replace: bool, refine: bool| {
        let mut c = base.clone();
        c.train.binary_masks = binary;
        c.train.mask_replacement = replace;
        c.enable_refinement = refine;
        c
    };
    vec![
        ("BM", row(true, false, false)),
        ("PM", row(false, false, false)),
        ("PM+PMR", row(false, true, false)),
        ("PM+PMR+DR", row(false, true, true)),
    ]
}

/// Trains and evaluates every ablation row below `run_dir/ablation`.
pub fn cmd_ablate(cfg: &RunConfig, log_every: usize) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let mut reports = Vec::new();
    for (name, mut c) in ablation_configs(cfg) {
        c.run_dir = cfg.run_dir.join("ablation").join(name);
        let t = Instant::now();
        cmd_refine(&c)?;
        cmd_train(&c, None, log_every)?;
        let mut r = cmd_eval(&c)?;
        r.name = name.to_string();
        r.seconds = t.elapsed().as_secs_f64();
        eprintln!("{name}: mIoU {:.4} mAcc {:.4} PSNR {:.3} in {:.1}s", r.mean_miou, r.mean_macc, r.mean_psnr, r.seconds);
        reports.push(r);
    }
    write_atomic(&cfg.run_dir.join("ablation.csv"), ablation_csv(&reports).as_bytes())?;
    write_atomic(&cfg.run_dir.join("ablation.txt"), ablation_table(&reports).as_bytes())?;
    Ok(reports)
}

/// Checkpoint directory for `iteration` within this run.
pub fn checkpoint_at(cfg: &RunConfig, iteration: usize) -> PathBuf {
    checkpoint_dir(&checkpoints_root(cfg), iteration)
}
