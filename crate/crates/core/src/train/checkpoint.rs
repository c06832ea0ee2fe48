//! Checkpoint directories.
//!
//! ```text
//! iter_NNNNNN/splats.ply      splat parameters
//! iter_NNNNNN/optimizer.ply   Adam moments m0..m12 v0..v12, grad_sum, grad_count
//! iter_NNNNNN/state.txt       iteration, masks_replaced
//! iter_NNNNNN/history.csv     per-iteration losses, full precision
//! iter_NNNNNN/events.txt      density control and mask replacement log
//! iter_NNNNNN/masks/view_NNN.pgm  replaced masks, 16-bit
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::adam::Adam;
use super::density::GradStats;
use super::{IterRecord, TrainEvent, TrainState};
use crate::fsutil::{fmt_f64, read_to_string, write_atomic};
use crate::scene::{read_image, read_ply_table, read_splats, write_image, write_ply_table, write_splats, BitDepth, PlyTable};
use crate::{Error, Result};

pub const HISTORY_HEADER: &str =
    "iteration,view,splats,l1,ssim,photometric,prob_loss,depth_distortion,normal_consistency,total";

const SLOTS: usize = crate::loss::SplatGrad::LEN;

pub fn checkpoint_dir(root: &Path, iteration: usize) -> PathBuf {
    root.join(format!("iter_{iteration:06}"))
}

pub fn history_csv(history: &[IterRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.view,
            r.splats,
            fmt_f64(r.l1),
            fmt_f64(r.ssim),
            fmt_f64(r.photometric),
            fmt_f64(r.prob_loss),
            fmt_f64(r.depth_distortion),
            fmt_f64(r.normal_consistency),
            fmt_f64(r.total)
        );
    }
    s
}

fn parse_history(text: &str, path: &Path) -> Result<Vec<IterRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HISTORY_HEADER => {}
        _ => return Err(Error::parse(path, 1, "unexpected history header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let err = |m: &str| Error::parse(path, n + 1, m.to_string());
            if f.len() != 10 {
                return Err(err("expected 10 fields"));
            }
            let int = |i: usize| f[i].trim().parse::<usize>().map_err(|_| err("bad integer"));
            let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| err("bad number"));
            Ok(IterRecord {
                iteration: int(0)?,
                view: int(1)?,
                splats: int(2)?,
                l1: num(3)?,
                ssim: num(4)?,
                photometric: num(5)?,
                prob_loss: num(6)?,
                depth_distortion: num(7)?,
                normal_consistency: num(8)?,
                total: num(9)?,
            })
        })
        .collect()
}

pub fn events_text(events: &[TrainEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let _ = match e {
            TrainEvent::Densify { iteration, cloned, split, splats } => {
                writeln!(s, "densify iteration={iteration} cloned={cloned} split={split} splats={splats}")
            }
            TrainEvent::Prune { iteration, by_opacity, by_probability, splats } => writeln!(
                s,
                "prune iteration={iteration} by_opacity={by_opacity} by_probability={by_probability} splats={splats}"
            ),
            TrainEvent::MaskReplacement { iteration, views, band_pixels, entropy_before, entropy_after } => writeln!(
                s,
                "mask_replacement iteration={iteration} views={views} band_pixels={band_pixels} entropy_before={} entropy_after={}",
                fmt_f64(*entropy_before),
                fmt_f64(*entropy_after)
            ),
        };
    }
    s
}

fn parse_events(text: &str, path: &Path) -> Result<Vec<TrainEvent>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(kind) = parts.next() else { continue };
        let err = |m: String| Error::parse(path, n + 1, m);
        let fields: Vec<(&str, &str)> = parts
            .map(|p| p.split_once('=').ok_or_else(|| err(format!("expected key=value, got {p:?}"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| {
            fields.iter().find(|(a, _)| *a == k).map(|(_, v)| *v).ok_or_else(|| err(format!("missing {k}")))
        };
        let int = |k: &str| get(k)?.parse::<usize>().map_err(|_| err(format!("bad {k}")));
        let num = |k: &str| get(k)?.parse::<f64>().map_err(|_| err(format!("bad {k}")));
        out.push(match kind {
            "densify" => TrainEvent::Densify { iteration: int("iteration")?, cloned: int("cloned")?, split: int("split")?, splats: int("splats")? },
            "prune" => TrainEvent::Prune {
                iteration: int("iteration")?,
                by_opacity: int("by_opacity")?,
                by_probability: int("by_probability")?,
                splats: int("splats")?,
            },
            "mask_replacement" => TrainEvent::MaskReplacement {
                iteration: int("iteration")?,
                views: int("views")?,
                band_pixels: int("band_pixels")?,
                entropy_before: num("entropy_before")?,
                entropy_after: num("entropy_after")?,
            },
            other => return Err(err(format!("unknown event {other:?}"))),
        });
    }
    Ok(out)
}

fn optimizer_table(adam: &Adam, stats: &GradStats) -> PlyTable {
    let mut properties: Vec<String> = (0..SLOTS).map(|k| format!("m{k}")).collect();
    properties.extend((0..SLOTS).map(|k| format!("v{k}")));
    properties.push("grad_sum".into());
    properties.push("grad_count".into());
    let rows = (0..adam.len())
        .map(|i| {
            let mut r = adam.m[i].to_vec();
            r.extend_from_slice(&adam.v[i]);
            r.push(stats.sum[i]);
            r.push(stats.count[i] as f64);
            r
        })
        .collect();
    PlyTable { properties, rows, comments: Vec::new() }
}

fn optimizer_from_table(t: &PlyTable, path: &Path) -> Result<(Adam, GradStats)> {
    let cols = |prefix: &str| -> Result<Vec<usize>> { (0..SLOTS).map(|k| t.require(&format!("{prefix}{k}"), path)).collect() };
    let (mc, vc) = (cols("m")?, cols("v")?);
    let (sc, cc) = (t.require("grad_sum", path)?, t.require("grad_count", path)?);
    let n = t.rows.len();
    let mut adam = Adam::new(n);
    let mut stats = GradStats::new(n);
    for (i, r) in t.rows.iter().enumerate() {
        for k in 0..SLOTS {
            adam.m[i][k] = r[mc[k]];
            adam.v[i][k] = r[vc[k]];
        }
        stats.sum[i] = r[sc];
        stats.count[i] = r[cc] as u32;
    }
    Ok((adam, stats))
}

pub fn write_checkpoint(dir: &Path, state: &TrainState) -> Result<()> {
    write_splats(&state.splats, &dir.join("splats.ply"))?;
    write_ply_table(&optimizer_table(&state.adam, &state.stats), &dir.join("optimizer.ply"))?;
    let indices: Vec<String> = state.replaced_masks.iter().map(|(i, _)| i.to_string()).collect();
    let text = format!(
        "iteration = {}\nmasks_replaced = {}\nreplaced_views = {}\n",
        state.iteration,
        state.masks_replaced,
        indices.join(" ")
    );
    write_atomic(&dir.join("state.txt"), text.as_bytes())?;
    write_atomic(&dir.join("history.csv"), history_csv(&state.history).as_bytes())?;
    write_atomic(&dir.join("events.txt"), events_text(&state.events).as_bytes())?;
    for (i, m) in &state.replaced_masks {
        write_image(m, &dir.join("masks").join(format!("view_{i:03}.pgm")), BitDepth::Sixteen)?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<TrainState> {
    let splats = read_splats(&dir.join("splats.ply"))?;
    let opt_path = dir.join("optimizer.ply");
    let (adam, stats) = optimizer_from_table(&read_ply_table(&opt_path)?, &opt_path)?;
    if adam.len() != splats.len() {
        return Err(Error::DimensionMismatch(format!("{} splats but {} optimizer rows", splats.len(), adam.len())));
    }
    let state_path = dir.join("state.txt");
    let text = read_to_string(&state_path)?;
    let (mut iteration, mut masks_replaced, mut views) = (None, None, Vec::new());
    for (n, line) in text.lines().enumerate() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        let err = || Error::parse(&state_path, n + 1, format!("bad value for {k}"));
        match k {
            "iteration" => iteration = Some(v.parse::<usize>().map_err(|_| err())?),
            "masks_replaced" => masks_replaced = Some(v.parse::<bool>().map_err(|_| err())?),
            "replaced_views" => {
                views = v.split_whitespace().map(|x| x.parse::<usize>().map_err(|_| err())).collect::<Result<_>>()?
            }
            _ => return Err(Error::parse(&state_path, n + 1, format!("unknown key {k:?}"))),
        }
    }
    let missing = |k: &str| Error::parse(&state_path, 0, format!("missing {k}"));
    let replaced_masks = views
        .into_iter()
        .map(|i| Ok((i, read_image(&dir.join("masks").join(format!("view_{i:03}.pgm")))?)))
        .collect::<Result<_>>()?;
    let hist_path = dir.join("history.csv");
    let ev_path = dir.join("events.txt");
    Ok(TrainState {
        splats,
        adam,
        stats,
        iteration: iteration.ok_or_else(|| missing("iteration"))?,
        masks_replaced: masks_replaced.ok_or_else(|| missing("masks_replaced"))?,
        replaced_masks,
        history: parse_history(&read_to_string(&hist_path)?, &hist_path)?,
        events: parse_events(&read_to_string(&ev_path)?, &ev_path)?,
    })
}
