//! Mask accuracy and masked image quality.
//!
//! Masks are binarized with `value >= tau`. mIoU is TP/(TP+FP+FN) and mAcc
//! is foreground recall TP/(TP+FN), so over-coverage lowers mIoU but not
//! mAcc. Undefined ratios (empty denominators) are reported as 1 and flagged,
//! and are left out of means.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::fsutil::fmt_f64;
use crate::loss::{apply_mask, ssim};
use crate::render::{render_view, RenderOptions};
use crate::scene::{ImageBuffer, SplatPrimitive, View};
use crate::{Error, Result};

pub const DEFAULT_TAU: f64 = 0.1;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn binarize_mask(prob: &ImageBuffer, tau: f64) -> ImageBuffer {
    prob.map(|v| if v >= tau { 1.0 } else { 0.0 })
}

/// A ratio that may have an empty denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Self { value: 1.0, defined: false }
        } else {
            Self { value: num as f64 / den as f64, defined: true }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Counts over binary masks; nonzero means foreground.
pub fn confusion(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<Confusion> {
    pred.check_same_shape(gt, "predicted vs ground-truth mask")?;
    let mut c = Confusion::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p != 0.0, g != 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn miou(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<Ratio> {
    let c = confusion(pred, gt)?;
    Ok(Ratio::of(c.tp, c.tp + c.fp + c.fn_))
}

pub fn macc(pred: &ImageBuffer, gt: &ImageBuffer) -> Result<Ratio> {
    let c = confusion(pred, gt)?;
    Ok(Ratio::of(c.tp, c.tp + c.fn_))
}

/// PSNR over the pixels where `mask` is nonzero, all channels, peak 1.
pub fn masked_psnr(render: &ImageBuffer, gt: &ImageBuffer, mask: &ImageBuffer) -> Result<f64> {
    render.check_same_shape(gt, "render vs ground truth")?;
    if mask.width != gt.width || mask.height != gt.height || mask.channels != 1 {
        return Err(Error::DimensionMismatch("mask vs image".into()));
    }
    let ch = gt.channels;
    let (mut se, mut n) = (0.0, 0usize);
    for (p, &m) in mask.data.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for c in 0..ch {
            let d = render.data[p * ch + c] - gt.data[p * ch + c];
            se += d * d;
        }
        n += ch;
    }
    if n == 0 {
        return Err(Error::Data("PSNR mask selects no pixels".into()));
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// SSIM of both images after zeroing the pixels outside `mask`.
pub fn masked_ssim(render: &ImageBuffer, gt: &ImageBuffer, mask: &ImageBuffer) -> Result<f64> {
    render.check_same_shape(gt, "render vs ground truth")?;
    ssim(&apply_mask(render, mask), &apply_mask(gt, mask))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewMetrics {
    pub view: usize,
    pub miou: Ratio,
    pub macc: Ratio,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub tau: f64,
    /// Score PSNR and SSIM on the full frame instead of the object mask.
    pub full_frame: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, full_frame: false }
    }
}

/// Renders each `(index, view)` and scores it against its ground-truth mask.
pub fn evaluate_views(
    splats: &[SplatPrimitive],
    views: &[(usize, &View)],
    gt_masks: &[&ImageBuffer],
    opts: &EvalOptions,
) -> Result<Vec<ViewMetrics>> {
    if views.len() != gt_masks.len() {
        return Err(Error::DimensionMismatch(format!("{} views, {} ground-truth masks", views.len(), gt_masks.len())));
    }
    let ropts = RenderOptions { keep_hits: false, ..RenderOptions::default() };
    views
        .par_iter()
        .zip(gt_masks.par_iter())
        .map(|(&(index, view), gt)| {
            let r = render_view(splats, &view.camera, &ropts);
            let pred = binarize_mask(&r.prob, opts.tau);
            let gt = binarize_mask(gt, 0.5);
            let region = if opts.full_frame { ImageBuffer::filled(gt.width, gt.height, 1, 1.0) } else { gt.clone() };
            Ok(ViewMetrics {
                view: index,
                miou: miou(&pred, &gt)?,
                macc: macc(&pred, &gt)?,
                psnr: masked_psnr(&r.rgb, &view.rgb, &region)?,
                ssim: masked_ssim(&r.rgb, &view.rgb, &region)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub views: Vec<ViewMetrics>,
    pub mean_miou: f64,
    pub mean_macc: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub peak_splats: usize,
    pub final_splats: usize,
    /// Kept out of the report files so reruns stay byte-identical.
    pub seconds: f64,
}

fn mean_defined(it: impl Iterator<Item = Ratio>) -> f64 {
    let (s, n) = it.filter(|r| r.defined).fold((0.0, 0usize), |(s, n), r| (s + r.value, n + 1));
    if n == 0 {
        1.0
    } else {
        s / n as f64
    }
}

/// Summarizes per-view metrics; `splat_history` is the per-iteration count.
pub fn report(name: &str, views: Vec<ViewMetrics>, splat_history: &[usize], seconds: f64) -> Result<EvalReport> {
    let (Some(&last), Some(&peak)) = (splat_history.last(), splat_history.iter().max()) else {
        return Err(Error::Data(format!("run {name:?} has an empty training history")));
    };
    if views.is_empty() {
        return Err(Error::Data(format!("run {name:?} has no evaluation views")));
    }
    let n = views.len() as f64;
    Ok(EvalReport {
        name: name.to_string(),
        mean_miou: mean_defined(views.iter().map(|v| v.miou)),
        mean_macc: mean_defined(views.iter().map(|v| v.macc)),
        mean_psnr: views.iter().map(|v| v.psnr).sum::<f64>() / n,
        mean_ssim: views.iter().map(|v| v.ssim).sum::<f64>() / n,
        peak_splats: peak,
        final_splats: last,
        seconds,
        views,
    })
}

fn flag(r: Ratio) -> String {
    if r.defined {
        fmt_f64(r.value)
    } else {
        "undefined".into()
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,miou,macc,psnr,ssim\n");
        for v in &self.views {
            let _ = writeln!(s, "{},{},{},{},{}", v.view, flag(v.miou), flag(v.macc), fmt_f64(v.psnr), fmt_f64(v.ssim));
        }
        let _ = writeln!(
            s,
            "mean,{},{},{},{}",
            fmt_f64(self.mean_miou),
            fmt_f64(self.mean_macc),
            fmt_f64(self.mean_psnr),
            fmt_f64(self.mean_ssim)
        );
        let _ = writeln!(s, "# peak_splats = {}\n# final_splats = {}", self.peak_splats, self.final_splats);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<6} {:>8} {:>8} {:>8} {:>8}\n", "view", "mIoU", "mAcc", "PSNR", "SSIM");
        for v in &self.views {
            let _ = writeln!(s, "{:<6} {:>8.4} {:>8.4} {:>8.3} {:>8.4}", v.view, v.miou.value, v.macc.value, v.psnr, v.ssim);
        }
        let _ = writeln!(
            s,
            "{:<6} {:>8.4} {:>8.4} {:>8.3} {:>8.4}",
            "mean", self.mean_miou, self.mean_macc, self.mean_psnr, self.mean_ssim
        );
        let _ = writeln!(s, "splats: peak {} final {}", self.peak_splats, self.final_splats);
        s
    }
}

/// Rows sorted by run name.
pub fn ablation_rows(reports: &[EvalReport]) -> Vec<&EvalReport> {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    rows
}

pub fn ablation_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("name,miou,macc,psnr,ssim,peak_splats,final_splats\n");
    for r in ablation_rows(reports) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.name,
            fmt_f64(r.mean_miou),
            fmt_f64(r.mean_macc),
            fmt_f64(r.mean_psnr),
            fmt_f64(r.mean_ssim),
            r.peak_splats,
            r.final_splats
        );
    }
    s
}

pub fn ablation_table(reports: &[EvalReport]) -> String {
    let w = reports.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "name", "mIoU", "mAcc", "PSNR", "SSIM", "peak", "final");
    for r in ablation_rows(reports) {
        let _ = writeln!(
            s,
            "{:<w$} {:>8.4} {:>8.4} {:>8.3} {:>8.4} {:>8} {:>8}",
            r.name, r.mean_miou, r.mean_macc, r.mean_psnr, r.mean_ssim, r.peak_splats, r.final_splats
        );
    }
    s
}
