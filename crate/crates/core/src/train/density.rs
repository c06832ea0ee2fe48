//! Initialization from points, densification and pruning.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::adam::Adam;
use crate::loss::GradientSet;
use crate::scene::{logit, Camera, PointCloud, SplatPrimitive, MIN_LOG_SCALE};
use crate::{Error, Result};

/// Neighbours averaged for the initial splat scale.
pub const INIT_NEIGHBOURS: usize = 3;
/// Scale of a splat initialized from an isolated point.
pub const ISOLATED_SCALE: f64 = 0.01;
pub const INIT_OPACITY: f64 = 0.5;
pub const INIT_PROBABILITY: f64 = 0.5;
/// Per-axis scale divisor of split children.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
pub const SPLIT_CHILDREN: usize = 2;

/// One isotropic splat per point: identity rotation, scale equal to the mean
/// distance to the nearest neighbours, gray where the cloud has no colors.
pub fn init_from_points(cloud: &PointCloud) -> Result<Vec<SplatPrimitive>> {
    if cloud.is_empty() {
        return Err(Error::Data("cannot initialize from an empty point cloud".into()));
    }
    if let Some(c) = &cloud.colors {
        if c.len() != cloud.len() {
            return Err(Error::DimensionMismatch(format!("{} points, {} colors", cloud.len(), c.len())));
        }
    }
    let pts = &cloud.points;
    let scales: Vec<f64> = (0..pts.len()).into_par_iter().map(|i| mean_knn_distance(pts, i, INIT_NEIGHBOURS)).collect();
    Ok(pts
        .iter()
        .zip(scales)
        .enumerate()
        .map(|(i, (p, s))| {
            let color = cloud.colors.as_ref().map_or(Vector3::repeat(0.5), |c| c[i].map(|v| v.clamp(0.0, 1.0)));
            SplatPrimitive {
                center: *p,
                rotation: UnitQuaternion::identity(),
                log_scales: Vector2::repeat(s.ln().max(MIN_LOG_SCALE)),
                opacity_logit: logit(INIT_OPACITY),
                color,
                prob_logit: logit(INIT_PROBABILITY),
            }
        })
        .collect())
}

fn mean_knn_distance(pts: &[Vector3<f64>], i: usize, k: usize) -> f64 {
    let mut best = [f64::INFINITY; INIT_NEIGHBOURS];
    let k = k.min(INIT_NEIGHBOURS);
    for (j, q) in pts.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = (q - pts[i]).norm_squared();
        if d < best[k - 1] {
            let mut s = k - 1;
            while s > 0 && best[s - 1] > d {
                best[s] = best[s - 1];
                s -= 1;
            }
            best[s] = d;
        }
    }
    let found: Vec<f64> = best[..k].iter().filter(|d| d.is_finite()).map(|d| d.sqrt()).collect();
    if found.is_empty() {
        ISOLATED_SCALE
    } else {
        found.iter().sum::<f64>() / found.len() as f64
    }
}

/// Accumulated screen-space center gradient norms since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self { sum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / self.count[i] as f64
        }
    }

    /// Adds the NDC-space norm of each touched splat's center gradient.
    pub fn accumulate(&mut self, splats: &[SplatPrimitive], grads: &GradientSet, camera: &Camera) {
        let right = camera.rotation.row(0).transpose();
        let down = camera.rotation.row(1).transpose();
        let (hw, hh) = (camera.width as f64 * 0.5, camera.height as f64 * 0.5);
        for (i, s) in splats.iter().enumerate() {
            if !grads.touched[i] {
                continue;
            }
            let z = camera.to_camera(&s.center).z;
            if z <= 0.0 {
                continue;
            }
            let g = grads.grads[i].center;
            let gx = g.dot(&right) * z / camera.fx * hw;
            let gy = g.dot(&down) * z / camera.fy * hh;
            self.sum[i] += (gx * gx + gy * gy).sqrt();
            self.count[i] += 1;
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut i = 0;
        self.sum.retain(|_| (keep[i], i += 1).0);
        let mut i = 0;
        self.count.retain(|_| (keep[i], i += 1).0);
    }

    fn reset(&mut self, n: usize) {
        *self = Self::new(n);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Splats larger than this (world units) are split, smaller ones cloned.
    pub split_scale: f64,
    pub max_splats: usize,
    /// Newborn splats restart at the initial probability instead of inheriting.
    pub reset_probability: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
}

/// Clones small and splits large splats whose mean screen-space gradient
/// reaches the threshold. Children are appended; split parents are removed.
/// Gradient statistics are reset afterwards.
pub fn densify<R: Rng>(
    splats: &mut Vec<SplatPrimitive>,
    adam: &mut Adam,
    stats: &mut GradStats,
    p: &DensifyParams,
    rng: &mut R,
) -> DensifyOutcome {
    let n = splats.len();
    let mut out = DensifyOutcome::default();
    let mut born = Vec::new();
    let mut keep = vec![true; n];
    let mut total = n;
    for i in 0..n {
        if stats.mean(i) < p.grad_threshold || stats.count[i] == 0 {
            continue;
        }
        let s = &splats[i];
        let large = s.scales().max() > p.split_scale;
        // split nets +1, clone +1
        if total + 1 > p.max_splats {
            break;
        }
        total += 1;
        if large {
            let frame = s.frame();
            for _ in 0..SPLIT_CHILDREN {
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                let sc = s.scales();
                let mut c = s.clone();
                c.center = s.center + frame * Vector3::new(a * sc.x, b * sc.y, 0.0);
                c.log_scales = (s.log_scales.add_scalar(-SPLIT_SCALE_DIVISOR.ln())).map(|v| v.max(MIN_LOG_SCALE));
                born.push(c);
            }
            keep[i] = false;
            out.split += 1;
        } else {
            born.push(s.clone());
            out.cloned += 1;
        }
    }
    if p.reset_probability {
        for c in &mut born {
            c.prob_logit = logit(INIT_PROBABILITY);
        }
    }
    let mut i = 0;
    splats.retain(|_| (keep[i], i += 1).0);
    adam.retain(&keep);
    adam.extend_zeroed(born.len());
    splats.extend(born);
    stats.reset(splats.len());
    out
}

#[derive(Clone, Copy, Debug)]
pub struct PruneParams {
    pub opacity_threshold: f64,
    /// `None` disables probability pruning.
    pub prob_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PruneOutcome {
    pub by_opacity: usize,
    pub by_probability: usize,
}

/// Removes splats below the opacity threshold or, when enabled, below the
/// probability threshold. Fails rather than leaving an empty model.
pub fn prune(
    splats: &mut Vec<SplatPrimitive>,
    adam: &mut Adam,
    stats: &mut GradStats,
    p: &PruneParams,
    iteration: usize,
) -> Result<PruneOutcome> {
    let mut out = PruneOutcome::default();
    let keep: Vec<bool> = splats
        .iter()
        .map(|s| {
            if s.opacity() < p.opacity_threshold {
                out.by_opacity += 1;
                false
            } else if p.prob_threshold.is_some_and(|t| s.probability() < t) {
                out.by_probability += 1;
                false
            } else {
                true
            }
        })
        .collect();
    if !keep.iter().any(|&k| k) && !splats.is_empty() {
        return Err(Error::Numerical(format!(
            "pruning at iteration {iteration} would remove all {} splats ({} by opacity, {} by probability)",
            splats.len(),
            out.by_opacity,
            out.by_probability
        )));
    }
    let mut i = 0;
    splats.retain(|_| (keep[i], i += 1).0);
    adam.retain(&keep);
    stats.retain(&keep);
    Ok(out)
}
