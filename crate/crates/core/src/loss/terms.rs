use crate::render::{NormalMap, PixelHits, RenderOutput};
use crate::scene::{ImageBuffer, SplatPrimitive, View};
use crate::{Error, Result};

use super::ssim::ssim;

/// Coefficients of the total loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Blend between L1 and D-SSIM inside the photometric term.
    pub lambda1: f64,
    /// Depth distortion.
    pub alpha: f64,
    /// Normal consistency.
    pub beta: f64,
    /// Probability loss.
    pub gamma: f64,
    /// Weight the photometric term by the supervision mask. Off fits the
    /// whole frame, as a full-scene reconstruction does.
    pub mask_photometric: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.2,
            alpha: 100.0,
            beta: 0.8,
            gamma: 0.8,
            mask_photometric: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    /// SSIM score of the masked images (1 = identical).
    pub ssim_term: f64,
    pub photometric: f64,
    pub prob_loss: f64,
    pub depth_distortion: f64,
    pub normal_consistency: f64,
    pub total: f64,
    pub weights: Option<LossWeights>,
}

impl LossBreakdown {
    /// Combines already computed terms.
    pub fn combine(
        photometric: Photometric,
        prob_loss: f64,
        depth_distortion: f64,
        normal_consistency: f64,
        weights: LossWeights,
    ) -> Self {
        let total = photometric.photometric
            + weights.alpha * depth_distortion
            + weights.beta * normal_consistency
            + weights.gamma * prob_loss;
        Self {
            l1: photometric.l1,
            ssim_term: photometric.ssim,
            photometric: photometric.photometric,
            prob_loss,
            depth_distortion,
            normal_consistency,
            total,
            weights: Some(weights),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Photometric {
    pub l1: f64,
    pub ssim: f64,
    pub photometric: f64,
}

impl Photometric {
    pub fn new(l1: f64, ssim: f64, lambda1: f64) -> Self {
        Self {
            l1,
            ssim,
            photometric: (1.0 - lambda1) * l1 + lambda1 * (1.0 - ssim),
        }
    }
}

fn check_render(render: &RenderOutput, view: &View) -> Result<()> {
    render.rgb.check_same_shape(&view.rgb, "rendered vs ground-truth rgb")?;
    render.prob.check_same_shape(&view.prob_mask, "rendered vs supervision mask")
}

/// Multiplies every channel of `img` by the single-channel `mask`.
pub fn apply_mask(img: &ImageBuffer, mask: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    for (k, px) in out.data.chunks_mut(img.channels).enumerate() {
        let m = mask.data[k];
        px.iter_mut().for_each(|v| *v *= m);
    }
    out
}

/// L1, SSIM and their blend over the mask-weighted images.
pub fn masked_photometric(render: &RenderOutput, view: &View, lambda1: f64) -> Result<Photometric> {
    check_render(render, view)?;
    let gt = apply_mask(&view.rgb, &view.prob_mask);
    let pred = apply_mask(&render.rgb, &view.prob_mask);
    let l1 = gt.data.iter().zip(&pred.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / gt.data.len() as f64;
    Ok(Photometric::new(l1, ssim(&gt, &pred)?, lambda1))
}

/// Per-pixel photometric weight: the supervision mask, or 1 everywhere.
pub fn photometric_mask(view: &View, weights: &LossWeights) -> ImageBuffer {
    if weights.mask_photometric {
        view.prob_mask.clone()
    } else {
        ImageBuffer::filled(view.prob_mask.width, view.prob_mask.height, 1, 1.0)
    }
}

/// Mean absolute difference between the rendered and supervision probability maps.
pub fn probability_loss(render: &RenderOutput, view: &View) -> Result<f64> {
    check_render(render, view)?;
    let n = render.prob.data.len() as f64;
    Ok(render
        .prob
        .data
        .iter()
        .zip(&view.prob_mask.data)
        .map(|(w, t)| (w - t).abs())
        .sum::<f64>()
        / n)
}

pub const DISTORTION_NEAR: f64 = 0.2;
pub const DISTORTION_FAR: f64 = 100.0;

/// Normalized depth seen by the distortion term: 0 at the near plane,
/// approaching 1 at the far plane, monotone in camera depth `z`.
pub fn distortion_depth(z: f64) -> f64 {
    DISTORTION_FAR / (DISTORTION_FAR - DISTORTION_NEAR) * (1.0 - DISTORTION_NEAR / z)
}

pub fn distortion_depth_slope(z: f64) -> f64 {
    DISTORTION_FAR / (DISTORTION_FAR - DISTORTION_NEAR) * DISTORTION_NEAR / (z * z)
}

/// Mask-weighted pairwise spread of normalized depth along each ray, O(n)
/// per pixel.
pub fn depth_distortion(hits: &PixelHits, view: &View) -> f64 {
    let n = view.prob_mask.data.len();
    let mut total = 0.0;
    for k in 0..hits.pixel_count().min(n) {
        let mask = view.prob_mask.data[k];
        let list = hits.pixel(k);
        if mask == 0.0 || list.len() < 2 {
            continue;
        }
        let (mut trans, mut w_before, mut wz_before, mut acc) = (1.0, 0.0, 0.0, 0.0);
        for h in list {
            let w = h.alpha * trans;
            let z = distortion_depth(h.depth);
            // sum over earlier hits i of w_i w (z - z_i), hits sorted by depth
            acc += w * (z * w_before - wz_before);
            w_before += w;
            wz_before += w * z;
            trans *= 1.0 - h.alpha;
        }
        total += mask * acc;
    }
    total / n as f64
}

/// Mask-weighted misalignment between splat normals and depth-derived normals.
pub fn normal_consistency(hits: &PixelHits, splats: &[SplatPrimitive], nprime: &NormalMap, view: &View) -> f64 {
    let n = view.prob_mask.data.len();
    let normals: Vec<_> = splats.iter().map(|s| s.normal()).collect();
    let mut total = 0.0;
    for k in 0..hits.pixel_count().min(n) {
        let mask = view.prob_mask.data[k];
        let target = nprime.data[k];
        if mask == 0.0 || target == nalgebra::Vector3::zeros() {
            continue;
        }
        let mut trans = 1.0;
        let mut acc = 0.0;
        for h in hits.pixel(k) {
            let w = h.alpha * trans;
            acc += w * (1.0 - h.facing * normals[h.splat_index as usize].dot(&target));
            trans *= 1.0 - h.alpha;
        }
        total += mask * acc;
    }
    total / n as f64
}

/// All loss terms for one rendered view.
pub fn total_loss(
    render: &RenderOutput,
    view: &View,
    splats: &[SplatPrimitive],
    nprime: &NormalMap,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    if nprime.data.len() != view.prob_mask.data.len() {
        return Err(Error::DimensionMismatch("normal target vs view".into()));
    }
    let photometric = if weights.mask_photometric {
        masked_photometric(render, view, weights.lambda1)?
    } else {
        let full = View { prob_mask: photometric_mask(view, &weights), ..view.clone() };
        masked_photometric(render, &full, weights.lambda1)?
    };
    let prob = probability_loss(render, view)?;
    Ok(LossBreakdown::combine(
        photometric,
        prob,
        depth_distortion(&render.hits, view),
        normal_consistency(&render.hits, splats, nprime, view),
        weights,
    ))
}
