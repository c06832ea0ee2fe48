//! Reverse pass through compositing, ray-disk intersection and all loss terms.
//!
//! Hit lists, early-exit cutoffs, alpha caps and facing signs are treated as
//! fixed, so the result is the exact gradient of the piecewise-smooth loss on
//! the current piece. The depth-derived normal target is detached.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::ssim::ssim_with_grad;
use super::terms::{apply_mask, depth_distortion, distortion_depth, distortion_depth_slope, normal_consistency, photometric_mask, probability_loss, LossBreakdown, LossWeights, Photometric};
use crate::render::{NormalMap, RenderOutput, SplatGeom};
use crate::scene::{SplatPrimitive, View};
use crate::{Error, Result};

/// Gradient with respect to one splat's parameters.
///
/// `rotation` is the gradient in the body-frame tangent space: a step `delta`
/// updates the rotation as `q * exp(delta)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub center: Vector3<f64>,
    pub rotation: Vector3<f64>,
    pub log_scales: Vector2<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub prob_logit: f64,
}

impl SplatGrad {
    pub const LEN: usize = 13;

    pub fn to_array(&self) -> [f64; Self::LEN] {
        let (c, r, s, k) = (self.center, self.rotation, self.log_scales, self.color);
        [c.x, c.y, c.z, r.x, r.y, r.z, s.x, s.y, self.opacity_logit, k.x, k.y, k.z, self.prob_logit]
    }

    pub fn from_array(a: &[f64; Self::LEN]) -> Self {
        Self {
            center: Vector3::new(a[0], a[1], a[2]),
            rotation: Vector3::new(a[3], a[4], a[5]),
            log_scales: Vector2::new(a[6], a[7]),
            opacity_logit: a[8],
            color: Vector3::new(a[9], a[10], a[11]),
            prob_logit: a[12],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<SplatGrad>,
    /// Whether the splat contributed to at least one pixel.
    pub touched: Vec<bool>,
}

// Raw layout per splat: center, t_u, t_v, n, log-scales, opacity, color, probability.
const RAW: usize = 19;
const R_CENTER: usize = 0;
const R_TU: usize = 3;
const R_TV: usize = 6;
const R_N: usize = 9;
const R_LS: usize = 12;
const R_OPAC: usize = 14;
const R_COLOR: usize = 15;
const R_PROB: usize = 18;
/// Fixed row-band count; results do not depend on the thread pool size.
const CHUNKS: usize = 8;

fn add3(buf: &mut [f64], at: usize, v: &Vector3<f64>) {
    buf[at] += v.x;
    buf[at + 1] += v.y;
    buf[at + 2] += v.z;
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss value and gradient for one view.
pub fn backward(
    render: &RenderOutput,
    view: &View,
    splats: &[SplatPrimitive],
    nprime: &NormalMap,
    weights: LossWeights,
) -> Result<(LossBreakdown, GradientSet)> {
    render.rgb.check_same_shape(&view.rgb, "rendered vs ground-truth rgb")?;
    render.prob.check_same_shape(&view.prob_mask, "rendered vs supervision mask")?;
    let (width, height) = (view.rgb.width, view.rgb.height);
    let npix = width * height;
    if nprime.data.len() != npix || render.hits.pixel_count() != npix {
        return Err(Error::DimensionMismatch("normal target or hit lists vs view".into()));
    }
    let mask = &view.prob_mask.data;
    let lambda = weights.lambda1;

    let cmask = photometric_mask(view, &weights);
    let gt = apply_mask(&view.rgb, &cmask);
    let pred = apply_mask(&render.rgb, &cmask);
    let m = gt.data.len() as f64;
    let l1 = gt.data.iter().zip(&pred.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / m;
    let (ssim_value, dssim) = ssim_with_grad(&gt, &pred)?;
    let photometric = Photometric::new(l1, ssim_value, lambda);
    let breakdown = LossBreakdown::combine(
        photometric,
        probability_loss(render, view)?,
        depth_distortion(&render.hits, view),
        normal_consistency(&render.hits, splats, nprime, view),
        weights,
    );

    let geoms: Vec<SplatGeom> = splats.iter().map(SplatGeom::from_splat).collect();
    let colors: Vec<Vector3<f64>> = splats.iter().map(|s| s.color).collect();
    let probs: Vec<f64> = splats.iter().map(|s| s.probability()).collect();
    let cam = &view.camera;
    let origin = cam.center();
    let rt = cam.rotation.transpose();
    let inv_n = 1.0 / npix as f64;

    let band = height.div_ceil(CHUNKS).max(1);
    let partials: Vec<(Vec<f64>, Vec<bool>)> = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut raw = vec![0.0; RAW * splats.len()];
            let mut touched = vec![false; splats.len()];
            let y_end = ((chunk + 1) * band).min(height);
            let mut g = Vec::new();
            for y in (chunk * band).min(height)..y_end {
                for x in 0..width {
                    let k = y * width + x;
                    let hits = render.hits.pixel(k);
                    if hits.is_empty() {
                        continue;
                    }
                    let pm = mask[k];
                    let cm = cmask.data[k];
                    let mut gr = Vector3::zeros();
                    for c in 0..3 {
                        let i = 3 * k + c;
                        gr[c] = cm * ((1.0 - lambda) * sign(pred.data[i] - gt.data[i]) / m - lambda * dssim[i]);
                    }
                    let gw = weights.gamma * sign(render.prob.data[k] - mask[k]) * inv_n;
                    let a_w = weights.alpha * pm * inv_n;
                    let target = nprime.data[k];
                    let b_w = if target == Vector3::zeros() { 0.0 } else { weights.beta * pm * inv_n };

                    // forward quantities
                    let n = hits.len();
                    let mut trans = 1.0;
                    let mut omega = Vec::with_capacity(n);
                    let mut ts = Vec::with_capacity(n);
                    let (mut w_total, mut z_total) = (0.0, 0.0);
                    let zs: Vec<f64> = hits.iter().map(|h| distortion_depth(h.depth)).collect();
                    for (h, z) in hits.iter().zip(&zs) {
                        let w = h.alpha * trans;
                        ts.push(trans);
                        omega.push(w);
                        w_total += w;
                        z_total += w * z;
                        trans *= 1.0 - h.alpha;
                    }
                    // dL/d(omega_i) and dL/d(z_i)
                    g.clear();
                    let mut dz = Vec::with_capacity(n);
                    let (mut w_before, mut z_before) = (0.0, 0.0);
                    for (i, h) in hits.iter().enumerate() {
                        let s = h.splat_index as usize;
                        let w_after = w_total - w_before - omega[i];
                        let z_after = z_total - z_before - omega[i] * zs[i];
                        let mut gi = gr.dot(&colors[s]) + gw * probs[s];
                        gi += a_w * (zs[i] * (w_before - w_after) - (z_before - z_after));
                        dz.push(a_w * omega[i] * (w_before - w_after) * distortion_depth_slope(h.depth));
                        if b_w != 0.0 {
                            gi += b_w * (1.0 - h.facing * geoms[s].normal.dot(&target));
                        }
                        g.push(gi);
                        w_before += omega[i];
                        z_before += omega[i] * zs[i];
                    }

                    let dc = cam.pixel_ray_camera(x, y);
                    let dir = rt * dc;
                    let mut suffix = 0.0;
                    for i in (0..n).rev() {
                        let h = &hits[i];
                        let s = h.splat_index as usize;
                        let geo = &geoms[s];
                        let buf = &mut raw[RAW * s..RAW * (s + 1)];
                        touched[s] = true;
                        let d_alpha = g[i] * ts[i] - suffix / (1.0 - h.alpha);
                        suffix += g[i] * omega[i];

                        add3(buf, R_COLOR, &(gr * omega[i]));
                        buf[R_PROB] += gw * omega[i];
                        if b_w != 0.0 {
                            add3(buf, R_N, &(target * (-b_w * omega[i] * h.facing)));
                        }

                        let (mut gu, mut gv) = (0.0, 0.0);
                        if !h.capped {
                            buf[R_OPAC] += d_alpha * h.gauss_value;
                            let gg = d_alpha * geo.opacity * h.gauss_value;
                            gu = -gg * h.u;
                            gv = -gg * h.v;
                        }
                        let gt = dz[i] * dc.z;
                        if gu == 0.0 && gv == 0.0 && gt == 0.0 {
                            continue;
                        }
                        let denom = dir.dot(&geo.normal);
                        let rel = origin + dir * h.t - geo.center;
                        let (su, sv) = (geo.scale_u, geo.scale_v);
                        let kt = gu * geo.t_u.dot(&dir) / su + gv * geo.t_v.dot(&dir) / sv + gt;
                        let dcenter = geo.normal * (kt / denom) - geo.t_u * (gu / su) - geo.t_v * (gv / sv);
                        add3(buf, R_CENTER, &dcenter);
                        add3(buf, R_N, &(rel * (-kt / denom)));
                        add3(buf, R_TU, &(rel * (gu / su)));
                        add3(buf, R_TV, &(rel * (gv / sv)));
                        buf[R_LS] -= gu * h.u;
                        buf[R_LS + 1] -= gv * h.v;
                    }
                }
            }
            (raw, touched)
        })
        .collect();

    let mut raw = vec![0.0; RAW * splats.len()];
    let mut touched = vec![false; splats.len()];
    for (part, t) in &partials {
        raw.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        touched.iter_mut().zip(t).for_each(|(a, b)| *a |= b);
    }

    let grads = splats
        .iter()
        .enumerate()
        .map(|(s, sp)| {
            let r = &raw[RAW * s..RAW * (s + 1)];
            let v3 = |at: usize| Vector3::new(r[at], r[at + 1], r[at + 2]);
            let frame = sp.frame();
            let rt = frame.transpose();
            let rotation = Vector3::x().cross(&(rt * v3(R_TU)))
                + Vector3::y().cross(&(rt * v3(R_TV)))
                + Vector3::z().cross(&(rt * v3(R_N)));
            let o = sp.opacity();
            let p = sp.probability();
            SplatGrad {
                center: v3(R_CENTER),
                rotation,
                log_scales: Vector2::new(r[R_LS], r[R_LS + 1]),
                opacity_logit: r[R_OPAC] * o * (1.0 - o),
                color: v3(R_COLOR),
                prob_logit: r[R_PROB] * p * (1.0 - p),
            }
        })
        .collect();
    Ok((breakdown, GradientSet { grads, touched }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip() {
        let a: [f64; SplatGrad::LEN] = std::array::from_fn(|i| i as f64 * 0.5 - 3.0);
        assert_eq!(SplatGrad::from_array(&a).to_array(), a);
    }

    #[test]
    fn rejects_mismatched_normal_target() {
        use crate::render::{render_view, RenderOptions};
        use crate::scene::{Camera, ImageBuffer};
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, -3.0),
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            8.0,
            6,
            6,
        );
        let view = View::new(ImageBuffer::new(6, 6, 3), ImageBuffer::new(6, 6, 1), cam.clone()).unwrap();
        let r = render_view(&[], &cam, &RenderOptions::default());
        let bad = NormalMap::zeros(5, 6);
        assert!(backward(&r, &view, &[], &bad, LossWeights::default()).is_err());
    }
}
