//! Independent test oracles: a brute-force renderer, random scene builders and
//! a central-difference gradient checker.
#![allow(dead_code)]

use nalgebra::{UnitQuaternion, Vector3};
use probsplat::loss::{backward, total_loss, LossWeights, SplatGrad};
use probsplat::render::{depth_to_normal, render_view, NormalMap, RenderOptions, RenderOutput};
use probsplat::scene::{Camera, ImageBuffer, SplatPrimitive, View};
use rand::Rng;

pub struct BrutePixel {
    pub rgb: Vector3<f64>,
    pub prob: f64,
    pub depth: f64,
    pub normal: Vector3<f64>,
    pub final_t: f64,
    /// (splat index, alpha) of every composited hit, front to back.
    pub hits: Vec<(u32, f64)>,
}

/// Tests every splat at every pixel with textbook formulas and accumulates term by term.
pub fn brute_render(splats: &[SplatPrimitive], cam: &Camera) -> Vec<BrutePixel> {
    let origin = -(cam.rotation.transpose() * cam.translation);
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let dc = Vector3::new(
                (x as f64 + 0.5 - cam.cx) / cam.fx,
                (y as f64 + 0.5 - cam.cy) / cam.fy,
                1.0,
            )
            .normalize();
            let dir = cam.rotation.transpose() * dc;
            let mut hits: Vec<(f64, u32, f64, f64, Vector3<f64>)> = Vec::new();
            for (i, s) in splats.iter().enumerate() {
                let r = s.rotation.to_rotation_matrix();
                let (tu, tv, n) = (r * Vector3::x(), r * Vector3::y(), r * Vector3::z());
                let dn = dir.dot(&n);
                if dn.abs() < 1e-9 {
                    continue;
                }
                let t = (s.center - origin).dot(&n) / dn;
                if t <= 1e-4 {
                    continue;
                }
                let p = origin + dir * t - s.center;
                let u = p.dot(&tu) / s.log_scales.x.exp();
                let v = p.dot(&tv) / s.log_scales.y.exp();
                if u * u + v * v > 9.0 {
                    continue;
                }
                let o = 1.0 / (1.0 + (-s.opacity_logit).exp());
                let a = (o * (-(u * u + v * v) / 2.0).exp()).min(0.9999);
                if a < 1.0 / 255.0 {
                    continue;
                }
                let flipped = if dn > 0.0 { -n } else { n };
                hits.push((t, i as u32, a, t * dc.z, flipped));
            }
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut px = BrutePixel {
                rgb: Vector3::zeros(),
                prob: 0.0,
                depth: 0.0,
                normal: Vector3::zeros(),
                final_t: 1.0,
                hits: Vec::new(),
            };
            let (mut wsum, mut zsum, mut nsum) = (0.0, 0.0, Vector3::zeros());
            for (_, i, a, z, n) in hits {
                let s = &splats[i as usize];
                let ti: f64 = px.hits.iter().map(|&(_, aj)| 1.0 - aj).product();
                let w = a * ti;
                px.rgb += s.color * w;
                px.prob += w / (1.0 + (-s.prob_logit).exp());
                wsum += w;
                zsum += w * z;
                nsum += n * w;
                px.hits.push((i, a));
                px.final_t = ti * (1.0 - a);
                if px.final_t < 1e-4 {
                    break;
                }
            }
            if !px.hits.is_empty() {
                px.depth = zsum / wsum.max(1e-8);
                if nsum.norm() > 0.0 {
                    px.normal = nsum.normalize();
                }
            }
            out.push(px);
        }
    }
    out
}

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..std::f64::consts::PI) / axis.norm().max(1e-9))
}

/// Splats scattered around the origin with moderate opacity.
pub fn random_splats(rng: &mut impl Rng, n: usize) -> Vec<SplatPrimitive> {
    (0..n)
        .map(|_| {
            let c = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
            let color = Vector3::new(rng.random(), rng.random(), rng.random());
            let mut s = SplatPrimitive::new(c, 0.1, color);
            s.rotation = random_rotation(rng);
            s.log_scales.x = rng.random_range(0.08f64..0.35).ln();
            s.log_scales.y = rng.random_range(0.08f64..0.35).ln();
            s.opacity_logit = rng.random_range(-1.0..2.5);
            s.prob_logit = rng.random_range(-2.0..2.0);
            s
        })
        .collect()
}

pub fn random_camera(rng: &mut impl Rng, w: usize, h: usize) -> Camera {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phi: f64 = rng.random_range(-0.6..0.6);
    let eye = Vector3::new(theta.cos() * phi.cos(), phi.sin(), theta.sin() * phi.cos()) * 3.0;
    Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), w.max(h) as f64 * 1.2, w, h)
}

/// Random target image and a soft mask with some exact zeros and ones.
pub fn random_view(rng: &mut impl Rng, cam: &Camera) -> View {
    let rgb = ImageBuffer::from_fn(cam.width, cam.height, 3, |_, _, _| rng.random());
    let mask = ImageBuffer::from_fn(cam.width, cam.height, 1, |_, _, _| match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    });
    View::new(rgb, mask, cam.clone()).unwrap()
}

pub fn render(splats: &[SplatPrimitive], cam: &Camera) -> RenderOutput {
    render_view(splats, cam, &RenderOptions::default())
}

/// Everything that makes the loss non-smooth: hit sets and order, caps, facing
/// flips and the signs inside the absolute-value terms.
fn signature(splats: &[SplatPrimitive], view: &View) -> Vec<i64> {
    let r = render(splats, &view.camera);
    let mut sig = Vec::new();
    for k in 0..r.hits.pixel_count() {
        for h in r.hits.pixel(k) {
            sig.push(h.splat_index as i64 * 4 + h.capped as i64 * 2 + (h.facing > 0.0) as i64);
        }
        sig.push(-1);
        let m = view.prob_mask.data[k];
        for c in 0..3 {
            let d = m * r.rgb.data[3 * k + c] - m * view.rgb.data[3 * k + c];
            sig.push(d.partial_cmp(&0.0).map_or(9, |o| o as i64));
        }
        sig.push((r.prob.data[k] - m).partial_cmp(&0.0).map_or(9, |o| o as i64));
    }
    sig
}

pub fn perturb(s: &SplatPrimitive, param: usize, h: f64) -> SplatPrimitive {
    let mut s = s.clone();
    match param {
        0..=2 => s.center[param] += h,
        3..=5 => {
            let mut d = Vector3::zeros();
            d[param - 3] = h;
            s.rotation *= UnitQuaternion::from_scaled_axis(d);
        }
        6 | 7 => s.log_scales[param - 6] += h,
        8 => s.opacity_logit += h,
        9..=11 => s.color[param - 9] += h,
        12 => s.prob_logit += h,
        _ => unreachable!(),
    }
    s
}

pub const PARAM_NAMES: [&str; SplatGrad::LEN] = [
    "center.x", "center.y", "center.z", "rot.x", "rot.y", "rot.z", "log_scale.u", "log_scale.v", "opacity_logit",
    "color.r", "color.g", "color.b", "prob_logit",
];

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Partials whose every probe straddled a non-smooth point.
    pub skipped: usize,
    pub failures: Vec<String>,
    pub max_rel_err: f64,
}

impl FdReport {
    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.skipped += o.skipped;
        self.failures.extend(o.failures);
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
    }
}

/// Matches when the relative error is below 1e-3, or the absolute error below
/// 1e-7 for magnitudes under 1e-4.
pub fn grad_close(analytic: f64, numeric: f64) -> (bool, f64) {
    let mag = analytic.abs().max(numeric.abs());
    let err = (analytic - numeric).abs();
    let rel = if mag > 0.0 { err / mag } else { 0.0 };
    if mag < 1e-4 {
        (err < 1e-7 || rel < 1e-3, if err < 1e-7 { 0.0 } else { rel })
    } else {
        (rel < 1e-3, rel)
    }
}

/// Compares every analytic partial against central differences with the
/// depth-derived normal target held fixed.
pub fn check_gradients(splats: &[SplatPrimitive], view: &View, weights: LossWeights) -> FdReport {
    let base = render(splats, &view.camera);
    let nprime: NormalMap = depth_to_normal(&base.depth, &view.camera);
    let (_, grads) = backward(&base, view, splats, &nprime, weights).unwrap();
    let sig0 = signature(splats, view);
    let loss = |ss: &[SplatPrimitive]| {
        let r = render(ss, &view.camera);
        total_loss(&r, view, ss, &nprime, weights).unwrap().total
    };
    let mut rep = FdReport::default();
    for (i, g) in grads.grads.iter().enumerate() {
        let analytic = g.to_array();
        for p in 0..SplatGrad::LEN {
            let mut numeric = None;
            for h in [1e-4, 1e-5, 1e-6] {
                // Richardson extrapolation of central differences at h and h/2
                let mut d = [0.0; 2];
                let mut clean = true;
                for (k, step) in [h, h / 2.0].into_iter().enumerate() {
                    let mut plus = splats.to_vec();
                    plus[i] = perturb(&splats[i], p, step);
                    let mut minus = splats.to_vec();
                    minus[i] = perturb(&splats[i], p, -step);
                    if signature(&plus, view) != sig0 || signature(&minus, view) != sig0 {
                        clean = false;
                        break;
                    }
                    d[k] = (loss(&plus) - loss(&minus)) / (2.0 * step);
                }
                if clean {
                    numeric = Some((4.0 * d[1] - d[0]) / 3.0);
                    break;
                }
            }
            let Some(numeric) = numeric else {
                rep.skipped += 1;
                continue;
            };
            rep.checked += 1;
            let (ok, rel) = grad_close(analytic[p], numeric);
            rep.max_rel_err = rep.max_rel_err.max(rel);
            if !ok {
                rep.failures.push(format!(
                    "splat {i} {}: analytic {:e} numeric {:e}",
                    PARAM_NAMES[p], analytic[p], numeric
                ));
            }
        }
    }
    rep
}
