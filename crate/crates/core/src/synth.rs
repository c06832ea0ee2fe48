//! Synthetic ground-truth datasets.
//!
//! A lumpy, multi-colored closed object built from splats sits at the origin,
//! surrounded by background clutter blobs. Orbiting cameras render RGB and an
//! exact object mask with the same rasterizer used for training. Training
//! masks are blurred copies of the exact masks, a fraction of views get their
//! mask replaced by a misdetection, and a noisy point cloud mixes object
//! points with background points.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::fsutil::write_atomic;
use crate::render::{render_view, RenderOptions};
use crate::scene::{logit, Camera, Dataset, GroundTruth, ImageBuffer, PointCloud, SplatPrimitive, View, LOGIT_LIMIT};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub object_splats: usize,
    pub object_radius: f64,
    /// Relative amplitude of the radial bumps.
    pub object_lumpiness: f64,
    pub clutter_objects: usize,
    pub clutter_splats: usize,
    /// Horizontal distance range of clutter blob centers, in object radii.
    pub clutter_radius_min: f64,
    pub clutter_radius_max: f64,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub orbit_radius: f64,
    /// Camera elevation range in radians.
    pub elevation_min: f64,
    pub elevation_max: f64,
    /// Gaussian blur applied to exact masks, in pixels.
    pub mask_blur_sigma: f64,
    pub misdetection_fraction: f64,
    pub points: usize,
    pub background_fraction: f64,
    pub point_jitter: f64,
    pub held_out_views: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object_splats: 1500,
            object_radius: 1.0,
            object_lumpiness: 0.12,
            clutter_objects: 6,
            clutter_splats: 240,
            clutter_radius_min: 6.0,
            clutter_radius_max: 7.0,
            views: 48,
            width: 96,
            height: 96,
            focal: 100.0,
            orbit_radius: 4.0,
            elevation_min: 0.2,
            elevation_max: 0.45,
            mask_blur_sigma: 2.0,
            misdetection_fraction: 0.1,
            points: 2000,
            background_fraction: 0.3,
            point_jitter: 0.01,
            held_out_views: 5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.misdetection_fraction) {
            return fail(format!("misdetection_fraction must lie in [0, 1), got {}", self.misdetection_fraction));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return fail(format!("background_fraction must lie in [0, 1], got {}", self.background_fraction));
        }
        for (name, v) in [
            ("object_splats", self.object_splats),
            ("views", self.views),
            ("width", self.width),
            ("height", self.height),
            ("points", self.points),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.clutter_objects > 0 && self.clutter_splats < self.clutter_objects {
            return fail("clutter_splats must be at least clutter_objects".into());
        }
        if self.held_out_views >= self.views {
            return fail(format!("held_out_views ({}) must be below views ({})", self.held_out_views, self.views));
        }
        if self.clutter_radius_min < 2.0 || self.clutter_radius_max < self.clutter_radius_min {
            return fail("clutter radius range must satisfy 2 <= min <= max".into());
        }
        for (name, v) in [
            ("object_radius", self.object_radius),
            ("focal", self.focal),
            ("orbit_radius", self.orbit_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive"));
            }
        }
        let (lo, hi) = (self.clutter_radius_min * self.object_radius, self.clutter_radius_max * self.object_radius);
        if self.clutter_objects > 0 && lo - CLUTTER_BLOB_RADIUS < self.orbit_radius + 0.5 && hi + CLUTTER_BLOB_RADIUS > self.orbit_radius - 0.5 {
            return fail("the clutter ring must keep 0.5 units away from the camera orbit".into());
        }
        if !(self.mask_blur_sigma >= 0.0 && self.point_jitter >= 0.0 && self.object_lumpiness >= 0.0) {
            return fail("mask_blur_sigma, point_jitter and object_lumpiness must be non-negative".into());
        }
        if !(self.elevation_min <= self.elevation_max && self.elevation_max.abs() < 1.5 && self.elevation_min.abs() < 1.5) {
            return fail("elevation range must be ordered and within (-1.5, 1.5) rad".into());
        }
        Ok(())
    }

    pub fn misdetection_count(&self) -> usize {
        (self.misdetection_fraction * self.views as f64).round() as usize
    }
}

/// Absolute radius of one clutter blob.
const CLUTTER_BLOB_RADIUS: f64 = 0.8;

/// Generated scene with per-splat labels.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleScene {
    pub splats: Vec<SplatPrimitive>,
    /// True for object splats.
    pub foreground: Vec<bool>,
    /// Clutter blob index of each background splat.
    pub clutter_id: Vec<Option<usize>>,
    pub cameras: Vec<Camera>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            Vector3::new(r * th.cos(), y, r * th.sin())
        })
        .collect()
}

/// Frame whose third axis is `normal`, spun by `spin` about it.
fn frame_for(normal: &Vector3<f64>, spin: f64) -> UnitQuaternion<f64> {
    let align = UnitQuaternion::rotation_between(&Vector3::z(), normal)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    align * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), spin)
}

struct Lumps {
    dirs: Vec<Vector3<f64>>,
    amps: Vec<f64>,
}

impl Lumps {
    fn radius(&self, d: &Vector3<f64>) -> f64 {
        1.0 + self
            .dirs
            .iter()
            .zip(&self.amps)
            .map(|(c, a)| a * (-(1.0 - d.dot(c)) / 0.18).exp())
            .sum::<f64>()
    }
}

/// Smooth color field: patches blended by angular distance plus a faint stripe texture.
struct Palette {
    centers: Vec<Vector3<f64>>,
    colors: Vec<Vector3<f64>>,
}

impl Palette {
    fn color(&self, d: &Vector3<f64>) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        let mut wsum = 0.0;
        for (c, col) in self.centers.iter().zip(&self.colors) {
            let w = (-(1.0 - d.dot(c)) / 0.25).exp();
            acc += col * w;
            wsum += w;
        }
        let stripe = 0.08 * (9.0 * d.y).sin();
        (acc / wsum).map(|v| (v + stripe).clamp(0.02, 0.98))
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let len = v.norm();
        if len > 1e-9 {
            return v / len;
        }
    }
}

/// Builds the labeled oracle splats and the orbit cameras.
pub fn generate_scene(spec: &SceneSpec) -> Result<OracleScene> {
    spec.validate()?;
    let r = spec.object_radius;
    let mut rng = stream(spec.seed, 1);
    let lumps = Lumps {
        dirs: (0..7).map(|_| unit_vector(&mut rng)).collect(),
        amps: (0..7).map(|i| spec.object_lumpiness * if i % 2 == 0 { 1.0 } else { -0.6 }).collect(),
    };
    let palette = Palette {
        centers: (0..5).map(|_| unit_vector(&mut rng)).collect(),
        colors: (0..5)
            .map(|_| Vector3::new(rng.random_range(0.1..0.95), rng.random_range(0.1..0.95), rng.random_range(0.1..0.95)))
            .collect(),
    };
    let spacing = (4.0 * std::f64::consts::PI / spec.object_splats as f64).sqrt() * r;
    let opacity = logit(0.97);

    let mut splats = Vec::new();
    let mut foreground = Vec::new();
    let mut clutter_id = Vec::new();
    for d in fibonacci_sphere(spec.object_splats) {
        let surface = |v: &Vector3<f64>| v.norm() - r * lumps.radius(&v.normalize());
        let p = d * (r * lumps.radius(&d));
        let h = 1e-5;
        let grad = Vector3::new(
            surface(&(p + Vector3::x() * h)) - surface(&(p - Vector3::x() * h)),
            surface(&(p + Vector3::y() * h)) - surface(&(p - Vector3::y() * h)),
            surface(&(p + Vector3::z() * h)) - surface(&(p - Vector3::z() * h)),
        );
        let normal = grad.try_normalize(1e-12).unwrap_or(d);
        let mut s = SplatPrimitive::new(p, spacing * 0.6, palette.color(&d));
        s.rotation = frame_for(&normal, rng.random_range(0.0..std::f64::consts::TAU));
        s.log_scales.x += rng.random_range(-0.1..0.1);
        s.log_scales.y += rng.random_range(-0.1..0.1);
        s.opacity_logit = opacity;
        splats.push(s);
        foreground.push(true);
        clutter_id.push(None);
    }

    for k in 0..spec.clutter_objects {
        let per = spec.clutter_splats / spec.clutter_objects + usize::from(k < spec.clutter_splats % spec.clutter_objects);
        let az = (k as f64 + rng.random_range(0.2..0.8)) / spec.clutter_objects as f64 * std::f64::consts::TAU;
        let rho = rng.random_range(spec.clutter_radius_min..=spec.clutter_radius_max) * r;
        let center = Vector3::new(rho * az.cos(), rng.random_range(1.4..1.8) * r, rho * az.sin());
        let color = Vector3::new(rng.random_range(0.2..0.9), rng.random_range(0.2..0.9), rng.random_range(0.2..0.9));
        let blob_spacing = (4.0 * std::f64::consts::PI / per as f64).sqrt() * CLUTTER_BLOB_RADIUS;
        for d in fibonacci_sphere(per) {
            let mut s = SplatPrimitive::new(center + d * CLUTTER_BLOB_RADIUS, blob_spacing * 0.6, color);
            s.rotation = frame_for(&d, rng.random_range(0.0..std::f64::consts::TAU));
            s.opacity_logit = opacity;
            splats.push(s);
            foreground.push(false);
            clutter_id.push(Some(k));
        }
    }
    for (s, &fg) in splats.iter_mut().zip(&foreground) {
        s.prob_logit = if fg { LOGIT_LIMIT } else { -LOGIT_LIMIT };
    }

    let mut crng = stream(spec.seed, 2);
    let cameras = (0..spec.views)
        .map(|i| {
            let az = (i as f64 + crng.random_range(-0.3..0.3)) / spec.views as f64 * std::f64::consts::TAU;
            let el = crng.random_range(spec.elevation_min..=spec.elevation_max);
            let eye = Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * spec.orbit_radius;
            Camera::look_at(eye, Vector3::zeros(), Vector3::y(), spec.focal, spec.width, spec.height)
        })
        .collect();
    Ok(OracleScene {
        splats,
        foreground,
        clutter_id,
        cameras,
    })
}

/// Splats with probability 1 where `select` holds and 0 elsewhere.
fn labeled(splats: &[SplatPrimitive], select: impl Fn(usize) -> bool) -> Vec<SplatPrimitive> {
    splats
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut s = s.clone();
            s.prob_logit = if select(i) { LOGIT_LIMIT } else { -LOGIT_LIMIT };
            s
        })
        .collect()
}

fn binarize(w: &ImageBuffer) -> ImageBuffer {
    w.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// Ground-truth RGB renders and exact binary object masks.
pub fn render_ground_truth(scene: &OracleScene) -> Vec<(ImageBuffer, ImageBuffer)> {
    let splats = labeled(&scene.splats, |i| scene.foreground[i]);
    let opts = RenderOptions { keep_hits: false, ..Default::default() };
    scene
        .cameras
        .par_iter()
        .map(|cam| {
            let r = render_view(&splats, cam, &opts);
            (r.rgb.map(|v| v.clamp(0.0, 1.0)), binarize(&r.prob))
        })
        .collect()
}

/// Separable Gaussian blur truncated at `ceil(2 sigma)` pixels, renormalized at borders.
pub fn blur_mask(mask: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return mask.clone();
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (w, h) = (mask.width as isize, mask.height as isize);
    let pass = |src: &ImageBuffer, horizontal: bool| {
        ImageBuffer::from_fn(mask.width, mask.height, 1, |x, y, _| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, d) in (-radius..=radius).enumerate() {
                let (sx, sy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                acc += kernel[k] * src.get(sx as usize, sy as usize, 0);
                norm += kernel[k];
            }
            acc / norm
        })
    };
    pass(&pass(mask, true), false)
}

/// What replaced a misdetected view's mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Misdetection {
    Clutter(usize),
    Ellipse,
}

/// Blurred training masks plus misdetection replacements on `candidates`.
pub fn corrupt_masks(
    scene: &OracleScene,
    gt_masks: &[ImageBuffer],
    candidates: &[usize],
    spec: &SceneSpec,
) -> (Vec<ImageBuffer>, Vec<(usize, Misdetection)>) {
    let mut masks: Vec<ImageBuffer> = gt_masks.par_iter().map(|m| blur_mask(m, spec.mask_blur_sigma)).collect();
    let mut rng = stream(spec.seed, 3);
    let mut pool = candidates.to_vec();
    pool.shuffle(&mut rng);
    pool.truncate(spec.misdetection_count().min(pool.len()));
    pool.sort_unstable();
    let opts = RenderOptions { keep_hits: false, ..Default::default() };
    let mut report = Vec::new();
    for &v in &pool {
        let cam = &scene.cameras[v];
        let npix = cam.pixel_count() as f64;
        // the most visible clutter blob, when one covers at least 2% of the frame
        let mut best: Option<(usize, ImageBuffer, f64)> = None;
        for k in 0..spec.clutter_objects {
            let splats = labeled(&scene.splats, |i| scene.clutter_id[i] == Some(k));
            let sil = binarize(&render_view(&splats, cam, &opts).prob);
            let area = sil.data.iter().sum::<f64>() / npix;
            if area >= 0.02 && best.as_ref().is_none_or(|b| area > b.2) {
                best = Some((k, sil, area));
            }
        }
        let use_clutter = best.is_some() && rng.random_bool(0.5);
        let (mask, kind) = match best {
            Some((k, sil, _)) if use_clutter => (sil, Misdetection::Clutter(k)),
            _ => (ellipse_away_from(&gt_masks[v], &mut rng), Misdetection::Ellipse),
        };
        masks[v] = blur_mask(&mask, spec.mask_blur_sigma);
        report.push((v, kind));
    }
    (masks, report)
}

/// Filled ellipse covering 5-20% of the frame, placed to overlap the object as little as possible.
fn ellipse_away_from(gt: &ImageBuffer, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let (w, h) = (gt.width as f64, gt.height as f64);
    let mut best: Option<(f64, ImageBuffer)> = None;
    for _ in 0..40 {
        let area = rng.random_range(0.05..0.20) * w * h;
        let aspect: f64 = rng.random_range(0.5..2.0);
        let a = (area / std::f64::consts::PI * aspect).sqrt();
        let b = area / (std::f64::consts::PI * a);
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let e = ImageBuffer::from_fn(gt.width, gt.height, 1, |x, y, _| {
            let dx = (x as f64 + 0.5 - cx) / a;
            let dy = (y as f64 + 0.5 - cy) / b;
            if dx * dx + dy * dy <= 1.0 {
                1.0
            } else {
                0.0
            }
        });
        let covered = e.data.iter().sum::<f64>() / (w * h);
        if !(0.05..=0.20).contains(&covered) {
            continue;
        }
        let overlap: f64 = e.data.iter().zip(&gt.data).map(|(a, b)| a * b).sum();
        if best.as_ref().is_none_or(|(o, _)| overlap < *o) {
            best = Some((overlap, e));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| ImageBuffer::new(gt.width, gt.height, 1))
}

/// Jittered object splat centers mixed with clutter and volume-noise points.
/// Returns the cloud and a per-point object label.
pub fn sample_point_cloud(scene: &OracleScene, spec: &SceneSpec) -> (PointCloud, Vec<bool>) {
    let mut rng = stream(spec.seed, 4);
    let n_bg = (spec.points as f64 * spec.background_fraction).round() as usize;
    let n_fg = spec.points - n_bg;
    let jitter = Normal::new(0.0, spec.point_jitter.max(f64::MIN_POSITIVE)).unwrap();
    let jit = |rng: &mut ChaCha8Rng| {
        if spec.point_jitter > 0.0 {
            Vector3::new(jitter.sample(rng), jitter.sample(rng), jitter.sample(rng))
        } else {
            Vector3::zeros()
        }
    };
    let fg_idx: Vec<usize> = (0..scene.splats.len()).filter(|&i| scene.foreground[i]).collect();
    let bg_idx: Vec<usize> = (0..scene.splats.len()).filter(|&i| !scene.foreground[i]).collect();
    let mut items: Vec<(Vector3<f64>, Vector3<f64>, bool)> = Vec::with_capacity(spec.points);
    for _ in 0..n_fg {
        let s = &scene.splats[fg_idx[rng.random_range(0..fg_idx.len())]];
        items.push((s.center + jit(&mut rng), s.color, true));
    }
    let n_clutter = if bg_idx.is_empty() { 0 } else { n_bg / 2 };
    for _ in 0..n_clutter {
        let s = &scene.splats[bg_idx[rng.random_range(0..bg_idx.len())]];
        items.push((s.center + jit(&mut rng), s.color, false));
    }
    let r = spec.object_radius;
    for _ in n_clutter..n_bg {
        let (lo, hi) = ((1.6 * r).powi(3), (2.6 * r).powi(3));
        let rad = rng.random_range(lo..hi).cbrt();
        let color = Vector3::new(rng.random(), rng.random(), rng.random());
        items.push((unit_vector(&mut rng) * rad, color, false));
    }
    items.shuffle(&mut rng);
    let cloud = PointCloud {
        points: items.iter().map(|t| t.0).collect(),
        colors: Some(items.iter().map(|t| t.1).collect()),
    };
    (cloud, items.iter().map(|t| t.2).collect())
}

/// Full in-memory dataset, quantized to on-disk precision.
pub fn build_dataset(spec: &SceneSpec) -> Result<Dataset> {
    let scene = generate_scene(spec)?;
    let gt = render_ground_truth(&scene);
    let mut order: Vec<usize> = (0..spec.views).collect();
    order.shuffle(&mut stream(spec.seed, 5));
    let mut held_out = order[..spec.held_out_views].to_vec();
    held_out.sort_unstable();
    let training: Vec<usize> = (0..spec.views).filter(|i| !held_out.contains(i)).collect();
    let gt_masks: Vec<ImageBuffer> = gt.iter().map(|g| g.1.clone()).collect();
    let (masks, corrupted) = corrupt_masks(&scene, &gt_masks, &training, spec);
    let (points, labels) = sample_point_cloud(&scene, spec);
    let views = gt
        .into_iter()
        .zip(masks)
        .zip(&scene.cameras)
        .map(|(((rgb, _), mask), cam)| View::new(rgb, mask, cam.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset {
        views,
        points,
        held_out,
        ground_truth: Some(GroundTruth {
            masks: gt_masks,
            point_labels: labels,
            corrupted_views: corrupted.iter().map(|c| c.0).collect(),
        }),
    };
    ds.quantize_for_disk();
    Ok(ds)
}

impl SceneSpec {
    /// `key = value` lines accepted by the run configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("object_splats", self.object_splats.to_string()),
            ("object_radius", self.object_radius.to_string()),
            ("object_lumpiness", self.object_lumpiness.to_string()),
            ("clutter_objects", self.clutter_objects.to_string()),
            ("clutter_splats", self.clutter_splats.to_string()),
            ("clutter_radius_min", self.clutter_radius_min.to_string()),
            ("clutter_radius_max", self.clutter_radius_max.to_string()),
            ("views", self.views.to_string()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("focal", self.focal.to_string()),
            ("orbit_radius", self.orbit_radius.to_string()),
            ("elevation_min", self.elevation_min.to_string()),
            ("elevation_max", self.elevation_max.to_string()),
            ("mask_blur_sigma", self.mask_blur_sigma.to_string()),
            ("misdetection_fraction", self.misdetection_fraction.to_string()),
            ("points", self.points.to_string()),
            ("background_fraction", self.background_fraction.to_string()),
            ("point_jitter", self.point_jitter.to_string()),
            ("held_out_views", self.held_out_views.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Writes the dataset and a `scene.txt` echo of the scene parameters into `dir`.
pub fn generate_dataset(spec: &SceneSpec, dir: &Path) -> Result<Dataset> {
    let ds = build_dataset(spec)?;
    ds.save(dir)?;
    write_atomic(&dir.join("scene.txt"), spec.to_text().as_bytes())?;
    Ok(ds)
}
