//! Views and on-disk datasets.
//!
//! Directory layout:
//!
//! ```text
//! cameras.txt          one line per view: fx fy cx cy w h r11..r33 t1 t2 t3
//! rgb/view_NNN.ppm     8-bit RGB
//! masks/view_NNN.pgm   16-bit training probability masks
//! gt_masks/view_NNN.pgm  8-bit binary ground-truth masks (optional)
//! points.ply           initial point cloud
//! split.txt            held_out = <view indices>
//! labels.txt           hidden generator labels (optional)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::camera::Camera;
use super::image::{read_image, write_image, BitDepth, ImageBuffer};
use super::ply::{read_point_cloud, write_point_cloud, PointCloud};
use crate::fsutil::{fmt_f64, read_to_string, write_atomic};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub rgb: ImageBuffer,
    pub prob_mask: ImageBuffer,
    pub camera: Camera,
    /// Cleared by view filtering.
    pub valid: bool,
}

impl View {
    pub fn new(rgb: ImageBuffer, prob_mask: ImageBuffer, camera: Camera) -> Result<Self> {
        let v = Self {
            rgb,
            prob_mask,
            camera,
            valid: true,
        };
        v.check()?;
        Ok(v)
    }

    pub fn check(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        if self.rgb.channels != 3 || self.rgb.width != w || self.rgb.height != h {
            return Err(Error::DimensionMismatch(format!(
                "rgb is {}x{}x{}, camera is {w}x{h}",
                self.rgb.width, self.rgb.height, self.rgb.channels
            )));
        }
        if self.prob_mask.channels != 1 || self.prob_mask.width != w || self.prob_mask.height != h {
            return Err(Error::DimensionMismatch(format!(
                "probability mask is {}x{}x{}, camera is {w}x{h}",
                self.prob_mask.width, self.prob_mask.height, self.prob_mask.channels
            )));
        }
        Ok(())
    }
}

/// Generator-side labels that a real capture would not have.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    /// Binary object masks, one per view.
    pub masks: Vec<ImageBuffer>,
    /// True for points sampled from the object.
    pub point_labels: Vec<bool>,
    /// Views whose training mask was replaced by a misdetection.
    pub corrupted_views: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub points: PointCloud,
    /// Views excluded from training and used for evaluation.
    pub held_out: Vec<usize>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn training_indices(&self) -> Vec<usize> {
        (0..self.views.len()).filter(|i| !self.held_out.contains(i)).collect()
    }

    /// Quantizes every buffer to its on-disk precision so that a
    /// write-then-load round trip is exact.
    pub fn quantize_for_disk(&mut self) {
        for v in &mut self.views {
            v.rgb = v.rgb.quantized(BitDepth::Eight);
            v.prob_mask = v.prob_mask.quantized(BitDepth::Sixteen);
        }
        if let Some(gt) = &mut self.ground_truth {
            for m in &mut gt.masks {
                *m = m.quantized(BitDepth::Eight);
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let cams: Vec<Camera> = self.views.iter().map(|v| v.camera.clone()).collect();
        write_cameras(&cams, &dir.join("cameras.txt"))?;
        for (i, v) in self.views.iter().enumerate() {
            write_image(&v.rgb, &dir.join(format!("rgb/view_{i:03}.ppm")), BitDepth::Eight)?;
            write_image(&v.prob_mask, &dir.join(format!("masks/view_{i:03}.pgm")), BitDepth::Sixteen)?;
        }
        write_point_cloud(&self.points, &dir.join("points.ply"))?;
        write_atomic(&dir.join("split.txt"), format!("held_out = {}\n", join(&self.held_out)).as_bytes())?;
        if let Some(gt) = &self.ground_truth {
            for (i, m) in gt.masks.iter().enumerate() {
                write_image(m, &dir.join(format!("gt_masks/view_{i:03}.pgm")), BitDepth::Eight)?;
            }
            let labels: Vec<usize> = gt.point_labels.iter().map(|&b| b as usize).collect();
            let text = format!(
                "# 1 = object point, 0 = background point\npoint_labels = {}\ncorrupted_views = {}\n",
                join(&labels),
                join(&gt.corrupted_views)
            );
            write_atomic(&dir.join("labels.txt"), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let cams = read_cameras(&dir.join("cameras.txt"))?;
        let mut views = Vec::with_capacity(cams.len());
        for (i, camera) in cams.into_iter().enumerate() {
            let rgb = read_image(&dir.join(format!("rgb/view_{i:03}.ppm")))?;
            let mask = read_image(&dir.join(format!("masks/view_{i:03}.pgm")))?;
            views.push(View::new(rgb, mask, camera)?);
        }
        let points = read_point_cloud(&dir.join("points.ply"))?;
        let split_path = dir.join("split.txt");
        let held_out = if split_path.exists() {
            let kv = parse_kv(&read_to_string(&split_path)?, &split_path)?;
            parse_indices(kv_get(&kv, "held_out").unwrap_or(""), &split_path)?
        } else {
            Vec::new()
        };
        if let Some(&bad) = held_out.iter().find(|&&i| i >= views.len()) {
            return Err(Error::Data(format!("held-out view {bad} does not exist")));
        }
        let ground_truth = if dir.join("gt_masks").is_dir() {
            let masks = (0..views.len())
                .map(|i| read_image(&dir.join(format!("gt_masks/view_{i:03}.pgm"))))
                .collect::<Result<Vec<_>>>()?;
            let label_path = dir.join("labels.txt");
            let (point_labels, corrupted_views) = if label_path.exists() {
                let kv = parse_kv(&read_to_string(&label_path)?, &label_path)?;
                let labels = parse_indices(kv_get(&kv, "point_labels").unwrap_or(""), &label_path)?
                    .into_iter()
                    .map(|v| v != 0)
                    .collect();
                let corrupted = parse_indices(kv_get(&kv, "corrupted_views").unwrap_or(""), &label_path)?;
                (labels, corrupted)
            } else {
                (Vec::new(), Vec::new())
            };
            Some(GroundTruth {
                masks,
                point_labels,
                corrupted_views,
            })
        } else {
            None
        };
        Ok(Dataset {
            views,
            points,
            held_out,
            ground_truth,
        })
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_kv(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected key = value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn kv_get<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn parse_indices(s: &str, path: &Path) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::parse(path, 0, format!("invalid index {t:?}")))
        })
        .collect()
}

/// Writes the camera text format, one view per line.
pub fn write_cameras(cams: &[Camera], path: &Path) -> Result<()> {
    let mut s = String::new();
    for c in cams {
        let mut vals = vec![fmt_f64(c.fx), fmt_f64(c.fy), fmt_f64(c.cx), fmt_f64(c.cy)];
        vals.push(c.width.to_string());
        vals.push(c.height.to_string());
        for r in 0..3 {
            for k in 0..3 {
                vals.push(fmt_f64(c.rotation[(r, k)]));
            }
        }
        vals.extend(c.translation.iter().map(|&t| fmt_f64(t)));
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = read_to_string(path)?;
    let mut cams = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 18 {
            return Err(Error::parse(path, ln, format!("expected 18 fields, found {}", toks.len())));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = toks[k]
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("invalid number {:?}", toks[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(path, ln, "non-finite value"))
            }
        };
        let size = |k: usize| -> Result<usize> {
            toks[k]
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("invalid image size {:?}", toks[k])))
        };
        let rotation = Matrix3::new(
            num(6)?, num(7)?, num(8)?, num(9)?, num(10)?, num(11)?, num(12)?, num(13)?, num(14)?,
        );
        let cam = Camera {
            fx: num(0)?,
            fy: num(1)?,
            cx: num(2)?,
            cy: num(3)?,
            width: size(4)?,
            height: size(5)?,
            rotation,
            translation: Vector3::new(num(15)?, num(16)?, num(17)?),
        };
        cam.validate().map_err(|m| Error::parse(path, ln, m))?;
        cams.push(cam);
    }
    Ok(cams)
}
