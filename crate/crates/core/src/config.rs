//! Flat `key = value` run configuration.
//!
//! `#` starts a comment, blank lines are ignored, later assignments win and
//! unknown keys are rejected. One `seed` drives both scene generation and
//! training.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::fsutil::read_to_string;
use crate::refine::{DEFAULT_TAU_POINT, DEFAULT_TAU_VIEW};
use crate::synth::SceneSpec;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    /// Also holds the mask, replacement and pruning ablation switches.
    pub train: TrainConfig,
    pub tau_point: f64,
    pub tau_view: f64,
    pub enable_refinement: bool,
    pub eval_tau: f64,
    pub full_frame_metrics: bool,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            train: TrainConfig::default(),
            tau_point: DEFAULT_TAU_POINT,
            tau_view: DEFAULT_TAU_VIEW,
            enable_refinement: true,
            eval_tau: crate::eval::DEFAULT_TAU,
            full_frame_metrics: false,
            data_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
        }
    }
}

/// Every key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("data_dir", "dataset directory"),
    ("run_dir", "directory for refinement, training, render and eval outputs"),
    ("seed", "seed for scene generation and training"),
    ("object_splats", "splats in the synthetic object"),
    ("object_radius", "mean object radius"),
    ("object_lumpiness", "relative amplitude of radial bumps on the object"),
    ("clutter_objects", "background clutter blobs"),
    ("clutter_splats", "splats shared among clutter blobs"),
    ("clutter_radius_min", "nearest horizontal clutter distance, in object radii"),
    ("clutter_radius_max", "farthest horizontal clutter distance, in object radii"),
    ("views", "number of generated views"),
    ("width", "image width in pixels"),
    ("height", "image height in pixels"),
    ("focal", "focal length in pixels"),
    ("orbit_radius", "camera distance from the object center"),
    ("elevation_min", "lowest camera elevation, radians"),
    ("elevation_max", "highest camera elevation, radians"),
    ("mask_blur_sigma", "blur of generated probability masks, pixels"),
    ("misdetection_fraction", "fraction of training views whose mask is replaced by a wrong detection"),
    ("points", "points in the generated cloud"),
    ("background_fraction", "fraction of generated points off the object"),
    ("point_jitter", "positional noise of foreground points"),
    ("held_out_views", "views reserved for evaluation"),
    ("enable_refinement", "filter background points and misdetected views before training"),
    ("tau_point", "minimum point confidence to keep a point"),
    ("tau_view", "minimum view confidence to keep a view"),
    ("use_probability_masks", "supervise with soft masks; false thresholds them at 0.5"),
    ("enable_mask_replacement", "replace supervision masks by rendered masks at mask_replace_at"),
    ("enable_prob_pruning", "prune splats with low foreground probability"),
    ("reset_prob_on_densify", "newborn splats restart at probability 0.5 instead of inheriting"),
    ("mask_photometric", "weight the color loss by the supervision mask; false fits the whole frame"),
    ("iterations", "training iterations"),
    ("densify_from", "first iteration eligible for densification"),
    ("densify_until", "last iteration eligible for densification"),
    ("densify_interval", "iterations between densification passes"),
    ("prune_interval", "iterations between pruning passes"),
    ("mask_replace_at", "iteration at which supervision masks are replaced"),
    ("densify_grad_threshold", "mean screen-space position gradient that triggers densification"),
    ("split_scale_fraction", "split instead of clone above this fraction of the scene extent"),
    ("max_splats", "hard cap on the number of splats"),
    ("opacity_prune_threshold", "splats below this opacity are pruned"),
    ("prob_prune_threshold", "splats below this probability are pruned"),
    ("prob_prune_start", "first iteration of probability pruning"),
    ("lr_center", "initial center learning rate, in scene extents"),
    ("lr_center_final_ratio", "final over initial center learning rate"),
    ("lr_rotation", "rotation learning rate"),
    ("lr_scale", "log-scale learning rate"),
    ("lr_opacity", "opacity logit learning rate"),
    ("lr_color", "color learning rate"),
    ("lr_prob", "probability logit learning rate"),
    ("lambda1", "SSIM share of the photometric loss"),
    ("alpha", "depth distortion weight"),
    ("beta", "normal consistency weight"),
    ("gamma", "probability loss weight"),
    ("distortion_from", "first iteration with the depth distortion term"),
    ("normal_from", "first iteration with the normal consistency term"),
    ("eval_tau", "threshold that binarizes rendered masks for evaluation"),
    ("full_frame_metrics", "score PSNR and SSIM over the full frame instead of the object mask"),
];

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (s, t) = (&mut self.scene, &mut self.train);
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "run_dir" => self.run_dir = PathBuf::from(v),
            "seed" => {
                t.seed = parse_as(key, v)?;
                s.seed = t.seed;
            }
            "object_splats" => s.object_splats = parse_as(key, v)?,
            "object_radius" => s.object_radius = parse_as(key, v)?,
            "object_lumpiness" => s.object_lumpiness = parse_as(key, v)?,
            "clutter_objects" => s.clutter_objects = parse_as(key, v)?,
            "clutter_splats" => s.clutter_splats = parse_as(key, v)?,
            "clutter_radius_min" => s.clutter_radius_min = parse_as(key, v)?,
            "clutter_radius_max" => s.clutter_radius_max = parse_as(key, v)?,
            "views" => s.views = parse_as(key, v)?,
            "width" => s.width = parse_as(key, v)?,
            "height" => s.height = parse_as(key, v)?,
            "focal" => s.focal = parse_as(key, v)?,
            "orbit_radius" => s.orbit_radius = parse_as(key, v)?,
            "elevation_min" => s.elevation_min = parse_as(key, v)?,
            "elevation_max" => s.elevation_max = parse_as(key, v)?,
            "mask_blur_sigma" => s.mask_blur_sigma = parse_as(key, v)?,
            "misdetection_fraction" => s.misdetection_fraction = parse_as(key, v)?,
            "points" => s.points = parse_as(key, v)?,
            "background_fraction" => s.background_fraction = parse_as(key, v)?,
            "point_jitter" => s.point_jitter = parse_as(key, v)?,
            "held_out_views" => s.held_out_views = parse_as(key, v)?,
            "enable_refinement" => self.enable_refinement = parse_as(key, v)?,
            "tau_point" => self.tau_point = parse_as(key, v)?,
            "tau_view" => self.tau_view = parse_as(key, v)?,
            "use_probability_masks" => t.binary_masks = !parse_as::<bool>(key, v)?,
            "enable_mask_replacement" => t.mask_replacement = parse_as(key, v)?,
            "enable_prob_pruning" => t.prob_pruning = parse_as(key, v)?,
            "reset_prob_on_densify" => t.reset_prob_on_densify = parse_as(key, v)?,
            "mask_photometric" => t.weights.mask_photometric = parse_as(key, v)?,
            "iterations" => t.iterations = parse_as(key, v)?,
            "densify_from" => t.densify_from = parse_as(key, v)?,
            "densify_until" => t.densify_until = parse_as(key, v)?,
            "densify_interval" => t.densify_interval = parse_as(key, v)?,
            "prune_interval" => t.prune_interval = parse_as(key, v)?,
            "mask_replace_at" => t.mask_replace_at = parse_as(key, v)?,
            "densify_grad_threshold" => t.densify_grad_threshold = parse_as(key, v)?,
            "split_scale_fraction" => t.split_scale_fraction = parse_as(key, v)?,
            "max_splats" => t.max_splats = parse_as(key, v)?,
            "opacity_prune_threshold" => t.opacity_prune_threshold = parse_as(key, v)?,
            "prob_prune_threshold" => t.prob_prune_threshold = parse_as(key, v)?,
            "prob_prune_start" => t.prob_prune_start = parse_as(key, v)?,
            "lr_center" => t.lr_center = parse_as(key, v)?,
            "lr_center_final_ratio" => t.lr_center_final_ratio = parse_as(key, v)?,
            "lr_rotation" => t.lr_rotation = parse_as(key, v)?,
            "lr_scale" => t.lr_scale = parse_as(key, v)?,
            "lr_opacity" => t.lr_opacity = parse_as(key, v)?,
            "lr_color" => t.lr_color = parse_as(key, v)?,
            "lr_prob" => t.lr_prob = parse_as(key, v)?,
            "lambda1" => t.weights.lambda1 = parse_as(key, v)?,
            "alpha" => t.weights.alpha = parse_as(key, v)?,
            "beta" => t.weights.beta = parse_as(key, v)?,
            "gamma" => t.weights.gamma = parse_as(key, v)?,
            "distortion_from" => t.distortion_from = parse_as(key, v)?,
            "normal_from" => t.normal_from = parse_as(key, v)?,
            "eval_tau" => self.eval_tau = parse_as(key, v)?,
            "full_frame_metrics" => self.full_frame_metrics = parse_as(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of every key in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (t, w) = (&self.train, &self.train.weights);
        let mut e: Vec<(&'static str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("run_dir", self.run_dir.display().to_string()),
            ("seed", t.seed.to_string()),
        ];
        e.extend(self.scene.entries().into_iter().filter(|(k, _)| *k != "seed"));
        e.extend([
            ("enable_refinement", self.enable_refinement.to_string()),
            ("tau_point", self.tau_point.to_string()),
            ("tau_view", self.tau_view.to_string()),
            ("use_probability_masks", (!t.binary_masks).to_string()),
            ("enable_mask_replacement", t.mask_replacement.to_string()),
            ("enable_prob_pruning", t.prob_pruning.to_string()),
            ("reset_prob_on_densify", t.reset_prob_on_densify.to_string()),
            ("mask_photometric", t.weights.mask_photometric.to_string()),
            ("iterations", t.iterations.to_string()),
            ("densify_from", t.densify_from.to_string()),
            ("densify_until", t.densify_until.to_string()),
            ("densify_interval", t.densify_interval.to_string()),
            ("prune_interval", t.prune_interval.to_string()),
            ("mask_replace_at", t.mask_replace_at.to_string()),
            ("densify_grad_threshold", t.densify_grad_threshold.to_string()),
            ("split_scale_fraction", t.split_scale_fraction.to_string()),
            ("max_splats", t.max_splats.to_string()),
            ("opacity_prune_threshold", t.opacity_prune_threshold.to_string()),
            ("prob_prune_threshold", t.prob_prune_threshold.to_string()),
            ("prob_prune_start", t.prob_prune_start.to_string()),
            ("lr_center", t.lr_center.to_string()),
            ("lr_center_final_ratio", t.lr_center_final_ratio.to_string()),
            ("lr_rotation", t.lr_rotation.to_string()),
            ("lr_scale", t.lr_scale.to_string()),
            ("lr_opacity", t.lr_opacity.to_string()),
            ("lr_color", t.lr_color.to_string()),
            ("lr_prob", t.lr_prob.to_string()),
            ("lambda1", w.lambda1.to_string()),
            ("alpha", w.alpha.to_string()),
            ("beta", w.beta.to_string()),
            ("gamma", w.gamma.to_string()),
            ("distortion_from", t.distortion_from.to_string()),
            ("normal_from", t.normal_from.to_string()),
            ("eval_tau", self.eval_tau.to_string()),
            ("full_frame_metrics", self.full_frame_metrics.to_string()),
        ]);
        e
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines from `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, source: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{}:{}: expected key = value", source.display(), n + 1)));
            };
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {}", source.display(), n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(Error::Config(format!("override {assignment:?} is not key=value")));
        };
        self.set(k.trim(), v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = Self::default();
        c.apply_text(&text, path)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        for (name, v) in [("tau_point", self.tau_point), ("tau_view", self.tau_view), ("eval_tau", self.eval_tau)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Key reference for `--help`: name, default and description.
    pub fn help_text() -> String {
        let defaults = Self::default().entries();
        let w = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for ((k, d), (_, v)) in KEYS.iter().zip(&defaults) {
            let _ = writeln!(s, "  {k:<w$}  {d} (default {v})");
        }
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
