//! Optimization of a splat model against the training views.
//!
//! Each iteration renders one uniformly drawn valid view, back-propagates
//! the full loss and takes an Adam step. Density control runs on fixed
//! intervals; supervision masks are replaced once by the model's rendered
//! masks at `mask_replace_at`. The random stream of every iteration depends
//! only on `(seed, iteration)`, so a resumed run is bit-identical to an
//! uninterrupted one.

mod adam;
mod checkpoint;
mod density;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{apply_delta, Adam, LearningRates, BETA1, BETA2, EPSILON, PARAM_NAMES};
pub use checkpoint::{checkpoint_dir, events_text, history_csv, read_checkpoint, write_checkpoint, HISTORY_HEADER};
pub use density::{
    densify, init_from_points, prune, DensifyOutcome, DensifyParams, GradStats, PruneOutcome, PruneParams,
    INIT_NEIGHBOURS, INIT_OPACITY, INIT_PROBABILITY, ISOLATED_SCALE, SPLIT_CHILDREN, SPLIT_SCALE_DIVISOR,
};

use crate::loss::{backward, LossWeights};
use crate::render::{depth_to_normal, render_view, RenderOptions};
use crate::scene::{BitDepth, ImageBuffer, SplatPrimitive, View};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_interval: usize,
    pub prune_interval: usize,
    pub mask_replace_at: usize,
    /// Mean NDC-space center gradient norm that triggers densification.
    pub densify_grad_threshold: f64,
    /// Split instead of clone above this fraction of the scene extent.
    pub split_scale_fraction: f64,
    pub max_splats: usize,
    pub opacity_prune_threshold: f64,
    pub prob_prune_threshold: f64,
    pub prob_prune_start: usize,
    /// Initial center rate in units of the scene extent.
    pub lr_center: f64,
    /// Ratio of the final to the initial center rate, reached log-linearly.
    pub lr_center_final_ratio: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_prob: f64,
    pub weights: LossWeights,
    /// Depth distortion is off before this iteration.
    pub distortion_from: usize,
    /// Normal consistency is off before this iteration.
    pub normal_from: usize,
    /// Threshold supervision masks at 0.5 before training.
    pub binary_masks: bool,
    pub mask_replacement: bool,
    pub prob_pruning: bool,
    /// Newborn splats restart at probability 0.5 instead of inheriting.
    pub reset_prob_on_densify: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            densify_from: 500,
            densify_until: 15_000,
            densify_interval: 100,
            prune_interval: 100,
            mask_replace_at: 7_000,
            densify_grad_threshold: 2e-4,
            split_scale_fraction: 0.01,
            max_splats: 1_000_000,
            opacity_prune_threshold: 0.05,
            prob_prune_threshold: 0.2,
            prob_prune_start: 1_000,
            lr_center: 1.6e-4,
            lr_center_final_ratio: 0.01,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_prob: 5e-2,
            weights: LossWeights::default(),
            distortion_from: 3_000,
            normal_from: 7_000,
            binary_masks: false,
            mask_replacement: true,
            prob_pruning: true,
            reset_prob_on_densify: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations > 0 && !(self.mask_replace_at < self.densify_until && self.densify_until < self.iterations) {
            return bad(format!(
                "need mask_replace_at < densify_until < iterations, got {} / {} / {}",
                self.mask_replace_at, self.densify_until, self.iterations
            ));
        }
        if self.densify_interval == 0 || self.prune_interval == 0 {
            return bad("densify_interval and prune_interval must be positive".into());
        }
        if self.max_splats == 0 {
            return bad("max_splats must be positive".into());
        }
        for (name, t) in [("opacity_prune_threshold", self.opacity_prune_threshold), ("prob_prune_threshold", self.prob_prune_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {t}"));
            }
        }
        if !(self.split_scale_fraction > 0.0) {
            return bad(format!("split_scale_fraction must be positive, got {}", self.split_scale_fraction));
        }
        if !(self.densify_grad_threshold >= 0.0) {
            return bad(format!("densify_grad_threshold must be non-negative, got {}", self.densify_grad_threshold));
        }
        if !(self.lr_center_final_ratio > 0.0) {
            return bad(format!("lr_center_final_ratio must be positive, got {}", self.lr_center_final_ratio));
        }
        for (name, v) in [
            ("lr_center", self.lr_center),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
            ("lr_prob", self.lr_prob),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        let w = &self.weights;
        for (name, v) in [("lambda1", w.lambda1), ("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if w.lambda1 > 1.0 {
            return bad(format!("lambda1 must not exceed 1, got {}", w.lambda1));
        }
        Ok(())
    }

    pub fn learning_rates(&self, iteration: usize, extent: f64) -> LearningRates {
        let frac = if self.iterations == 0 { 0.0 } else { (iteration as f64 / self.iterations as f64).min(1.0) };
        LearningRates {
            center: self.lr_center * extent * self.lr_center_final_ratio.powf(frac),
            rotation: self.lr_rotation,
            scale: self.lr_scale,
            opacity: self.lr_opacity,
            color: self.lr_color,
            prob: self.lr_prob,
        }
    }

    /// Loss weights in effect at `iteration`.
    pub fn weights_at(&self, iteration: usize) -> LossWeights {
        LossWeights {
            alpha: if iteration < self.distortion_from { 0.0 } else { self.weights.alpha },
            beta: if iteration < self.normal_from { 0.0 } else { self.weights.beta },
            ..self.weights
        }
    }

    fn is_checkpoint(&self, completed: usize) -> bool {
        completed == self.iterations || completed == self.mask_replace_at || completed == self.densify_until
    }
}

/// Loss terms of one iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub view: usize,
    /// Model size after the iteration's density control.
    pub splats: usize,
    pub l1: f64,
    pub ssim: f64,
    pub photometric: f64,
    pub prob_loss: f64,
    pub depth_distortion: f64,
    pub normal_consistency: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Densify { iteration: usize, cloned: usize, split: usize, splats: usize },
    Prune { iteration: usize, by_opacity: usize, by_probability: usize, splats: usize },
    MaskReplacement { iteration: usize, views: usize, band_pixels: usize, entropy_before: f64, entropy_after: f64 },
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub splats: Vec<SplatPrimitive>,
    pub adam: Adam,
    pub stats: GradStats,
    /// Completed iterations.
    pub iteration: usize,
    pub masks_replaced: bool,
    /// Replaced supervision masks by position in the training view list.
    pub replaced_masks: Vec<(usize, ImageBuffer)>,
    pub history: Vec<IterRecord>,
    pub events: Vec<TrainEvent>,
}

impl TrainState {
    pub fn new(splats: Vec<SplatPrimitive>) -> Self {
        let n = splats.len();
        Self {
            splats,
            adam: Adam::new(n),
            stats: GradStats::new(n),
            iteration: 0,
            masks_replaced: false,
            replaced_masks: Vec::new(),
            history: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn peak_splats(&self) -> usize {
        self.history.iter().map(|r| r.splats).max().unwrap_or(0).max(self.splats.len())
    }

    pub fn replacement(&self) -> Option<&TrainEvent> {
        self.events.iter().find(|e| matches!(e, TrainEvent::MaskReplacement { .. }))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints are written below this directory when set.
    pub checkpoint_root: Option<PathBuf>,
    /// Progress line on stderr every this many iterations; 0 is silent.
    pub log_every: usize,
}

/// 1.1 times the largest camera distance from the camera centroid.
pub fn scene_extent(views: &[View]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = views.iter().map(|v| v.camera.center()).collect();
    let mean = centers.iter().sum::<nalgebra::Vector3<f64>>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// The masks the loss sees: thresholded in the binary ablation, then
/// overridden by any replaced masks.
pub fn supervision_views(views: &[View], state: &TrainState, cfg: &TrainConfig) -> Vec<View> {
    let mut out = views.to_vec();
    if cfg.binary_masks {
        for v in &mut out {
            v.prob_mask = v.prob_mask.map(|m| if m >= 0.5 { 1.0 } else { 0.0 });
        }
    }
    for (i, m) in &state.replaced_masks {
        out[*i].prob_mask = m.clone();
    }
    out
}

fn binary_entropy(m: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(m) + term(1.0 - m)
}

/// Replaces the masks of valid views by the clamped rendered foreground
/// probability, quantized to 16 bits. Entropies are averaged over the pixels
/// whose previous mask was strictly between 0 and 1.
pub fn replace_masks(splats: &[SplatPrimitive], views: &mut [View], iteration: usize) -> (Vec<(usize, ImageBuffer)>, TrainEvent) {
    let opts = RenderOptions { keep_hits: false, ..RenderOptions::default() };
    let (mut before, mut after, mut band, mut replaced) = (0.0, 0.0, 0usize, Vec::new());
    for (i, v) in views.iter_mut().enumerate() {
        if !v.valid {
            continue;
        }
        let r = render_view(splats, &v.camera, &opts);
        let new = r.prob.map(|p| p.clamp(0.0, 1.0)).quantized(BitDepth::Sixteen);
        for (&old, &m) in v.prob_mask.data.iter().zip(&new.data) {
            if old > 0.0 && old < 1.0 {
                band += 1;
                before += binary_entropy(old);
                after += binary_entropy(m);
            }
        }
        v.prob_mask = new.clone();
        replaced.push((i, new));
    }
    let norm = if band > 0 { band as f64 } else { 1.0 };
    let event = TrainEvent::MaskReplacement {
        iteration,
        views: replaced.len(),
        band_pixels: band,
        entropy_before: before / norm,
        entropy_after: after / norm,
    };
    (replaced, event)
}

/// View drawn at `iteration`.
pub fn sample_view(seed: u64, iteration: usize, valid: &[usize]) -> usize {
    let mut rng = iteration_rng(seed, iteration);
    valid[rng.random_range(0..valid.len())]
}

// high bit separates split sampling from view sampling
const DENSIFY_STREAM: u64 = 1 << 63;

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Trains from scratch.
pub fn train(views: &[View], init: Vec<SplatPrimitive>, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainState> {
    if init.is_empty() {
        return Err(Error::Data("no initial splats".into()));
    }
    resume(views, TrainState::new(init), cfg, opts)
}

/// Continues `state` up to `cfg.iterations`.
pub fn resume(views: &[View], mut state: TrainState, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainState> {
    cfg.validate()?;
    if state.iteration > cfg.iterations {
        return Err(Error::Config(format!(
            "checkpoint is at iteration {} but iterations = {}",
            state.iteration, cfg.iterations
        )));
    }
    for v in views {
        v.check()?;
    }
    let valid: Vec<usize> = (0..views.len()).filter(|&i| views[i].valid).collect();
    if valid.is_empty() {
        return Err(Error::Data("no valid training views".into()));
    }
    let extent = scene_extent(views);
    let mut sup = supervision_views(views, &state, cfg);
    let render_opts = RenderOptions::default();

    if cfg.iterations == 0 {
        if let Some(root) = &opts.checkpoint_root {
            write_checkpoint(&checkpoint_dir(root, 0), &state)?;
        }
        return Ok(state);
    }

    for it in state.iteration..cfg.iterations {
        if cfg.mask_replacement && it == cfg.mask_replace_at && !state.masks_replaced {
            let (masks, event) = replace_masks(&state.splats, &mut sup, it);
            state.replaced_masks = masks;
            state.masks_replaced = true;
            state.events.push(event);
        }
        let vi = sample_view(cfg.seed, it, &valid);
        let view = &sup[vi];
        let render = render_view(&state.splats, &view.camera, &render_opts);
        let nprime = depth_to_normal(&render.depth, &view.camera);
        let (loss, grads) = backward(&render, view, &state.splats, &nprime, cfg.weights_at(it))?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at iteration {it}")));
        }
        if it < cfg.densify_until {
            state.stats.accumulate(&state.splats, &grads, &view.camera);
        }
        state.adam.step(&mut state.splats, &grads, &cfg.learning_rates(it, extent), it as u64 + 1)?;

        let done = it + 1;
        if done > cfg.densify_from && done <= cfg.densify_until && done % cfg.densify_interval == 0 {
            let p = DensifyParams {
                grad_threshold: cfg.densify_grad_threshold,
                split_scale: cfg.split_scale_fraction * extent,
                max_splats: cfg.max_splats,
                reset_probability: cfg.reset_prob_on_densify,
            };
            let mut rng = iteration_rng(cfg.seed, it);
            rng.set_stream(DENSIFY_STREAM | it as u64);
            let out = densify(&mut state.splats, &mut state.adam, &mut state.stats, &p, &mut rng);
            state.events.push(TrainEvent::Densify { iteration: done, cloned: out.cloned, split: out.split, splats: state.splats.len() });
        }
        if done % cfg.prune_interval == 0 {
            let p = PruneParams {
                opacity_threshold: cfg.opacity_prune_threshold,
                prob_threshold: (cfg.prob_pruning && done >= cfg.prob_prune_start).then_some(cfg.prob_prune_threshold),
            };
            let out = prune(&mut state.splats, &mut state.adam, &mut state.stats, &p, done)?;
            if out != PruneOutcome::default() {
                state.events.push(TrainEvent::Prune {
                    iteration: done,
                    by_opacity: out.by_opacity,
                    by_probability: out.by_probability,
                    splats: state.splats.len(),
                });
            }
        }
        state.history.push(IterRecord {
            iteration: it,
            view: vi,
            splats: state.splats.len(),
            l1: loss.l1,
            ssim: loss.ssim_term,
            photometric: loss.photometric,
            prob_loss: loss.prob_loss,
            depth_distortion: loss.depth_distortion,
            normal_consistency: loss.normal_consistency,
            total: loss.total,
        });
        state.iteration = done;
        if opts.log_every > 0 && (done % opts.log_every == 0 || done == cfg.iterations) {
            eprintln!(
                "iter {done}/{} loss {:.5} (photo {:.5} prob {:.5} dist {:.3e} normal {:.4}) splats {}",
                cfg.iterations,
                loss.total,
                loss.photometric,
                loss.prob_loss,
                loss.depth_distortion,
                loss.normal_consistency,
                state.splats.len()
            );
        }
        if let Some(root) = &opts.checkpoint_root {
            if cfg.is_checkpoint(done) {
                write_checkpoint(&checkpoint_dir(root, done), &state)?;
            }
        }
    }
    Ok(state)
}
