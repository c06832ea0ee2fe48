use nalgebra::{UnitQuaternion, Vector3};

use crate::loss::{GradientSet, SplatGrad};
use crate::scene::{SplatPrimitive, LOGIT_LIMIT, MIN_LOG_SCALE};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

const N: usize = SplatGrad::LEN;

/// Names of the gradient slots, in `SplatGrad::to_array` order.
pub const PARAM_NAMES: [&str; N] = [
    "center.x",
    "center.y",
    "center.z",
    "rotation.x",
    "rotation.y",
    "rotation.z",
    "log_scale.u",
    "log_scale.v",
    "opacity_logit",
    "color.r",
    "color.g",
    "color.b",
    "prob_logit",
];

/// Per-splat first and second moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub m: Vec<[f64; N]>,
    pub v: Vec<[f64; N]>,
}

/// Learning rate of every gradient slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub center: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub prob: f64,
}

impl LearningRates {
    fn per_slot(&self) -> [f64; N] {
        let (c, r, s, o, k, p) = (self.center, self.rotation, self.scale, self.opacity, self.color, self.prob);
        [c, c, c, r, r, r, s, s, o, k, k, k, p]
    }
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![[0.0; N]; n], v: vec![[0.0; N]; n] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Keeps the moments of splats with `keep[i]`.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut i = 0;
        self.m.retain(|_| (keep[i], i += 1).0);
        let mut i = 0;
        self.v.retain(|_| (keep[i], i += 1).0);
    }

    /// Appends zeroed moments for `n` newborn splats.
    pub fn extend_zeroed(&mut self, n: usize) {
        self.m.extend(std::iter::repeat_n([0.0; N], n));
        self.v.extend(std::iter::repeat_n([0.0; N], n));
    }

    /// One bias-corrected update; `step` counts from 1.
    pub fn step(&mut self, splats: &mut [SplatPrimitive], grads: &GradientSet, lr: &LearningRates, step: u64) -> Result<()> {
        if grads.grads.len() != splats.len() || self.len() != splats.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} splats, {} gradients, {} optimizer slots",
                splats.len(),
                grads.grads.len(),
                self.len()
            )));
        }
        for (i, g) in grads.grads.iter().enumerate() {
            if let Some(k) = g.to_array().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for splat {i} attribute {} at step {step}",
                    PARAM_NAMES[k]
                )));
            }
        }
        let rates = lr.per_slot();
        let bc1 = 1.0 - BETA1.powf(step as f64);
        let bc2 = 1.0 - BETA2.powf(step as f64);
        for (i, s) in splats.iter_mut().enumerate() {
            let g = grads.grads[i].to_array();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let mut d = [0.0; N];
            for k in 0..N {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                d[k] = -rates[k] * (m[k] / bc1) / ((v[k] / bc2).sqrt() + EPSILON);
            }
            apply_delta(s, &d);
        }
        Ok(())
    }
}

/// Applies a parameter-space step and restores the representation invariants.
pub fn apply_delta(s: &mut SplatPrimitive, d: &[f64; N]) {
    s.center += Vector3::new(d[0], d[1], d[2]);
    let w = Vector3::new(d[3], d[4], d[5]);
    if w != Vector3::zeros() {
        let q = s.rotation * UnitQuaternion::from_scaled_axis(w);
        s.rotation = UnitQuaternion::new_normalize(q.into_inner());
    }
    s.log_scales.x = (s.log_scales.x + d[6]).max(MIN_LOG_SCALE);
    s.log_scales.y = (s.log_scales.y + d[7]).max(MIN_LOG_SCALE);
    s.opacity_logit = (s.opacity_logit + d[8]).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
    for c in 0..3 {
        s.color[c] = (s.color[c] + d[9 + c]).clamp(0.0, 1.0);
    }
    s.prob_logit = (s.prob_logit + d[12]).clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
}
