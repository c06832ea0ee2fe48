use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};

/// Smallest admissible splat scale, stored as a log-scale floor.
pub const MIN_LOG_SCALE: f64 = -9.210_340_371_976_182; // ln(1e-4)

/// Logits are kept inside this range so the logistic stays strictly inside (0, 1) in f64.
pub const LOGIT_LIMIT: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One planar Gaussian disk.
///
/// The rotation maps the local frame onto the world: its first two columns are
/// the tangent axes `t_u`, `t_v` and the third is the disk normal.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatPrimitive {
    pub center: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub log_scales: Vector2<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub prob_logit: f64,
}

impl SplatPrimitive {
    /// Isotropic disk facing +z with opacity and probability 0.5.
    pub fn new(center: Vector3<f64>, scale: f64, color: Vector3<f64>) -> Self {
        Self {
            center,
            rotation: UnitQuaternion::identity(),
            log_scales: Vector2::repeat(scale.max(1e-4).ln()),
            opacity_logit: 0.0,
            color,
            prob_logit: 0.0,
        }
    }

    pub fn scales(&self) -> Vector2<f64> {
        self.log_scales.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn probability(&self) -> f64 {
        sigmoid(self.prob_logit)
    }

    /// Columns `t_u`, `t_v`, `n`.
    pub fn frame(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Checks the representation invariants, returning a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let qn = self.rotation.quaternion().norm();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(format!("quaternion norm {qn}"));
        }
        let s = self.scales();
        if !(s.x > 0.0 && s.y > 0.0) {
            return Err(format!("non-positive scale {s:?}"));
        }
        let o = self.opacity();
        let p = self.probability();
        if !(o > 0.0 && o < 1.0) {
            return Err(format!("opacity {o} outside (0,1)"));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(format!("probability {p} outside (0,1)"));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err("non-finite center".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_bounds_hold_at_logit_limit() {
        let hi = sigmoid(LOGIT_LIMIT);
        let lo = sigmoid(-LOGIT_LIMIT);
        assert!(hi < 1.0 && lo > 0.0);
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn identity_frame_is_axis_aligned() {
        let s = SplatPrimitive::new(Vector3::zeros(), 0.5, Vector3::repeat(0.5));
        assert_eq!(s.frame(), Matrix3::identity());
        assert_eq!(s.normal(), Vector3::z());
        assert!((s.scales().x - 0.5).abs() < 1e-15);
        assert_eq!(s.opacity(), 0.5);
        assert_eq!(s.probability(), 0.5);
        s.check_invariants().unwrap();
    }
}
