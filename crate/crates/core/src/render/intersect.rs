use nalgebra::Vector3;

use crate::scene::{SplatPrimitive, NEAR_PLANE};

/// Disks are truncated at this many standard deviations.
pub const CUTOFF_SIGMA: f64 = 3.0;
/// Maximum per-hit alpha.
pub const ALPHA_CAP: f64 = 0.9999;
/// Contributions below this alpha are culled.
pub const ALPHA_FLOOR: f64 = 1.0 / 255.0;

const PARALLEL_EPS: f64 = 1e-9;

/// Per-render geometry of one splat.
#[derive(Clone, Debug)]
pub struct SplatGeom {
    pub center: Vector3<f64>,
    pub t_u: Vector3<f64>,
    pub t_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub scale_u: f64,
    pub scale_v: f64,
    pub opacity: f64,
}

/// Ray/disk intersection in the disk's local coordinates (units of standard deviation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskHit {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl SplatGeom {
    pub fn from_splat(s: &SplatPrimitive) -> Self {
        let frame = s.frame();
        let scales = s.scales();
        Self {
            center: s.center,
            t_u: frame.column(0).into_owned(),
            t_v: frame.column(1).into_owned(),
            normal: frame.column(2).into_owned(),
            scale_u: scales.x,
            scale_v: scales.y,
            opacity: s.opacity(),
        }
    }

    #[inline]
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<DiskHit> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < PARALLEL_EPS {
            return None;
        }
        let t = (self.center - origin).dot(&self.normal) / denom;
        if t <= NEAR_PLANE {
            return None;
        }
        let rel = origin + dir * t - self.center;
        let u = rel.dot(&self.t_u) / self.scale_u;
        let v = rel.dot(&self.t_v) / self.scale_v;
        if u * u + v * v > CUTOFF_SIGMA * CUTOFF_SIGMA {
            return None;
        }
        Some(DiskHit { t, u, v })
    }
}

/// Intersects a ray with a splat's truncated disk.
pub fn intersect_ray_splat(
    splat: &SplatPrimitive,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> Option<DiskHit> {
    SplatGeom::from_splat(splat).intersect(origin, dir)
}

/// Alpha of one contribution, `None` when culled. The flag reports whether the cap was hit.
#[inline]
pub fn splat_alpha(gauss_value: f64, opacity: f64) -> Option<(f64, bool)> {
    let raw = opacity * gauss_value;
    if raw < ALPHA_FLOOR {
        return None;
    }
    if raw > ALPHA_CAP {
        Some((ALPHA_CAP, true))
    } else {
        Some((raw, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector2};

    fn disk() -> SplatPrimitive {
        SplatPrimitive::new(Vector3::zeros(), 1.0, Vector3::repeat(0.5))
    }

    #[test]
    fn axis_aligned_hit() {
        let h = intersect_ray_splat(&disk(), &Vector3::new(0.0, 0.0, 5.0), &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(h, DiskHit { t: 5.0, u: 0.0, v: 0.0 });
    }

    #[test]
    fn parallel_ray_misses() {
        assert!(intersect_ray_splat(&disk(), &Vector3::new(0.0, 0.0, 5.0), &Vector3::x()).is_none());
    }

    #[test]
    fn behind_origin_and_outside_cutoff_miss() {
        assert!(intersect_ray_splat(&disk(), &Vector3::new(0.0, 0.0, 5.0), &Vector3::z()).is_none());
        assert!(intersect_ray_splat(&disk(), &Vector3::new(3.1, 0.0, 5.0), &-Vector3::z()).is_none());
        assert!(intersect_ray_splat(&disk(), &Vector3::new(2.9, 0.0, 5.0), &-Vector3::z()).is_some());
    }

    /// March the ray in fine steps, bracket the sign change of the signed
    /// plane distance and bisect it; the local coordinates follow from the
    /// world-space hit point projected on the tangent axes.
    fn ray_march(s: &SplatPrimitive, o: &Vector3<f64>, d: &Vector3<f64>) -> (f64, f64, f64) {
        let n = s.normal();
        let f = |t: f64| (o + d * t - s.center).dot(&n);
        let step = 1e-3;
        let mut t0 = 0.0;
        while f(t0).signum() == f(t0 + step).signum() {
            t0 += step;
            assert!(t0 < 100.0, "no crossing");
        }
        let (mut lo, mut hi) = (t0, t0 + step);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo).signum() == f(mid).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        let rel = o + d * t - s.center;
        let frame = s.frame();
        let sc = s.scales();
        (t, rel.dot(&frame.column(0)) / sc.x, rel.dot(&frame.column(1)) / sc.y)
    }

    #[test]
    fn tilted_disk_matches_ray_march() {
        let mut s = disk();
        s.rotation = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_4);
        s.log_scales = Vector2::new(0.3f64.ln(), 0.8f64.ln());
        let o = Vector3::new(0.0, 0.5, 5.0);
        let d = Vector3::new(0.0, 0.0, -1.0);
        let h = intersect_ray_splat(&s, &o, &d).unwrap();
        let (t, u, v) = ray_march(&s, &o, &d);
        assert!((h.t - t).abs() < 1e-6, "{} vs {t}", h.t);
        assert!((h.u - u).abs() < 1e-6);
        assert!((h.v - v).abs() < 1e-6);
        // plane z = y through the origin, so the hit is (0, .5, .5)
        assert!((h.t - 4.5).abs() < 1e-12);
        assert!((h.v - 0.5 * 2f64.sqrt() / 0.8).abs() < 1e-12);
    }

    #[test]
    fn alpha_rules() {
        assert_eq!(splat_alpha(1.0, 0.7), Some((0.7, false)));
        assert_eq!(splat_alpha(1.0 / 300.0, 1.0 - 1e-9), None);
        assert_eq!(splat_alpha(1.0, 0.99999), Some((ALPHA_CAP, true)));
    }
}
