use nalgebra::Vector3;

use super::raster::EARLY_EXIT_T;
use crate::scene::SplatPrimitive;

/// One retained ray/splat intersection of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatHit {
    pub splat_index: u32,
    /// Distance along the unit ray.
    pub t: f64,
    /// Camera-space z of the intersection.
    pub depth: f64,
    pub u: f64,
    pub v: f64,
    pub gauss_value: f64,
    pub alpha: f64,
    /// Alpha was clamped to the cap, so it no longer depends on opacity or shape.
    pub capped: bool,
    /// +1 or -1; multiplies the disk normal so that it faces the camera.
    pub facing: f64,
}

/// Per-splat shading attributes used during compositing.
#[derive(Clone, Debug, PartialEq)]
pub struct Shade {
    pub color: Vector3<f64>,
    pub prob: f64,
    pub normal: Vector3<f64>,
}

impl Shade {
    pub fn from_splat(s: &SplatPrimitive) -> Self {
        Self {
            color: s.color,
            prob: s.probability(),
            normal: s.normal(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PixelComposite {
    pub rgb: Vector3<f64>,
    /// Composited foreground probability.
    pub prob: f64,
    /// Weight-normalized mean camera depth.
    pub depth: f64,
    /// Normalized composited world-space normal, zero when nothing was hit.
    pub normal: Vector3<f64>,
    pub final_t: f64,
    /// Sum of blending weights.
    pub weight: f64,
    /// Number of leading hits consumed before the early exit.
    pub used: usize,
}

impl PixelComposite {
    pub fn empty() -> Self {
        Self {
            rgb: Vector3::zeros(),
            prob: 0.0,
            depth: 0.0,
            normal: Vector3::zeros(),
            final_t: 1.0,
            weight: 0.0,
            used: 0,
        }
    }
}

/// Front-to-back compositing of hits sorted by increasing `t`.
///
/// Accumulation stops after the hit that drives transmittance below `early_exit`.
pub fn composite_hits<'a>(
    hits: &[SplatHit],
    early_exit: f64,
    shade: impl Fn(u32) -> &'a Shade,
) -> PixelComposite {
    let mut out = PixelComposite::empty();
    let mut trans = 1.0;
    let mut depth_acc = 0.0;
    let mut normal_acc = Vector3::zeros();
    for h in hits {
        let s = shade(h.splat_index);
        let w = h.alpha * trans;
        out.rgb += s.color * w;
        out.prob += s.prob * w;
        depth_acc += h.depth * w;
        normal_acc += s.normal * (h.facing * w);
        out.weight += w;
        trans *= 1.0 - h.alpha;
        out.used += 1;
        if trans < early_exit {
            break;
        }
    }
    out.final_t = trans;
    if out.used > 0 {
        out.depth = depth_acc / out.weight.max(1e-8);
        let n = normal_acc.norm();
        if n > 0.0 {
            out.normal = normal_acc / n;
        }
    }
    out
}

/// Composites one pixel's sorted hits against the splat list.
pub fn composite_pixel(hits: &[SplatHit], splats: &[SplatPrimitive]) -> PixelComposite {
    let shades: Vec<Shade> = splats.iter().map(Shade::from_splat).collect();
    composite_hits(hits, EARLY_EXIT_T, |i| &shades[i as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::logit;

    fn hit(i: u32, t: f64, alpha: f64) -> SplatHit {
        SplatHit {
            splat_index: i,
            t,
            depth: t,
            u: 0.0,
            v: 0.0,
            gauss_value: 1.0,
            alpha,
            capped: false,
            facing: 1.0,
        }
    }

    fn splat(p: f64, c: [f64; 3]) -> SplatPrimitive {
        let mut s = SplatPrimitive::new(Vector3::zeros(), 1.0, Vector3::from(c));
        s.prob_logit = logit(p.clamp(1e-12, 1.0 - 1e-12));
        s
    }

    #[test]
    fn empty_list() {
        let c = composite_pixel(&[], &[]);
        assert_eq!(c.rgb, Vector3::zeros());
        assert_eq!((c.prob, c.depth, c.final_t), (0.0, 0.0, 1.0));
        assert_eq!(c.normal, Vector3::zeros());
    }

    #[test]
    fn single_hit() {
        let splats = [splat(1.0, [1.0, 0.0, 0.0])];
        let c = composite_pixel(&[hit(0, 2.0, 0.6)], &splats);
        assert!((c.prob - 0.6).abs() < 1e-11);
        assert!((c.rgb - Vector3::new(0.6, 0.0, 0.0)).norm() < 1e-15);
        assert!((c.final_t - 0.4).abs() < 1e-15);
        assert_eq!(c.depth, 2.0);
        assert_eq!(c.normal, Vector3::z());
    }

    #[test]
    fn two_term_closed_form() {
        let splats = [splat(1.0, [0.0; 3]), splat(0.0, [0.0; 3])];
        let c = composite_pixel(&[hit(0, 1.0, 0.5), hit(1, 2.0, 0.5)], &splats);
        assert!((c.prob - 0.5).abs() < 1e-11);
        assert_eq!(c.final_t, 0.25);
        // weights 0.5 and 0.25
        assert!((c.depth - (0.5 + 0.5) / 0.75).abs() < 1e-15);
    }

    #[test]
    fn early_exit_stops_accumulation() {
        let shades = vec![Shade::from_splat(&splat(0.5, [1.0; 3])); 2];
        let hits = [hit(0, 1.0, 0.99995), hit(1, 2.0, 0.5)];
        assert_eq!(composite_hits(&hits, EARLY_EXIT_T, |i| &shades[i as usize]).used, 1);
        assert_eq!(composite_hits(&hits, 0.0, |i| &shades[i as usize]).used, 2);
    }
}
