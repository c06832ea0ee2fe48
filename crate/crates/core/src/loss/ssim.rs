//! Structural similarity over an 11x11 Gaussian window.
//!
//! Windows are truncated at the image border and renormalized. The score is
//! the mean of the per-pixel SSIM map over all pixels and channels.

use crate::scene::ImageBuffer;
use crate::Result;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

const RADIUS: usize = SSIM_WINDOW / 2;

fn taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    g
}

/// Separable blur with border-renormalized windows plus its adjoint.
struct Blur {
    g: [f64; SSIM_WINDOW],
    w: usize,
    h: usize,
    /// Window normalizers along x and y.
    zx: Vec<f64>,
    zy: Vec<f64>,
}

impl Blur {
    fn new(w: usize, h: usize) -> Self {
        let g = taps();
        let norm = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(RADIUS);
                    let hi = (i + RADIUS).min(n - 1);
                    (lo..=hi).map(|j| g[j + RADIUS - i]).sum()
                })
                .collect()
        };
        Self {
            g,
            w,
            h,
            zx: norm(w),
            zy: norm(h),
        }
    }

    /// Unnormalized 1D pass along x: out[y][i] = sum_j g(j - i) src[y][j].
    fn pass_x(&self, src: &[f64], out: &mut [f64]) {
        let w = self.w;
        for y in 0..self.h {
            let row = &src[y * w..(y + 1) * w];
            for i in 0..w {
                let lo = i.saturating_sub(RADIUS);
                let hi = (i + RADIUS).min(w - 1);
                let mut acc = 0.0;
                for (j, &v) in row.iter().enumerate().take(hi + 1).skip(lo) {
                    acc += self.g[j + RADIUS - i] * v;
                }
                out[y * w + i] = acc;
            }
        }
    }

    fn pass_y(&self, src: &[f64], out: &mut [f64]) {
        let w = self.w;
        for y in 0..self.h {
            let lo = y.saturating_sub(RADIUS);
            let hi = (y + RADIUS).min(self.h - 1);
            for x in 0..w {
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += self.g[j + RADIUS - y] * src[j * w + x];
                }
                out[y * w + x] = acc;
            }
        }
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        self.pass_x(src, &mut tmp);
        self.pass_y(&tmp, &mut out);
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] /= self.zx[x] * self.zy[y];
            }
        }
        out
    }

    /// Transpose of `apply`.
    fn adjoint(&self, src: &[f64]) -> Vec<f64> {
        let mut scaled = src.to_vec();
        for y in 0..self.h {
            for x in 0..self.w {
                scaled[y * self.w + x] /= self.zx[x] * self.zy[y];
            }
        }
        let mut tmp = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        // the taps are symmetric, so the unnormalized passes are self-adjoint
        self.pass_y(&scaled, &mut tmp);
        self.pass_x(&tmp, &mut out);
        out
    }
}

fn planes(img: &ImageBuffer) -> Vec<Vec<f64>> {
    (0..img.channels)
        .map(|c| img.data.iter().skip(c).step_by(img.channels).copied().collect())
        .collect()
}

struct ChannelStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    e_aa: Vec<f64>,
    e_bb: Vec<f64>,
    e_ab: Vec<f64>,
}

fn channel_stats(blur: &Blur, a: &[f64], b: &[f64]) -> ChannelStats {
    let sq = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    ChannelStats {
        mu_a: blur.apply(a),
        mu_b: blur.apply(b),
        e_aa: blur.apply(&sq(a, a)),
        e_bb: blur.apply(&sq(b, b)),
        e_ab: blur.apply(&sq(a, b)),
    }
}

/// Mean SSIM between two images of equal shape.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let blur = Blur::new(a.width, a.height);
    let (pa, pb) = (planes(a), planes(b));
    let mut total = 0.0;
    for c in 0..a.channels {
        let s = channel_stats(&blur, &pa[c], &pb[c]);
        for k in 0..s.mu_a.len() {
            let (ma, mb) = (s.mu_a[k], s.mu_b[k]);
            let va = s.e_aa[k] - ma * ma;
            let vb = s.e_bb[k] - mb * mb;
            let cov = s.e_ab[k] - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
    }
    Ok(total / a.data.len() as f64)
}

/// Mean SSIM and its gradient with respect to every value of `b`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b, "ssim")?;
    let blur = Blur::new(a.width, a.height);
    let (pa, pb) = (planes(a), planes(b));
    let m = a.data.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; a.data.len()];
    for c in 0..a.channels {
        let s = channel_stats(&blur, &pa[c], &pb[c]);
        let n = s.mu_a.len();
        let mut d_mu = vec![0.0; n];
        let mut d_ebb = vec![0.0; n];
        let mut d_eab = vec![0.0; n];
        for k in 0..n {
            let (ma, mb) = (s.mu_a[k], s.mu_b[k]);
            let va = s.e_aa[k] - ma * ma;
            let vb = s.e_bb[k] - mb * mb;
            let cov = s.e_ab[k] - ma * mb;
            let l_num = 2.0 * ma * mb + SSIM_C1;
            let l_den = ma * ma + mb * mb + SSIM_C1;
            let c_num = 2.0 * cov + SSIM_C2;
            let c_den = va + vb + SSIM_C2;
            let den = l_den * c_den;
            let val = l_num * c_num / den;
            total += val;
            let ds_dmu = 2.0 * ma * c_num / den - val * 2.0 * mb / l_den;
            let ds_dvar = -val / c_den;
            let ds_dcov = 2.0 * l_num / den;
            // chain through var_b = E[bb] - mu_b^2 and cov = E[ab] - mu_a mu_b
            d_mu[k] = ds_dmu - 2.0 * mb * ds_dvar - ma * ds_dcov;
            d_ebb[k] = ds_dvar;
            d_eab[k] = ds_dcov;
        }
        let g_mu = blur.adjoint(&d_mu);
        let g_bb = blur.adjoint(&d_ebb);
        let g_ab = blur.adjoint(&d_eab);
        for k in 0..n {
            grad[k * a.channels + c] = (g_mu[k] + 2.0 * pb[c][k] * g_bb[k] + pa[c][k] * g_ab[k]) / m;
        }
    }
    Ok((total / m, grad))
}
