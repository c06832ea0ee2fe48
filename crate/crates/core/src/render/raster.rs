//! Tiled CPU rasterizer.
//!
//! Each splat's 3-sigma rectangle is projected to a conservative screen
//! bounding box and binned into square tiles. Pixels of a tile test only the
//! splats binned there, sort the surviving hits by `(t, splat index)` and
//! composite them. Because the per-pixel hit set and order do not depend on
//! the binning, the output is bit-identical to testing every splat at every
//! pixel.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::composite::{composite_hits, Shade, SplatHit};
use super::intersect::{splat_alpha, DiskHit, SplatGeom, CUTOFF_SIGMA};
use super::normals::NormalMap;
use crate::scene::{Camera, ImageBuffer, SplatPrimitive, NEAR_PLANE};

/// Transmittance below which compositing stops.
pub const EARLY_EXIT_T: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct RenderOptions {
    pub tile_size: usize,
    pub early_exit: f64,
    /// Retain per-pixel hit lists for the reverse pass.
    pub keep_hits: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            early_exit: EARLY_EXIT_T,
            keep_hits: true,
        }
    }
}

/// Per-pixel hit lists in compressed row storage, pixels in row-major order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PixelHits {
    offsets: Vec<usize>,
    hits: Vec<SplatHit>,
}

impl PixelHits {
    pub fn from_lists(lists: &[Vec<SplatHit>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut hits = Vec::new();
        for l in lists {
            hits.extend_from_slice(l);
            offsets.push(hits.len());
        }
        Self { offsets, hits }
    }

    pub fn pixel(&self, idx: usize) -> &[SplatHit] {
        &self.hits[self.offsets[idx]..self.offsets[idx + 1]]
    }

    pub fn pixel_count(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub rgb: ImageBuffer,
    /// Composited foreground probability.
    pub prob: ImageBuffer,
    /// Weight-normalized mean camera depth, 0 where nothing was hit.
    pub depth: ImageBuffer,
    pub normal: NormalMap,
    pub final_t: ImageBuffer,
    /// Sum of blending weights, equal to `1 - final_t`.
    pub weight: ImageBuffer,
    pub hits: PixelHits,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

pub fn shade_table(splats: &[SplatPrimitive]) -> Vec<Shade> {
    splats.iter().map(Shade::from_splat).collect()
}

impl SplatHit {
    /// Builds a hit from a disk intersection, `None` when its alpha is culled.
    #[inline]
    pub fn from_disk_hit(
        splat_index: u32,
        hit: &DiskHit,
        opacity: f64,
        dir_dot_normal: f64,
        ray_cam_z: f64,
    ) -> Option<SplatHit> {
        let gauss_value = (-0.5 * (hit.u * hit.u + hit.v * hit.v)).exp();
        let (alpha, capped) = splat_alpha(gauss_value, opacity)?;
        Some(SplatHit {
            splat_index,
            t: hit.t,
            depth: hit.t * ray_cam_z,
            u: hit.u,
            v: hit.v,
            gauss_value,
            alpha,
            capped,
            facing: if dir_dot_normal > 0.0 { -1.0 } else { 1.0 },
        })
    }
}

/// Orders hits by `t`, ties broken by splat index.
pub(crate) fn sort_hits(hits: &mut [SplatHit]) {
    hits.sort_unstable_by(|a, b| a.t.total_cmp(&b.t).then(a.splat_index.cmp(&b.splat_index)));
}

/// Inclusive pixel bounds `[x0, x1] x [y0, y1]`, or `None` when off-screen.
fn screen_bounds(g: &SplatGeom, cam: &Camera) -> Option<[usize; 4]> {
    let full = Some([0, cam.width - 1, 0, cam.height - 1]);
    let eu = g.t_u * (CUTOFF_SIGMA * g.scale_u);
    let ev = g.t_v * (CUTOFF_SIGMA * g.scale_v);
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let p = cam.to_camera(&(g.center + eu * a + ev * b));
        if p.z <= NEAR_PLANE {
            return full;
        }
        let u = cam.fx * p.x / p.z + cam.cx;
        let v = cam.fy * p.y / p.z + cam.cy;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    const MARGIN: f64 = 1e-6;
    let x0 = (umin - 0.5 - MARGIN).ceil().max(0.0);
    let x1 = (umax - 0.5 + MARGIN).floor().min(cam.width as f64 - 1.0);
    let y0 = (vmin - 0.5 - MARGIN).ceil().max(0.0);
    let y1 = (vmax - 0.5 + MARGIN).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

struct TileOutput {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rgb: Vec<f64>,
    prob: Vec<f64>,
    depth: Vec<f64>,
    normal: Vec<Vector3<f64>>,
    final_t: Vec<f64>,
    weight: Vec<f64>,
    counts: Vec<usize>,
    hits: Vec<SplatHit>,
}

/// Renders RGB, probability, depth and normal maps for one camera.
pub fn render_view(splats: &[SplatPrimitive], camera: &Camera, opts: &RenderOptions) -> RenderOutput {
    let (width, height) = (camera.width, camera.height);
    let geoms: Vec<SplatGeom> = splats.iter().map(SplatGeom::from_splat).collect();
    let shades = shade_table(splats);
    let ts = opts.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let bounds: Vec<Option<[usize; 4]>> = geoms.iter().map(|g| screen_bounds(g, camera)).collect();
    for (i, b) in bounds.iter().enumerate() {
        if let Some([x0, x1, y0, y1]) = *b {
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    bins[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
    }

    let origin = camera.center();
    let rt = camera.rotation.transpose();
    let tiles: Vec<TileOutput> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * ts;
            let y0 = ty * ts;
            let w = ts.min(width - x0);
            let h = ts.min(height - y0);
            let n = w * h;
            let mut out = TileOutput {
                x0,
                y0,
                w,
                h,
                rgb: vec![0.0; 3 * n],
                prob: vec![0.0; n],
                depth: vec![0.0; n],
                normal: vec![Vector3::zeros(); n],
                final_t: vec![1.0; n],
                weight: vec![0.0; n],
                counts: vec![0; n],
                hits: Vec::new(),
            };
            let candidates = &bins[tile];
            let mut scratch: Vec<SplatHit> = Vec::new();
            for ly in 0..h {
                let y = y0 + ly;
                for lx in 0..w {
                    let x = x0 + lx;
                    let dc = camera.pixel_ray_camera(x, y);
                    let dir = rt * dc;
                    scratch.clear();
                    for &si in candidates {
                        let [bx0, bx1, by0, by1] = bounds[si as usize].unwrap();
                        if x < bx0 || x > bx1 || y < by0 || y > by1 {
                            continue;
                        }
                        let g = &geoms[si as usize];
                        if let Some(dh) = g.intersect(&origin, &dir) {
                            if let Some(hit) =
                                SplatHit::from_disk_hit(si, &dh, g.opacity, dir.dot(&g.normal), dc.z)
                            {
                                scratch.push(hit);
                            }
                        }
                    }
                    if scratch.is_empty() {
                        continue;
                    }
                    sort_hits(&mut scratch);
                    let c = composite_hits(&scratch, opts.early_exit, |i| &shades[i as usize]);
                    let k = ly * w + lx;
                    out.rgb[3 * k..3 * k + 3].copy_from_slice(c.rgb.as_slice());
                    out.prob[k] = c.prob;
                    out.depth[k] = c.depth;
                    out.normal[k] = c.normal;
                    out.final_t[k] = c.final_t;
                    out.weight[k] = c.weight;
                    if opts.keep_hits {
                        out.counts[k] = c.used;
                        out.hits.extend_from_slice(&scratch[..c.used]);
                    }
                }
            }
            out
        })
        .collect();

    let mut rgb = ImageBuffer::new(width, height, 3);
    let mut prob = ImageBuffer::new(width, height, 1);
    let mut depth = ImageBuffer::new(width, height, 1);
    let mut final_t = ImageBuffer::filled(width, height, 1, 1.0);
    let mut weight = ImageBuffer::new(width, height, 1);
    let mut normal = NormalMap::zeros(width, height);
    let mut counts = vec![0usize; width * height];
    for t in &tiles {
        for ly in 0..t.h {
            for lx in 0..t.w {
                let k = ly * t.w + lx;
                let p = (t.y0 + ly) * width + t.x0 + lx;
                rgb.data[3 * p..3 * p + 3].copy_from_slice(&t.rgb[3 * k..3 * k + 3]);
                prob.data[p] = t.prob[k];
                depth.data[p] = t.depth[k];
                final_t.data[p] = t.final_t[k];
                weight.data[p] = t.weight[k];
                normal.data[p] = t.normal[k];
                counts[p] = t.counts[k];
            }
        }
    }

    let hits = if opts.keep_hits {
        let mut offsets = Vec::with_capacity(width * height + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut all = vec![EMPTY_HIT; offsets[width * height]];
        for t in &tiles {
            let mut src = 0;
            for ly in 0..t.h {
                for lx in 0..t.w {
                    let p = (t.y0 + ly) * width + t.x0 + lx;
                    let c = counts[p];
                    all[offsets[p]..offsets[p] + c].copy_from_slice(&t.hits[src..src + c]);
                    src += c;
                }
            }
        }
        PixelHits { offsets, hits: all }
    } else {
        PixelHits::default()
    };

    RenderOutput {
        rgb,
        prob,
        depth,
        normal,
        final_t,
        weight,
        hits,
    }
}

const EMPTY_HIT: SplatHit = SplatHit {
    splat_index: 0,
    t: 0.0,
    depth: 0.0,
    u: 0.0,
    v: 0.0,
    gauss_value: 0.0,
    alpha: 0.0,
    capped: false,
    facing: 1.0,
};
