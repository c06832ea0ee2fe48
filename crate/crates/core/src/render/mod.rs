//! Forward rendering by front-to-back compositing of ray/disk intersections.

mod composite;
mod intersect;
mod normals;
mod raster;

pub use composite::{composite_hits, composite_pixel, PixelComposite, Shade, SplatHit};
pub use intersect::{intersect_ray_splat, splat_alpha, DiskHit, SplatGeom, ALPHA_CAP, ALPHA_FLOOR, CUTOFF_SIGMA};
pub use normals::{depth_to_normal, NormalMap};
pub use raster::{render_view, shade_table, PixelHits, RenderOptions, RenderOutput, EARLY_EXIT_T};
