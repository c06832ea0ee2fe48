//! Object-level 3D reconstruction with probabilistic 2D Gaussian splats.
//!
//! Every splat carries a learnable foreground probability alongside its
//! geometry and color. Training is supervised by per-view probability masks,
//! background points and misdetected views are filtered before
//! initialization, low-probability splats are pruned while training, and the
//! supervision masks are replaced by the model's own rendered masks partway
//! through the schedule.
//!
//! Module map:
//! - [`scene`]: splats, cameras, images, point clouds, datasets and their file formats
//! - [`render`]: ray/splat intersection and front-to-back compositing
//! - [`loss`]: loss terms and the analytic reverse pass
//! - [`refine`]: foreground point extraction and view filtering
//! - [`train`]: optimizer, density control, mask replacement, training loop
//! - [`synth`]: synthetic ground-truth dataset generator
//! - [`eval`]: mask and image quality metrics
//! - [`config`] / [`pipeline`]: run configuration and end-to-end drivers

pub mod config;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod loss;
pub mod pipeline;
pub mod refine;
pub mod render;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
