//! Domain types and their file formats.

mod camera;
mod dataset;
mod image;
mod ply;
mod splat;

pub use camera::{Camera, Projection, NEAR_PLANE};
pub use dataset::{read_cameras, write_cameras, Dataset, GroundTruth, View};
pub use image::{read_image, write_image, BitDepth, ImageBuffer};
pub use ply::{
    read_ply_table, read_point_cloud, read_splats, splats_from_table, splats_to_table, write_ply_table, write_point_cloud,
    write_splats, PlyTable, PointCloud, SPLAT_PROPERTIES,
};
pub use splat::{logit, sigmoid, SplatPrimitive, LOGIT_LIMIT, MIN_LOG_SCALE};
