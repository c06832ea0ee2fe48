//! Loss terms and their analytic gradients.

mod backward;
mod ssim;
mod terms;

pub use backward::{backward, GradientSet, SplatGrad};
pub use ssim::{ssim, ssim_with_grad, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use terms::{
    apply_mask, depth_distortion, distortion_depth, distortion_depth_slope, DISTORTION_FAR, DISTORTION_NEAR, masked_photometric, normal_consistency, photometric_mask, probability_loss, total_loss, LossBreakdown,
    LossWeights, Photometric,
};
