use thiserror::Error;

use crate::renderer::Upstream;
use crate::scene::ImageBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("render is {render:?} but reference is {reference:?}")]
pub struct SizeMismatch {
    pub render: (u32, u32),
    pub reference: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLoss {
    /// Weighted total.
    pub loss: f64,
    /// Unweighted mean squared RGB error.
    pub rgb_mse: f64,
    /// Unweighted mean squared alpha error.
    pub alpha_mse: f64,
    pub upstream: Upstream,
}

/// `λ_rgb · mean((I - Ĩ)²) + λ_a · mean((A - Ã)²)` and its gradient w.r.t. the render.
///
/// `target` holds the reference RGB already composited over the render background.
pub fn reference_loss(
    render: &ImageBuffer,
    target: &ImageBuffer,
    lambda_rgb: f64,
    lambda_alpha: f64,
) -> Result<ReferenceLoss, SizeMismatch> {
    if !render.same_size(target) {
        return Err(SizeMismatch { render: (render.width, render.height), reference: (target.width, target.height) });
    }
    let n = render.pixel_count() as f64;
    let mut upstream = Upstream::zeros(render.width, render.height);
    let mut rgb_sum = 0.0;
    let mut alpha_sum = 0.0;
    for i in 0..render.pixel_count() {
        for k in 0..3 {
            let d = render.rgb[i][k] - target.rgb[i][k];
            rgb_sum += d * d;
            upstream.rgb.data[i][k] = 2.0 * lambda_rgb * d / (3.0 * n);
        }
        let d = render.alpha[i] - target.alpha[i];
        alpha_sum += d * d;
        upstream.alpha[i] = 2.0 * lambda_alpha * d / n;
    }
    let rgb_mse = rgb_sum / (3.0 * n);
    let alpha_mse = alpha_sum / n;
    Ok(ReferenceLoss { loss: lambda_rgb * rgb_mse + lambda_alpha * alpha_mse, rgb_mse, alpha_mse, upstream })
}
