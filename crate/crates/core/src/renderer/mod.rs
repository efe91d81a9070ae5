//! Differentiable tile-based Gaussian rasterizer.
//!
//! [`render`] composites a cloud front to back into an [`ImageBuffer`];
//! [`render_backward`] propagates per-pixel upstream gradients back to every
//! Gaussian parameter. Tiles are processed in parallel, and per-tile gradient
//! partials are merged in tile order so results do not depend on thread count.

mod project;
mod raster;

use nalgebra::{Vector3, Vector4};
use thiserror::Error;

use crate::scene::{Camera, GaussianCloud, ImageBuffer, SignedImage};

pub use project::{project, ProjectedGaussian, Projection};

/// Support half-width, in standard deviations, used when no skip threshold applies.
pub const EXACT_CUTOFF_SIGMA: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Tile edge in pixels.
    pub tile_size: u32,
    /// Contributions below this alpha are skipped.
    pub alpha_min: f64,
    /// Per-Gaussian alpha ceiling.
    pub alpha_max: f64,
    /// A pixel stops compositing once its transmittance drops below this.
    pub transmittance_min: f64,
    /// Camera-space near plane.
    pub near: f64,
    /// Added to the diagonal of every screen-space covariance, in px².
    pub blur: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { tile_size: 16, alpha_min: 1.0 / 255.0, alpha_max: 0.999, transmittance_min: 1e-4, near: 0.01, blur: 0.3 }
    }
}

impl RenderSettings {
    /// No skip threshold and no early termination, so the image is a smooth
    /// function of the parameters (up to an 8σ footprint). Used for gradient checks.
    pub fn exact() -> Self {
        Self { alpha_min: 0.0, transmittance_min: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("upstream gradient is {got:?}, render is {expected:?}")]
    UpstreamSize { expected: (u32, u32), got: (u32, u32) },
    #[error("upstream gradient contains non-finite values")]
    NonFiniteUpstream,
}

/// Per-pixel gradients of the loss with respect to the rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct Upstream {
    pub rgb: SignedImage,
    pub alpha: Vec<f64>,
}

impl Upstream {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self { rgb: SignedImage::zeros(width, height), alpha: vec![0.0; width as usize * height as usize] }
    }

    pub fn from_rgb(rgb: SignedImage) -> Self {
        let n = rgb.data.len();
        Self { rgb, alpha: vec![0.0; n] }
    }

    pub fn add_assign(&mut self, other: &Upstream) {
        for (a, b) in self.rgb.data.iter_mut().zip(&other.rgb.data) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += b;
        }
    }
}

/// Gradients with respect to the activated parameters of each Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub center: Vec<Vector3<f64>>,
    pub scale: Vec<Vector3<f64>>,
    /// With respect to the raw (unnormalized) stored quaternion.
    pub rotation: Vec<Vector4<f64>>,
    pub opacity: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// Norm of the screen-space mean gradient in normalized device units.
    pub view_grad_norm: Vec<f64>,
    /// Whether the Gaussian passed the near-plane cull in this view.
    pub visible: Vec<bool>,
}

impl GradientBundle {
    pub fn zeros(n: usize) -> Self {
        Self {
            center: vec![Vector3::zeros(); n],
            scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            view_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().chain(&self.scale).chain(&self.color).all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity.iter().chain(&self.view_grad_norm).all(|x| x.is_finite())
    }
}

pub fn render(cloud: &GaussianCloud, camera: &Camera, background: [f64; 3]) -> ImageBuffer {
    render_with(cloud, camera, background, &RenderSettings::default())
}

pub fn render_with(cloud: &GaussianCloud, camera: &Camera, background: [f64; 3], settings: &RenderSettings) -> ImageBuffer {
    let projection = project(cloud, camera, settings);
    raster::forward_projected(&projection.gaussians, camera, background, settings)
}

pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: [f64; 3],
    upstream: &Upstream,
) -> Result<GradientBundle, RenderError> {
    render_backward_with(cloud, camera, background, upstream, &RenderSettings::default())
}

pub fn render_backward_with(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: [f64; 3],
    upstream: &Upstream,
    settings: &RenderSettings,
) -> Result<GradientBundle, RenderError> {
    raster::backward(cloud, camera, background, upstream, settings)
}
