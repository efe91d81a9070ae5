//! Domain types: Gaussians, cameras, images, meshes and PLY persistence.

mod camera;
mod gaussian;
mod image;
mod mesh;
pub mod ply;
mod synthetic;

pub use self::camera::{Camera, PoseDelta, View};
pub use self::gaussian::{
    covariance_from, init_cloud, initial_scale, normalize_quat, quat_to_matrix, GradStat, Gaussian, GaussianCloud,
    INIT_COLOR, INIT_OPACITY,
};
pub use self::image::{psnr_from_mse, ImageBuffer, SignedImage};
pub use self::mesh::{edge_key, TextureImage, Topology, TriangleMesh, TEXTURE_FILL};
pub use self::synthetic::{reference_view, three_gaussian_scene};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}
