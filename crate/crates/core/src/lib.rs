//! Generative Gaussian splatting toolkit.
//!
//! Stage 1 optimizes a [`scene::GaussianCloud`] under a pluggable [`guidance::Guidance`]
//! signal with a differentiable tile rasterizer. Stage 2 extracts a mesh through a
//! block-wise density query and marching cubes, bakes colors into a UV atlas and
//! refines the texture under image-space supervision.

pub mod guidance;
pub mod meshex;
pub mod renderer;
pub mod scene;
pub mod texturer;
pub mod trainer;
