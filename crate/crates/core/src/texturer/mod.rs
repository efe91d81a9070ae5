//! UV texturing of extracted meshes.
//!
//! [`unwrap`] builds box-projection charts, [`backproject`] bakes the Gaussian
//! cloud's appearance into them, and [`refine_texture`] optimizes texels toward
//! guidance-refined renders of the textured mesh. [`export`] writes an
//! OBJ/MTL/PNG bundle.

mod atlas;
mod bake;
mod io;
mod raster;
mod refine;

pub use atlas::{chart_labels, unwrap, Chart, UvAtlas, DEFAULT_TEXTURE_RESOLUTION, GUTTER};
pub use bake::{accumulate, backproject, bake_cameras, dilate, facing_weight, view_samples, BakeSettings, ViewSamples};
pub use io::{export, import, Bundle, ExportError};
pub use raster::{bilinear_taps, fragment_uv, rasterize, render_mesh, sample, shade, texture_gradient, Fragments, NO_FACE};
pub use refine::{refine_texture, RefineConfig, RefineError, RefineRow};

#[cfg(test)]
mod tests;
