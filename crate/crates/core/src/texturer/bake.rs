use rayon::prelude::*;

use super::atlas::UvAtlas;
use super::raster::{fragment_uv, rasterize, Fragments};
use crate::renderer::render;
use crate::scene::{Camera, GaussianCloud, TextureImage, TriangleMesh, TEXTURE_FILL};

pub const BAKE_AZIMUTHS: usize = 8;
pub const BAKE_ELEVATIONS: [f64; 3] = [-45.0, 0.0, 45.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakeSettings {
    pub view_resolution: u32,
    pub radius: f64,
    pub fov_y: f64,
    /// Pixels whose camera-facing normal component is below this are skipped.
    pub min_weight: f64,
    /// Pixels where the cloud is more transparent than this carry no color.
    pub min_alpha: f64,
    pub dilation_passes: usize,
}

impl Default for BakeSettings {
    fn default() -> Self {
        Self { view_resolution: 1024, radius: 2.0, fov_y: 49.0, min_weight: 0.1, min_alpha: 1e-3, dilation_passes: 16 }
    }
}

/// 8 azimuths at three elevations, then the top and bottom views.
pub fn bake_cameras(settings: &BakeSettings) -> Vec<Camera> {
    let r = settings.view_resolution;
    let mut cams = Vec::with_capacity(BAKE_AZIMUTHS * BAKE_ELEVATIONS.len() + 2);
    for &e in &BAKE_ELEVATIONS {
        for a in 0..BAKE_AZIMUTHS {
            cams.push(Camera::orbit(a as f64 * 360.0 / BAKE_AZIMUTHS as f64, e, settings.radius, settings.fov_y, r, r));
        }
    }
    for e in [90.0, -90.0] {
        cams.push(Camera::orbit(0.0, e, settings.radius, settings.fov_y, r, r));
    }
    cams
}

/// Camera-facing component of the interpolated vertex normal, `-n_cam.z`.
pub fn facing_weight(mesh: &TriangleMesh, camera: &Camera, fragments: &Fragments, i: usize) -> f64 {
    let f = mesh.faces[fragments.face[i] as usize];
    let b = fragments.bary[i];
    let n = mesh.normals[f[0] as usize] * b[0] + mesh.normals[f[1] as usize] * b[1] + mesh.normals[f[2] as usize] * b[2];
    let len = n.norm();
    if len == 0.0 {
        return 0.0;
    }
    -(camera.world_to_camera() * (n / len)).z
}

/// One view's contributions as `(texel, weight, color)`.
pub type ViewSamples = Vec<(usize, f64, [f64; 3])>;

pub fn view_samples(mesh: &TriangleMesh, atlas: &UvAtlas, cloud: &GaussianCloud, camera: &Camera, settings: &BakeSettings) -> ViewSamples {
    let fragments = rasterize(mesh, camera);
    let img = render(cloud, camera, [0.0; 3]);
    let res = atlas.resolution as usize;
    let mut out = Vec::new();
    for i in 0..img.pixel_count() {
        if !fragments.covered(i) || img.alpha[i] < settings.min_alpha {
            continue;
        }
        let w = facing_weight(mesh, camera, &fragments, i);
        if w < settings.min_weight {
            continue;
        }
        let uv = fragment_uv(atlas, fragments.face[i], &fragments.bary[i]);
        let x = ((uv[0] * res as f64).floor() as usize).min(res - 1);
        let y = ((uv[1] * res as f64).floor() as usize).min(res - 1);
        let a = img.alpha[i];
        out.push((y * res + x, w, img.rgb[i].map(|c| (c / a).min(1.0))));
    }
    out
}

/// Weighted average of view samples per texel, then dilation into untouched texels.
pub fn accumulate(resolution: u32, views: &[ViewSamples], dilation_passes: usize) -> TextureImage {
    let n = (resolution as usize).pow(2);
    let mut sum = vec![[0.0; 3]; n];
    let mut weight = vec![0.0; n];
    for samples in views {
        for &(t, w, c) in samples {
            weight[t] += w;
            for k in 0..3 {
                sum[t][k] += w * c[k];
            }
        }
    }
    let mut tex = TextureImage::new(resolution);
    for t in 0..n {
        if weight[t] > 0.0 {
            tex.rgb[t] = sum[t].map(|s| s / weight[t]);
            tex.valid[t] = true;
        }
    }
    dilate(&mut tex, dilation_passes);
    tex
}

/// Fills untouched texels from filled 8-neighbors, one ring per pass; the rest stay at the fill color.
pub fn dilate(tex: &mut TextureImage, passes: usize) {
    let r = tex.resolution as i64;
    let mut filled = tex.valid.clone();
    for _ in 0..passes {
        let prev = filled.clone();
        let snapshot = tex.rgb.clone();
        let mut changed = false;
        for y in 0..r {
            for x in 0..r {
                let i = (y * r + x) as usize;
                if prev[i] {
                    continue;
                }
                let mut acc = [0.0; 3];
                let mut count = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= r || ny >= r {
                            continue;
                        }
                        let j = (ny * r + nx) as usize;
                        if prev[j] {
                            for k in 0..3 {
                                acc[k] += snapshot[j][k];
                            }
                            count += 1.0;
                        }
                    }
                }
                if count > 0.0 {
                    tex.rgb[i] = acc.map(|v| v / count);
                    filled[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for (c, &f) in tex.rgb.iter_mut().zip(&filled) {
        if !f {
            *c = TEXTURE_FILL;
        }
    }
}

/// Bakes the cloud's appearance into the atlas from the 26 bake views.
pub fn backproject(mesh: &TriangleMesh, atlas: &UvAtlas, cloud: &GaussianCloud, settings: &BakeSettings) -> TextureImage {
    let views: Vec<ViewSamples> =
        bake_cameras(settings).par_iter().map(|cam| view_samples(mesh, atlas, cloud, cam, settings)).collect();
    accumulate(atlas.resolution, &views, settings.dilation_passes)
}
