use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::atlas::UvAtlas;
use crate::scene::{Camera, ImageBuffer, SignedImage, TextureImage, TriangleMesh};

const BAND: usize = 16;
const NEAR: f64 = 0.01;
pub const NO_FACE: u32 = u32::MAX;

/// Nearest visible triangle per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragments {
    pub width: u32,
    pub height: u32,
    pub face: Vec<u32>,
    /// Perspective-correct barycentrics of the pixel center.
    pub bary: Vec<[f64; 3]>,
}

impl Fragments {
    pub fn covered(&self, i: usize) -> bool {
        self.face[i] != NO_FACE
    }
}

/// Z-buffered rasterization of `mesh` at pixel centers; ties go to the lower face index.
pub fn rasterize(mesh: &TriangleMesh, camera: &Camera) -> Fragments {
    let view = camera.view();
    let (w, h) = (camera.width as usize, camera.height as usize);
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|p| view.to_camera(p)).collect();
    let screen: Vec<Vector2<f64>> = cam.iter().map(|t| if t.z > NEAR { view.project_camera(t) } else { Vector2::zeros() }).collect();
    let bands = h.div_ceil(BAND);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (f, tri) in mesh.faces.iter().enumerate() {
        if tri.iter().any(|&v| cam[v as usize].z <= NEAR) {
            continue;
        }
        let ys = tri.map(|v| screen[v as usize].y);
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi < 0.0 || lo > h as f64 {
            continue;
        }
        let b0 = ((lo - 0.5).max(0.0) as usize / BAND).min(bands - 1);
        let b1 = ((hi - 0.5).max(0.0) as usize / BAND).min(bands - 1);
        for list in &mut lists[b0..=b1] {
            list.push(f as u32);
        }
    }
    let rows: Vec<(Vec<u32>, Vec<[f64; 3]>)> = lists
        .par_iter()
        .enumerate()
        .map(|(b, list)| {
            let y0 = b * BAND;
            let y1 = (y0 + BAND).min(h);
            let n = (y1 - y0) * w;
            let mut face = vec![NO_FACE; n];
            let mut bary = vec![[0.0; 3]; n];
            let mut depth = vec![f64::NEG_INFINITY; n];
            for &f in list {
                let tri = mesh.faces[f as usize];
                let p = tri.map(|v| screen[v as usize]);
                let inv_z = tri.map(|v| 1.0 / cam[v as usize].z);
                let area = (p[1] - p[0]).perp(&(p[2] - p[0]));
                if area == 0.0 {
                    continue;
                }
                let xs = p.map(|q| q.x);
                let xlo = (xs.iter().copied().fold(f64::INFINITY, f64::min) - 0.5).ceil().max(0.0) as usize;
                let xhi = (xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor();
                if xhi < 0.0 {
                    continue;
                }
                let xhi = (xhi as usize).min(w - 1);
                let ys = p.map(|q| q.y);
                let ylo = ((ys.iter().copied().fold(f64::INFINITY, f64::min) - 0.5).ceil().max(y0 as f64)) as usize;
                let yhi = (ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 0.5).floor();
                if yhi < y0 as f64 {
                    continue;
                }
                let yhi = (yhi as usize).min(y1 - 1);
                for y in ylo..=yhi {
                    for x in xlo..=xhi {
                        let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let l = [
                            (p[2] - p[1]).perp(&(c - p[1])) / area,
                            (p[0] - p[2]).perp(&(c - p[2])) / area,
                            (p[1] - p[0]).perp(&(c - p[0])) / area,
                        ];
                        if l.iter().any(|&v| v < 0.0) {
                            continue;
                        }
                        let persp = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                        let z = persp[0] + persp[1] + persp[2];
                        let i = (y - y0) * w + x;
                        if z > depth[i] || (z == depth[i] && f < face[i]) {
                            depth[i] = z;
                            face[i] = f;
                            bary[i] = persp.map(|v| v / z);
                        }
                    }
                }
            }
            (face, bary)
        })
        .collect();
    let mut out = Fragments { width: camera.width, height: camera.height, face: Vec::with_capacity(w * h), bary: Vec::with_capacity(w * h) };
    for (f, b) in rows {
        out.face.extend(f);
        out.bary.extend(b);
    }
    out
}

/// Texel indices and weights of a clamped bilinear lookup at `uv`.
pub fn bilinear_taps(resolution: u32, uv: [f64; 2]) -> [(usize, f64); 4] {
    let r = resolution as i64;
    let res = f64::from(resolution);
    let (x, y) = (uv[0] * res - 0.5, uv[1] * res - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let clamp = |v: i64| v.clamp(0, r - 1) as usize;
    let (xa, xb) = (clamp(x0 as i64), clamp(x0 as i64 + 1));
    let (ya, yb) = (clamp(y0 as i64), clamp(y0 as i64 + 1));
    let idx = |x: usize, y: usize| y * resolution as usize + x;
    [
        (idx(xa, ya), (1.0 - fx) * (1.0 - fy)),
        (idx(xb, ya), fx * (1.0 - fy)),
        (idx(xa, yb), (1.0 - fx) * fy),
        (idx(xb, yb), fx * fy),
    ]
}

pub fn sample(texture: &TextureImage, uv: [f64; 2]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (i, w) in bilinear_taps(texture.resolution, uv) {
        for k in 0..3 {
            c[k] += w * texture.rgb[i][k];
        }
    }
    c
}

pub fn fragment_uv(atlas: &UvAtlas, face: u32, bary: &[f64; 3]) -> [f64; 2] {
    let t = atlas.uvs[face as usize];
    std::array::from_fn(|k| bary[0] * t[0][k] + bary[1] * t[1][k] + bary[2] * t[2][k])
}

/// Shades fragments with the texture; uncovered pixels take the background with alpha 0.
pub fn shade(fragments: &Fragments, atlas: &UvAtlas, texture: &TextureImage, background: [f64; 3]) -> ImageBuffer {
    let mut img = ImageBuffer::filled(fragments.width, fragments.height, background, 0.0);
    img.rgb.par_iter_mut().zip(img.alpha.par_iter_mut()).enumerate().for_each(|(i, (c, a))| {
        if fragments.covered(i) {
            *c = sample(texture, fragment_uv(atlas, fragments.face[i], &fragments.bary[i]));
            *a = 1.0;
        }
    });
    img
}

/// Unlit textured render of the mesh.
pub fn render_mesh(
    mesh: &TriangleMesh,
    atlas: &UvAtlas,
    texture: &TextureImage,
    camera: &Camera,
    background: [f64; 3],
) -> ImageBuffer {
    shade(&rasterize(mesh, camera), atlas, texture, background)
}

/// ∂L/∂texel given ∂L/∂pixel for a render produced from `fragments`.
pub fn texture_gradient(fragments: &Fragments, atlas: &UvAtlas, upstream: &SignedImage) -> Vec<[f64; 3]> {
    let mut grad = vec![[0.0; 3]; (atlas.resolution as usize).pow(2)];
    for (i, g) in upstream.data.iter().enumerate() {
        if !fragments.covered(i) {
            continue;
        }
        for (t, w) in bilinear_taps(atlas.resolution, fragment_uv(atlas, fragments.face[i], &fragments.bary[i])) {
            for k in 0..3 {
                grad[t][k] += w * g[k];
            }
        }
    }
    grad
}
