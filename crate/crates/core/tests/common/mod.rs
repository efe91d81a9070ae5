//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatgen_core::renderer::{render_with, RenderSettings, Upstream};
use splatgen_core::scene::{Camera, Gaussian, GaussianCloud, ImageBuffer, SignedImage};

pub fn random_cloud(n: usize, seed: u64, extent: f32, scale: (f32, f32)) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| Gaussian {
            center: Vector3::from_fn(|_, _| rng.random_range(-extent..extent)),
            scale: Vector3::from_fn(|_, _| rng.random_range(scale.0..scale.1)),
            rotation: Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            opacity: rng.random_range(0.05..0.95),
            color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
        })
        .collect();
    GaussianCloud::new(gs)
}

fn rotation_of(q: Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Look-at pinhole camera built from the orbit angles, without the library's camera code.
struct Pinhole {
    eye: Vector3<f64>,
    right: Vector3<f64>,
    down: Vector3<f64>,
    fwd: Vector3<f64>,
    f: f64,
    cx: f64,
    cy: f64,
}

impl Pinhole {
    fn new(c: &Camera) -> Self {
        let (a, e) = (c.azimuth.to_radians(), c.elevation.to_radians());
        let eye = c.target + c.radius * Vector3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos());
        let fwd = (c.target - eye).normalize();
        let mut right = fwd.cross(&Vector3::new(0.0, 1.0, 0.0));
        if right.norm() < 1e-9 {
            right = fwd.cross(&Vector3::new(0.0, 0.0, -1.0));
        }
        let right = right.normalize();
        let down = fwd.cross(&right);
        let f = f64::from(c.height) / 2.0 / (c.fov_y.to_radians() / 2.0).tan();
        Pinhole { eye, right, down, fwd, f, cx: f64::from(c.width) / 2.0, cy: f64::from(c.height) / 2.0 }
    }
}

struct Splat {
    depth: f64,
    index: usize,
    mean: Vector2<f64>,
    inv: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

/// Per-pixel all-Gaussian compositing: no tiles, no bounding boxes, no early termination.
/// Contributions below `alpha_min` are skipped as in the rasterizer.
pub fn brute_force_render(cloud: &GaussianCloud, camera: &Camera, bg: [f64; 3], alpha_min: f64) -> ImageBuffer {
    use rayon::prelude::*;
    let cam = Pinhole::new(camera);
    let mut splats: Vec<Splat> = Vec::new();
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let d = g.center.cast::<f64>() - cam.eye;
        let t = Vector3::new(d.dot(&cam.right), d.dot(&cam.down), d.dot(&cam.fwd));
        if t.z <= 0.01 {
            continue;
        }
        let r = rotation_of(g.rotation.cast());
        let s = Matrix3::from_diagonal(&g.scale.cast::<f64>());
        let sigma = r * s * s * r.transpose();
        let w = Matrix3::from_rows(&[cam.right.transpose(), cam.down.transpose(), cam.fwd.transpose()]);
        let j = nalgebra::Matrix2x3::new(cam.f / t.z, 0.0, -cam.f * t.x / (t.z * t.z), 0.0, cam.f / t.z, -cam.f * t.y / (t.z * t.z));
        let mut cov = j * w * sigma * w.transpose() * j.transpose();
        cov[(0, 0)] += 0.3;
        cov[(1, 1)] += 0.3;
        let Some(inv) = cov.try_inverse() else { continue };
        splats.push(Splat {
            depth: t.z,
            index,
            mean: Vector2::new(cam.f * t.x / t.z + cam.cx, cam.f * t.y / t.z + cam.cy),
            inv,
            opacity: f64::from(g.opacity),
            color: [g.color.x, g.color.y, g.color.z].map(f64::from),
        });
    }
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let (w, h) = (camera.width as usize, camera.height as usize);
    let px: Vec<([f64; 3], f64)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let p = Vector2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let mut c = [0.0; 3];
            let mut tr = 1.0;
            for s in &splats {
                let d = p - s.mean;
                let q = (d.transpose() * s.inv * d)[0];
                let a = (s.opacity * (-q / 2.0).exp()).min(0.999);
                if s.opacity * (-q / 2.0).exp() < alpha_min {
                    continue;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * a * tr;
                }
                tr *= 1.0 - a;
            }
            ([c[0] + tr * bg[0], c[1] + tr * bg[1], c[2] + tr * bg[2]], 1.0 - tr)
        })
        .collect();
    ImageBuffer {
        width: camera.width,
        height: camera.height,
        rgb: px.iter().map(|p| p.0).collect(),
        alpha: px.iter().map(|p| p.1).collect(),
    }
}

pub fn max_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let rgb = a.rgb.iter().flatten().zip(b.rgb.iter().flatten());
    let al = a.alpha.iter().zip(&b.alpha);
    rgb.chain(al).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mutable view of one scalar parameter of a Gaussian, in the stored f32 layout.
pub fn param_mut(g: &mut Gaussian, group: usize, k: usize) -> &mut f32 {
    match group {
        0 => &mut g.center[k],
        1 => &mut g.scale[k],
        2 => &mut g.rotation[k],
        3 => &mut g.opacity,
        _ => &mut g.color[k],
    }
}

pub const GROUPS: [(&str, usize); 5] = [("center", 3), ("scale", 3), ("rotation", 4), ("opacity", 1), ("color", 3)];

/// Central difference of `loss` w.r.t. one stored parameter. The denominator is the
/// perturbation actually representable in f32.
pub fn central_difference(
    cloud: &GaussianCloud,
    i: usize,
    group: usize,
    k: usize,
    h: f32,
    loss: &dyn Fn(&GaussianCloud) -> f64,
) -> f64 {
    let mut plus = cloud.clone();
    let mut minus = cloud.clone();
    let x = *param_mut(&mut plus.gaussians[i], group, k);
    *param_mut(&mut plus.gaussians[i], group, k) = x + h;
    *param_mut(&mut minus.gaussians[i], group, k) = x - h;
    let step = f64::from(x + h) - f64::from(x - h);
    (loss(&plus) - loss(&minus)) / step
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn random_upstream(w: u32, h: u32, seed: u64) -> Upstream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rgb = SignedImage::zeros(w, h);
    for p in &mut rgb.data {
        *p = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    }
    let alpha = (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
    Upstream { rgb, alpha }
}

/// `<upstream, render>` summed over RGB and alpha, whose gradient is the upstream itself.
pub fn linear_loss<'a>(
    up: &'a Upstream,
    cam: &'a Camera,
    bg: [f64; 3],
    settings: RenderSettings,
) -> impl Fn(&GaussianCloud) -> f64 + 'a {
    move |c: &GaussianCloud| {
        let img = render_with(c, cam, bg, &settings);
        let rgb: f64 = img.rgb.iter().zip(&up.rgb.data).map(|(a, g)| (0..3).map(|k| a[k] * g[k]).sum::<f64>()).sum();
        rgb + img.alpha.iter().zip(&up.alpha).map(|(a, g)| a * g).sum::<f64>()
    }
}

/// Untruncated mixture density `sum_i o_i exp(-q_i / 2)` at every cell-centered point of
/// a `res`³ grid over `(-1, 1)³`, x fastest.
pub fn naive_density_grid(cloud: &GaussianCloud, res: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let kernels: Vec<(Vector3<f64>, Matrix3<f64>, f64)> = cloud
        .gaussians
        .iter()
        .map(|g| {
            let r = rotation_of(g.rotation.cast());
            let s2 = Matrix3::from_diagonal(&g.scale.cast::<f64>().map(|s| s.max(1e-6).powi(2)));
            let sigma = r * s2 * r.transpose();
            (g.center.cast(), sigma.try_inverse().unwrap(), f64::from(g.opacity))
        })
        .collect();
    let coord = |i: usize| -1.0 + (i as f64 + 0.5) * 2.0 / res as f64;
    (0..res * res)
        .into_par_iter()
        .flat_map_iter(|zy| {
            let (z, y) = (zy / res, zy % res);
            let kernels = &kernels;
            (0..res).map(move |x| {
                let p = Vector3::new(coord(x), coord(y), coord(z));
                kernels
                    .iter()
                    .map(|(c, prec, o)| {
                        let d = p - c;
                        o * (-0.5 * d.dot(&(prec * d))).exp()
                    })
                    .sum::<f64>()
            })
        })
        .collect()
}
