//! Tile-binned front-to-back compositing and its reverse-mode pass.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::scene::{normalize_quat, quat_to_matrix, Camera, GaussianCloud, ImageBuffer};

use super::project::{project, projection_jacobian, ProjectedGaussian};
use super::{GradientBundle, RenderError, RenderSettings, Upstream};

/// Depth-sorted per-tile lists of projected-Gaussian indices.
struct TileBins {
    tiles_x: u32,
    lists: Vec<Vec<u32>>,
}

fn bin_tiles(projected: &[ProjectedGaussian], width: u32, height: u32, tile: u32) -> TileBins {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut order: Vec<u32> = (0..projected.len() as u32).filter(|&i| projected[i as usize].pixel_bounds.is_some()).collect();
    // Front to back; equal depths keep cloud order.
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.depth.total_cmp(&pb.depth).then(pa.index.cmp(&pb.index))
    });
    let mut lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for i in order {
        let [x0, y0, x1, y1] = projected[i as usize].pixel_bounds.unwrap();
        for ty in y0 / tile..=y1 / tile {
            for tx in x0 / tile..=x1 / tile {
                lists[(ty * tiles_x + tx) as usize].push(i);
            }
        }
    }
    TileBins { tiles_x, lists }
}

/// Screen-space alpha of `g` at pixel center `p`, before the skip test.
#[inline]
fn alpha_at(g: &ProjectedGaussian, p: Vector2<f64>) -> (f64, Vector2<f64>, f64) {
    let d = p - g.mean2d;
    let c = &g.conic;
    let q = c[(0, 0)] * d.x * d.x + 2.0 * c[(0, 1)] * d.x * d.y + c[(1, 1)] * d.y * d.y;
    let gauss = (-0.5 * q).exp();
    (g.opacity * gauss, d, gauss)
}

struct TileRect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

fn tile_rect(bins: &TileBins, t: usize, tile: u32, width: u32, height: u32) -> TileRect {
    let tx = t as u32 % bins.tiles_x;
    let ty = t as u32 / bins.tiles_x;
    TileRect { x0: tx * tile, y0: ty * tile, x1: ((tx + 1) * tile).min(width), y1: ((ty + 1) * tile).min(height) }
}

pub(crate) fn forward_projected(
    projected: &[ProjectedGaussian],
    camera: &Camera,
    background: [f64; 3],
    settings: &RenderSettings,
) -> ImageBuffer {
    let (w, h) = (camera.width, camera.height);
    let bins = bin_tiles(projected, w, h, settings.tile_size);
    let tiles: Vec<Vec<([f64; 3], f64)>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let r = tile_rect(&bins, t, settings.tile_size, w, h);
            let list = &bins.lists[t];
            let mut px = Vec::with_capacity(((r.x1 - r.x0) * (r.y1 - r.y0)) as usize);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let p = Vector2::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
                    let mut color = [0.0; 3];
                    let mut trans = 1.0;
                    for &gi in list {
                        let g = &projected[gi as usize];
                        let (raw, _, _) = alpha_at(g, p);
                        if raw < settings.alpha_min {
                            continue;
                        }
                        let a = raw.min(settings.alpha_max);
                        let wgt = a * trans;
                        for k in 0..3 {
                            color[k] += g.color[k] * wgt;
                        }
                        trans *= 1.0 - a;
                        if trans < settings.transmittance_min {
                            break;
                        }
                    }
                    let rgb = std::array::from_fn(|k| color[k] + trans * background[k]);
                    px.push((rgb, 1.0 - trans));
                }
            }
            px
        })
        .collect();
    let mut img = ImageBuffer::filled(w, h, [0.0; 3], 0.0);
    for (t, px) in tiles.into_iter().enumerate() {
        let r = tile_rect(&bins, t, settings.tile_size, w, h);
        let mut it = px.into_iter();
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let (rgb, a) = it.next().unwrap();
                let i = img.index(x, y);
                img.rgb[i] = rgb;
                img.alpha[i] = a;
            }
        }
    }
    img.clamp();
    img
}

/// Gradient with respect to the screen-space quantities of one projected Gaussian.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    /// dL/d(conic) treating every entry of the 2x2 inverse covariance as independent.
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean += o.mean;
        self.conic += o.conic;
        self.opacity += o.opacity;
        for k in 0..3 {
            self.color[k] += o.color[k];
        }
    }
}

struct Contribution {
    local: usize,
    alpha: f64,
    trans: f64,
    clamped: bool,
}

fn backward_screen(
    projected: &[ProjectedGaussian],
    camera: &Camera,
    background: [f64; 3],
    upstream: &Upstream,
    settings: &RenderSettings,
) -> Vec<ScreenGrad> {
    let (w, h) = (camera.width, camera.height);
    let bins = bin_tiles(projected, w, h, settings.tile_size);
    let partials: Vec<Vec<ScreenGrad>> = (0..bins.lists.len())
        .into_par_iter()
        .map(|t| {
            let r = tile_rect(&bins, t, settings.tile_size, w, h);
            let list = &bins.lists[t];
            let mut grads = vec![ScreenGrad::default(); list.len()];
            let mut contribs: Vec<Contribution> = Vec::new();
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let pi = y as usize * w as usize + x as usize;
                    let g_rgb = upstream.rgb.data[pi];
                    let g_alpha = upstream.alpha[pi];
                    if g_rgb == [0.0; 3] && g_alpha == 0.0 {
                        continue;
                    }
                    let p = Vector2::new(f64::from(x) + 0.5, f64::from(y) + 0.5);
                    contribs.clear();
                    let mut trans = 1.0;
                    for (local, &gi) in list.iter().enumerate() {
                        let g = &projected[gi as usize];
                        let (raw, _, _) = alpha_at(g, p);
                        if raw < settings.alpha_min {
                            continue;
                        }
                        let clamped = raw > settings.alpha_max;
                        let a = raw.min(settings.alpha_max);
                        contribs.push(Contribution { local, alpha: a, trans, clamped });
                        trans *= 1.0 - a;
                        if trans < settings.transmittance_min {
                            break;
                        }
                    }
                    let final_trans = trans;
                    // Color of everything behind the current Gaussian, background included.
                    let mut behind = background;
                    for c in contribs.iter().rev() {
                        let g = &projected[list[c.local] as usize];
                        let acc = &mut grads[c.local];
                        let wgt = c.alpha * c.trans;
                        let mut d_alpha = 0.0;
                        for k in 0..3 {
                            acc.color[k] += g_rgb[k] * wgt;
                            d_alpha += g_rgb[k] * c.trans * (g.color[k] - behind[k]);
                        }
                        d_alpha += g_alpha * final_trans / (1.0 - c.alpha);
                        for k in 0..3 {
                            behind[k] = c.alpha * g.color[k] + (1.0 - c.alpha) * behind[k];
                        }
                        if c.clamped {
                            continue;
                        }
                        let (_, d, gauss) = alpha_at(g, p);
                        acc.opacity += d_alpha * gauss;
                        // alpha = o exp(-q/2)  =>  dL/dq = -alpha/2 dL/dalpha
                        let d_q = -0.5 * c.alpha * d_alpha;
                        let cd = g.conic * d;
                        acc.mean += -2.0 * d_q * cd;
                        acc.conic += d_q * d * d.transpose();
                    }
                }
            }
            grads
        })
        .collect();
    let mut out = vec![ScreenGrad::default(); projected.len()];
    for (t, grads) in partials.into_iter().enumerate() {
        for (local, g) in grads.iter().enumerate() {
            out[bins.lists[t][local] as usize].add(g);
        }
    }
    out
}

pub(crate) fn backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: [f64; 3],
    upstream: &Upstream,
    settings: &RenderSettings,
) -> Result<GradientBundle, RenderError> {
    let n_px = camera.width as usize * camera.height as usize;
    if upstream.rgb.width != camera.width || upstream.rgb.height != camera.height || upstream.alpha.len() != n_px {
        return Err(RenderError::UpstreamSize {
            expected: (camera.width, camera.height),
            got: (upstream.rgb.width, upstream.rgb.height),
        });
    }
    if !upstream.rgb.is_finite() || !upstream.alpha.iter().all(|v| v.is_finite()) {
        return Err(RenderError::NonFiniteUpstream);
    }
    let projection = project(cloud, camera, settings);
    let screen = backward_screen(&projection.gaussians, camera, background, upstream, settings);
    let view = camera.view();
    let mut bundle = GradientBundle::zeros(cloud.len());
    let per_gaussian: Vec<_> = projection
        .gaussians
        .par_iter()
        .zip(screen.par_iter())
        .map(|(pg, sg)| {
            let g = &cloud.gaussians[pg.index];
            let center: Vector3<f64> = g.center.cast();
            let scale: Vector3<f64> = g.scale.cast();
            let q_raw: Vector4<f64> = g.rotation.cast();
            let t = view.to_camera(&center);

            // conic = inverse(cov2d)  =>  dL/dcov2d = -conic · dL/dconic · conic
            let g_cov2d = -(pg.conic * sg.conic * pg.conic);

            let q_hat = normalize_quat(&q_raw);
            let rot = quat_to_matrix(&q_hat);
            let m = rot * Matrix3::from_diagonal(&scale);
            let cov3 = m * m.transpose();
            let jac = projection_jacobian(&view, &t);
            let tj = jac * view.rotation;

            // cov2d = T Σ Tᵀ (+ blur)
            let g_cov3 = tj.transpose() * g_cov2d * tj;
            let g_tj = 2.0 * g_cov2d * tj * cov3;
            let g_jac = g_tj * view.rotation.transpose();

            let (fx, fy) = (view.fx, view.fy);
            let iz = 1.0 / t.z;
            let iz2 = iz * iz;
            let mut g_t = Vector3::new(
                sg.mean.x * fx * iz,
                sg.mean.y * fy * iz,
                -sg.mean.x * fx * t.x * iz2 - sg.mean.y * fy * t.y * iz2,
            );
            g_t.x += g_jac[(0, 2)] * (-fx * iz2);
            g_t.y += g_jac[(1, 2)] * (-fy * iz2);
            g_t.z += g_jac[(0, 0)] * (-fx * iz2)
                + g_jac[(0, 2)] * (2.0 * fx * t.x * iz2 * iz)
                + g_jac[(1, 1)] * (-fy * iz2)
                + g_jac[(1, 2)] * (2.0 * fy * t.y * iz2 * iz);
            let g_center = view.rotation.transpose() * g_t;

            // Σ = M Mᵀ with M = R S
            let g_m = 2.0 * g_cov3 * m;
            let g_scale = Vector3::from_fn(|k, _| (0..3).map(|i| g_m[(i, k)] * rot[(i, k)]).sum::<f64>());
            let g_rot = Matrix3::from_fn(|i, k| g_m[(i, k)] * scale[k]);
            let g_qhat = quat_matrix_vjp(&q_hat, &g_rot);
            let n = q_raw.norm().max(f64::MIN_POSITIVE);
            let g_q = (g_qhat - q_hat * q_hat.dot(&g_qhat)) / n;

            let ndc = Vector2::new(sg.mean.x * 0.5 * f64::from(view.width), sg.mean.y * 0.5 * f64::from(view.height));
            (pg.index, g_center, g_scale, g_q, sg.opacity, Vector3::from(sg.color), ndc.norm())
        })
        .collect();
    for (i, c, s, q, o, col, vn) in per_gaussian {
        bundle.center[i] = c;
        bundle.scale[i] = s;
        bundle.rotation[i] = q;
        bundle.opacity[i] = o;
        bundle.color[i] = col;
        bundle.view_grad_norm[i] = vn;
        bundle.visible[i] = true;
    }
    Ok(bundle)
}

/// Vector-Jacobian product of `quat_to_matrix` at unit quaternion `q`.
fn quat_matrix_vjp(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dot = |d: [[f64; 3]; 3]| 2.0 * (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| d[i][j] * g[(i, j)]).sum::<f64>();
    Vector4::new(
        dot([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]]),
        dot([[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]]),
        dot([[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]]),
        dot([[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]]),
    )
}
