use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::{normalize_quat, quat_to_matrix, Camera, GaussianCloud, View};

use super::RenderSettings;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy)]
pub struct ProjectedGaussian {
    /// Index into the source cloud.
    pub index: usize,
    /// Pixel coordinates of the projected center.
    pub mean2d: Vector2<f64>,
    /// Screen-space covariance in pixels², including the anti-aliasing blur.
    pub cov2d: Matrix2<f64>,
    /// Camera-space depth.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Inclusive pixel bounding box `[x0, y0, x1, y1]` outside of which the Gaussian's
    /// contribution is below the skip threshold. `None` when it misses the image.
    pub pixel_bounds: Option<[u32; 4]>,
}

/// Result of [`project`]: the visible Gaussians and how many were culled by the near plane.
#[derive(Debug, Clone)]
pub struct Projection {
    pub gaussians: Vec<ProjectedGaussian>,
    pub culled: usize,
}

/// Jacobian of the perspective projection at camera-space point `t`.
pub(crate) fn projection_jacobian(view: &View, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(view.fx * iz, 0.0, -view.fx * t.x * iz * iz, 0.0, view.fy * iz, -view.fy * t.y * iz * iz)
}

/// Half-width (in standard deviations) of the region where `opacity · exp(-q/2)`
/// stays at or above `alpha_min`. Zero when the Gaussian can never reach it.
pub(crate) fn cutoff_sigma(opacity: f64, alpha_min: f64) -> f64 {
    if alpha_min <= 0.0 {
        super::EXACT_CUTOFF_SIGMA
    } else if opacity <= alpha_min {
        0.0
    } else {
        (2.0 * (opacity / alpha_min).ln()).sqrt()
    }
}

/// Projects every Gaussian in front of the near plane.
pub fn project(cloud: &GaussianCloud, camera: &Camera, settings: &RenderSettings) -> Projection {
    let view = camera.view();
    let mut culled = 0;
    let mut out = Vec::with_capacity(cloud.len());
    for (index, g) in cloud.gaussians.iter().enumerate() {
        let center: Vector3<f64> = g.center.cast();
        let t = view.to_camera(&center);
        if t.z <= settings.near {
            culled += 1;
            continue;
        }
        let rot = quat_to_matrix(&normalize_quat(&g.rotation.cast()));
        let m = rot * Matrix3::from_diagonal(&g.scale.cast());
        let cov3 = m * m.transpose();
        let tj = projection_jacobian(&view, &t) * view.rotation;
        let cov = tj * cov3 * tj.transpose();
        let cov = Matrix2::new(
            cov[(0, 0)] + settings.blur,
            0.5 * (cov[(0, 1)] + cov[(1, 0)]),
            0.5 * (cov[(0, 1)] + cov[(1, 0)]),
            cov[(1, 1)] + settings.blur,
        );
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
        if !(det > 0.0) {
            culled += 1;
            continue;
        }
        let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(0, 1)], cov[(0, 0)]) / det;
        let mean2d = view.project_camera(&t);
        let opacity = f64::from(g.opacity);
        let k = cutoff_sigma(opacity, settings.alpha_min);
        let pixel_bounds = pixel_bounds(&mean2d, k * cov[(0, 0)].sqrt(), k * cov[(1, 1)].sqrt(), &view);
        out.push(ProjectedGaussian {
            index,
            mean2d,
            cov2d: cov,
            depth: t.z,
            color: [f64::from(g.color.x), f64::from(g.color.y), f64::from(g.color.z)],
            opacity,
            conic,
            pixel_bounds,
        });
    }
    Projection { gaussians: out, culled }
}

fn pixel_bounds(mean: &Vector2<f64>, rx: f64, ry: f64, view: &View) -> Option<[u32; 4]> {
    if rx <= 0.0 || ry <= 0.0 || !rx.is_finite() || !ry.is_finite() {
        return None;
    }
    // Pixel `i` has its center at `i + 0.5`.
    let x0 = (mean.x - rx - 0.5).ceil();
    let x1 = (mean.x + rx - 0.5).floor();
    let y0 = (mean.y - ry - 0.5).ceil();
    let y1 = (mean.y + ry - 0.5).floor();
    let (w, h) = (f64::from(view.width), f64::from(view.height));
    if x1 < 0.0 || y1 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 || x0 > x1 || y0 > y1 {
        return None;
    }
    Some([x0.max(0.0) as u32, y0.max(0.0) as u32, x1.min(w - 1.0) as u32, y1.min(h - 1.0) as u32])
}
