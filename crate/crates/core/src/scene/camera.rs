//! Orbit pinhole cameras.
//!
//! World space is y-up. A camera at azimuth `a`, elevation `e` and radius `r` sits at
//! `target + r (cos e sin a, sin e, cos e cos a)` and looks at `target`; azimuth 0
//! places it on the +z axis and positive elevation raises it above the target.
//! Camera space follows the usual computer-vision convention: x right, y down,
//! z forward, so visible points have positive depth.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::ParamError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Degrees.
    pub azimuth: f64,
    /// Degrees.
    pub elevation: f64,
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub target: Vector3<f64>,
}

/// Difference between two orbit poses, as sent to view-conditioned guidance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseDelta {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
}

impl Camera {
    pub fn orbit(azimuth: f64, elevation: f64, radius: f64, fov_y: f64, width: u32, height: u32) -> Self {
        Self { azimuth, elevation, radius, fov_y, width, height, target: Vector3::zeros() }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let finite = [self.azimuth, self.elevation, self.radius, self.fov_y]
            .iter()
            .chain(self.target.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(ParamError::NonFinite("camera"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(ParamError::Invalid(format!("fov_y {} outside (0, 180)", self.fov_y)));
        }
        if self.radius <= 0.0 {
            return Err(ParamError::Invalid(format!("radius {} must be positive", self.radius)));
        }
        if self.width < 8 || self.height < 8 {
            return Err(ParamError::Invalid(format!("image size {}x{} below 8", self.width, self.height)));
        }
        Ok(())
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Pose change from `reference` to `self`, azimuth wrapped to `[-180, 180)`.
    pub fn delta_from(&self, reference: &Camera) -> PoseDelta {
        let az = (self.azimuth - reference.azimuth + 180.0).rem_euclid(360.0) - 180.0;
        PoseDelta {
            azimuth: az,
            elevation: self.elevation - reference.elevation,
            radius: self.radius - reference.radius,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        let (a, e) = (self.azimuth.to_radians(), self.elevation.to_radians());
        self.target + self.radius * Vector3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos())
    }

    /// World-to-camera rotation; rows are the camera's right, down and forward axes.
    pub fn world_to_camera(&self) -> Matrix3<f64> {
        let forward = (self.target - self.position()).normalize();
        let mut right = forward.cross(&Vector3::y());
        if right.norm() < 1e-9 {
            // Looking straight up or down: fix the image "up" to world -z so the
            // poles have a deterministic orientation.
            right = forward.cross(&-Vector3::z());
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        let down = -up;
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    /// Focal lengths in pixels (square pixels, derived from the vertical FOV).
    pub fn focal(&self) -> f64 {
        0.5 * f64::from(self.height) / (0.5 * self.fov_y.to_radians()).tan()
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(0.5 * f64::from(self.width), 0.5 * f64::from(self.height))
    }

    /// Precomputed view transform for projection work.
    pub fn view(&self) -> View {
        let rotation = self.world_to_camera();
        let position = self.position();
        let f = self.focal();
        let c = self.principal_point();
        View { rotation, position, fx: f, fy: f, cx: c.x, cy: c.y, width: self.width, height: self.height }
    }
}

/// World-to-camera transform and intrinsics of a [`Camera`].
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl View {
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.position)
    }

    /// Pixel coordinates of a camera-space point (pixel centers sit at `i + 0.5`).
    pub fn project_camera(&self, t: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }
}
