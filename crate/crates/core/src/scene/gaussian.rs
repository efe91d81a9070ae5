//! Gaussian primitives and clouds.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamError;

/// Opacity assigned to freshly initialized Gaussians.
pub const INIT_OPACITY: f32 = 0.1;
/// Diffuse grey used for freshly initialized Gaussians.
pub const INIT_COLOR: [f32; 3] = [0.5, 0.5, 0.5];

/// One anisotropic 3D Gaussian with plain diffuse color.
///
/// `rotation` is a quaternion stored scalar-first `(w, x, y, z)`. It does not have to
/// be normalized; every consumer normalizes at use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f32>,
    /// Per-axis standard deviations in world units.
    pub scale: Vector3<f32>,
    pub rotation: Vector4<f32>,
    pub opacity: f32,
    pub color: Vector3<f32>,
}

impl Gaussian {
    pub fn isotropic(center: Vector3<f32>, sigma: f32, opacity: f32, color: Vector3<f32>) -> Self {
        Self {
            center,
            scale: Vector3::repeat(sigma),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity,
            color,
        }
    }

    pub fn max_scale(&self) -> f32 {
        self.scale.max()
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }

    /// Checks the element invariants: positive scales, a non-zero quaternion,
    /// opacity and color in `[0, 1]`.
    pub fn validate(&self) -> Result<(), ParamError> {
        if !self.is_finite() {
            return Err(ParamError::NonFinite("gaussian"));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(ParamError::Invalid("scale must be positive".into()));
        }
        if self.rotation.norm_squared() == 0.0 {
            return Err(ParamError::Invalid("rotation quaternion is zero".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(ParamError::Invalid(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(ParamError::Invalid("color outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Covariance of this Gaussian in world space, evaluated in double precision.
    pub fn covariance(&self) -> Result<Matrix3<f64>, ParamError> {
        covariance_from(&self.scale.cast(), &self.rotation.cast())
    }
}

/// Normalizes a scalar-first quaternion. A zero quaternion maps to identity.
pub fn normalize_quat(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n == 0.0 {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    } else {
        q / n
    }
}

/// Rotation matrix of a unit scalar-first quaternion.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R · diag(s)² · Rᵀ` for per-axis standard deviations `scale` and a
/// scalar-first quaternion `rotation` (normalized here).
pub fn covariance_from(scale: &Vector3<f64>, rotation: &Vector4<f64>) -> Result<Matrix3<f64>, ParamError> {
    if !scale.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
        return Err(ParamError::NonFinite("covariance input"));
    }
    let r = quat_to_matrix(&normalize_quat(rotation));
    let m = r * Matrix3::from_diagonal(scale);
    let cov = m * m.transpose();
    // Symmetrize so the result is symmetric bit-for-bit.
    Ok((cov + cov.transpose()) * 0.5)
}

/// Mutable training statistic attached to each Gaussian: the accumulated norm of
/// the view-space positional gradient and the number of samples folded in.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradStat {
    pub accum: f64,
    pub count: u32,
}

impl GradStat {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.accum / f64::from(self.count)
        }
    }
}

/// The optimizable set of Gaussians plus their densification statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
    pub grad_stats: Vec<GradStat>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        let grad_stats = vec![GradStat::default(); gaussians.len()];
        Self { gaussians, grad_stats }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn reset_stats(&mut self) {
        self.grad_stats.clear();
        self.grad_stats.resize(self.gaussians.len(), GradStat::default());
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        self.gaussians.iter().try_for_each(Gaussian::validate)
    }
}

/// Isotropic scale used by [`init_cloud`]: `radius / count^(1/3)` clamped to `[1e-3, 0.05]`.
pub fn initial_scale(count: usize, radius: f32) -> f32 {
    (radius / (count as f32).cbrt()).clamp(1e-3, 0.05)
}

/// Random initial cloud: centers uniform in the ball of `radius`, identity rotation,
/// opacity 0.1 and grey color. Deterministic for a given seed.
pub fn init_cloud(count: usize, radius: f32, seed: u64) -> Result<GaussianCloud, ParamError> {
    if count == 0 {
        return Err(ParamError::Invalid("count must be at least 1".into()));
    }
    if !radius.is_finite() || radius < 0.0 {
        return Err(ParamError::Invalid(format!("radius {radius} must be finite and non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = initial_scale(count, radius);
    let gaussians = (0..count)
        .map(|_| {
            let center = sample_ball(&mut rng) * radius;
            Gaussian::isotropic(center, sigma, INIT_OPACITY, Vector3::from(INIT_COLOR))
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

/// Uniform sample in the unit ball by rejection.
fn sample_ball<R: Rng>(rng: &mut R) -> Vector3<f32> {
    loop {
        let p = Vector3::new(
            rng.random_range(-1.0f32..=1.0),
            rng.random_range(-1.0f32..=1.0),
            rng.random_range(-1.0f32..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}
