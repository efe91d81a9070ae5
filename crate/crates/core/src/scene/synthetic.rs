//! Small known scene for oracle-guided end-to-end runs.

use nalgebra::{Vector3, Vector4};

use super::{Camera, Gaussian, GaussianCloud, ImageBuffer};
use crate::renderer::render;

/// Three overlapping anisotropic blobs (red, blue, green) inside the unit ball.
pub fn three_gaussian_scene() -> GaussianCloud {
    GaussianCloud::new(vec![
        Gaussian {
            center: Vector3::new(0.12, 0.05, 0.0),
            scale: Vector3::new(0.15, 0.1, 0.12),
            rotation: Vector4::new(0.9, 0.2, 0.3, 0.1),
            opacity: 0.9,
            color: Vector3::new(0.85, 0.25, 0.15),
        },
        Gaussian {
            center: Vector3::new(-0.15, -0.05, 0.1),
            scale: Vector3::new(0.1, 0.13, 0.1),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity: 0.9,
            color: Vector3::new(0.2, 0.35, 0.85),
        },
        Gaussian {
            center: Vector3::new(0.0, 0.2, -0.12),
            scale: Vector3::new(0.1, 0.1, 0.14),
            rotation: Vector4::new(0.8, -0.3, 0.1, 0.4),
            opacity: 0.9,
            color: Vector3::new(0.3, 0.8, 0.3),
        },
    ])
}

/// Pre-matted front view of `scene`: straight colors with the render's alpha as mask.
pub fn reference_view(scene: &GaussianCloud, elevation: f64, radius: f64, fov_y: f64, size: u32) -> ImageBuffer {
    let cam = Camera::orbit(0.0, elevation, radius, fov_y, size, size);
    render(scene, &cam, [0.0; 3]).unpremultiplied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_recomposites_to_the_render() {
        let scene = three_gaussian_scene();
        let r = reference_view(&scene, 0.0, 2.0, 49.0, 64);
        let white = render(&scene, &Camera::orbit(0.0, 0.0, 2.0, 49.0, 64, 64), [1.0; 3]);
        let again = r.composite_over([1.0; 3]);
        for (a, b) in again.rgb.iter().flatten().zip(white.rgb.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.alpha.iter().any(|&a| a > 0.8));
    }
}
