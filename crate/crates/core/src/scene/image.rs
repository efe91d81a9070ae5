//! Float RGBA images.

use std::path::Path;

use super::ParamError;

/// Row-major RGB + alpha image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

impl ImageBuffer {
    pub fn filled(width: u32, height: u32, rgb: [f64; 3], alpha: f64) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, rgb: vec![rgb; n], alpha: vec![alpha; n] }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamps every channel into `[0, 1]`; non-finite values become 0.
    pub fn clamp(&mut self) {
        let fix = |v: &mut f64| *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        self.rgb.iter_mut().flat_map(|p| p.iter_mut()).for_each(fix);
        self.alpha.iter_mut().for_each(fix);
    }

    /// RGB composited over a solid background using the alpha plane.
    pub fn composite_over(&self, background: [f64; 3]) -> ImageBuffer {
        let rgb = self
            .rgb
            .iter()
            .zip(&self.alpha)
            .map(|(c, &a)| std::array::from_fn(|k| c[k] * a + background[k] * (1.0 - a)))
            .collect();
        ImageBuffer { width: self.width, height: self.height, rgb, alpha: self.alpha.clone() }
    }

    /// Straight (unpremultiplied) colors of a render made over black; clear pixels stay black.
    pub fn unpremultiplied(&self) -> ImageBuffer {
        let rgb = self
            .rgb
            .iter()
            .zip(&self.alpha)
            .map(|(c, &a)| if a > 0.0 { c.map(|v| (v / a).min(1.0)) } else { [0.0; 3] })
            .collect();
        ImageBuffer { width: self.width, height: self.height, rgb, alpha: self.alpha.clone() }
    }

    /// Box-filter resampling (each output pixel averages the input area it covers).
    pub fn resample(&self, width: u32, height: u32) -> ImageBuffer {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let xs = box_weights(self.width, width);
        let ys = box_weights(self.height, height);
        let mut out = ImageBuffer::filled(width, height, [0.0; 3], 0.0);
        for (oy, yw) in ys.iter().enumerate() {
            for (ox, xw) in xs.iter().enumerate() {
                let mut rgb = [0.0; 3];
                let mut a = 0.0;
                for &(iy, wy) in yw {
                    for &(ix, wx) in xw {
                        let w = wx * wy;
                        let i = self.index(ix, iy);
                        for k in 0..3 {
                            rgb[k] += w * self.rgb[i][k];
                        }
                        a += w * self.alpha[i];
                    }
                }
                let o = oy * width as usize + ox;
                out.rgb[o] = rgb;
                out.alpha[o] = a;
            }
        }
        out
    }

    /// Mean squared RGB error against another image of the same size.
    pub fn mse(&self, other: &ImageBuffer) -> f64 {
        assert!(self.same_size(other), "image size mismatch");
        let sum: f64 = self
            .rgb
            .iter()
            .zip(&other.rgb)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
            .sum();
        sum / (3 * self.pixel_count()) as f64
    }

    pub fn psnr(&self, other: &ImageBuffer) -> f64 {
        psnr_from_mse(self.mse(other))
    }

    pub fn to_rgba8(&self) -> image::RgbaImage {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::RgbaImage::from_fn(self.width, self.height, |x, y| {
            let i = self.index(x, y);
            let c = self.rgb[i];
            image::Rgba([q(c[0]), q(c[1]), q(c[2]), q(self.alpha[i])])
        })
    }

    pub fn from_rgba8(img: &image::RgbaImage) -> ImageBuffer {
        let (width, height) = img.dimensions();
        let mut out = ImageBuffer::filled(width, height, [0.0; 3], 0.0);
        for (x, y, p) in img.enumerate_pixels() {
            let i = out.index(x, y);
            out.rgb[i] = std::array::from_fn(|k| f64::from(p[k]) / 255.0);
            out.alpha[i] = f64::from(p[3]) / 255.0;
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        self.to_rgba8().save_with_format(path, image::ImageFormat::Png)
    }

    pub fn load_png(path: &Path) -> Result<ImageBuffer, image::ImageError> {
        Ok(Self::from_rgba8(&image::open(path)?.to_rgba8()))
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let n = self.pixel_count();
        if self.rgb.len() != n || self.alpha.len() != n {
            return Err(ParamError::Invalid("image planes do not match dimensions".into()));
        }
        let ok = self.rgb.iter().flatten().chain(&self.alpha).all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if ok {
            Ok(())
        } else {
            Err(ParamError::Invalid("image values must be finite and in [0, 1]".into()))
        }
    }
}

/// Signed per-pixel RGB image (guidance residuals and upstream gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct SignedImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl SignedImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width as usize * height as usize] }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// For each output index, the input indices and fractional weights it averages.
fn box_weights(input: u32, output: u32) -> Vec<Vec<(u32, f64)>> {
    let scale = f64::from(input) / f64::from(output);
    (0..output)
        .map(|o| {
            let lo = f64::from(o) * scale;
            let hi = lo + scale;
            if scale <= 1.0 {
                // Upsampling: nearest input sample.
                let i = (((lo + hi) * 0.5).floor() as u32).min(input - 1);
                return vec![(i, 1.0)];
            }
            let mut taps = Vec::new();
            let mut i = lo.floor() as u32;
            while f64::from(i) < hi && i < input {
                let overlap = (f64::from(i + 1).min(hi) - f64::from(i).max(lo)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_constant_is_constant() {
        let img = ImageBuffer::filled(37, 37, [0.25, 0.5, 0.75], 0.5);
        let r = img.resample(16, 16);
        for (c, a) in r.rgb.iter().zip(&r.alpha) {
            for k in 0..3 {
                assert!((c[k] - img.rgb[0][k]).abs() < 1e-12);
            }
            assert!((a - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_preserves_mean() {
        let mut img = ImageBuffer::filled(8, 8, [0.0; 3], 0.0);
        for i in 0..64 {
            img.alpha[i] = i as f64 / 63.0;
        }
        let r = img.resample(4, 4);
        let m0: f64 = img.alpha.iter().sum::<f64>() / 64.0;
        let m1: f64 = r.alpha.iter().sum::<f64>() / 16.0;
        assert!((m0 - m1).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageBuffer::filled(9, 8, [0.0; 3], 1.0);
        for (i, p) in img.rgb.iter_mut().enumerate() {
            *p = [(i % 256) as f64 / 255.0, 1.0, 0.0];
        }
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        assert_eq!(ImageBuffer::load_png(&path).unwrap(), img);
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = ImageBuffer::filled(8, 8, [0.3; 3], 1.0);
        assert!(a.psnr(&a).is_infinite());
    }
}
