use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::atlas::UvAtlas;
use super::raster::{rasterize, shade, texture_gradient};
use crate::guidance::{Conditioning, Guidance, GuidanceError, GuidanceRequest, RequestKind};
use crate::renderer::Upstream;
use crate::scene::{SignedImage, TextureImage, TriangleMesh};
use crate::trainer::{adam_step, reference_loss, sample_camera, AdamConfig, AdamError, AdamState, Mode, ReferenceInput, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub steps: usize,
    pub t_start: f64,
    pub lr: f64,
    pub resolution_range: (u32, u32),
    pub reference_weight: f64,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { steps: 50, t_start: 0.5, lr: 0.2, resolution_range: (128, 1024), reference_weight: 1.0, seed: 0 }
    }
}

impl RefineConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.t_start) {
            v.push(format!("t_start {} outside [0, 1]", self.t_start));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            v.push(format!("texture lr {} must be positive", self.lr));
        }
        let (lo, hi) = self.resolution_range;
        if lo == 0 || lo > hi {
            v.push(format!("mesh resolution range {lo}..{hi} is empty"));
        }
        if !(self.reference_weight >= 0.0 && self.reference_weight.is_finite()) {
            v.push(format!("reference weight {} must be nonnegative", self.reference_weight));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineRow {
    pub step: usize,
    pub resolution: u32,
    /// Pixel-wise MSE between the coarse render and the refined target.
    pub loss: f64,
    /// Reference RGBA term; zero in text mode.
    pub reference_loss: f64,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refinement configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("atlas does not match the mesh or texture")]
    Inconsistent,
    #[error("image mode requires a reference input")]
    MissingReference,
    #[error("guidance failed at step {step}: {source}")]
    Guidance { step: usize, source: GuidanceError },
    #[error("optimizer failed at step {step}: {source}")]
    Optimizer { step: usize, source: AdamError },
}

/// `mean((coarse - target)²)` over pixels and channels, with its pixel gradient.
fn mse_upstream(coarse: &crate::scene::ImageBuffer, target: &crate::scene::ImageBuffer) -> (f64, SignedImage) {
    let n = (coarse.pixel_count() * 3) as f64;
    let mut grad = SignedImage::zeros(coarse.width, coarse.height);
    let mut sum = 0.0;
    for (i, (c, t)) in coarse.rgb.iter().zip(&target.rgb).enumerate() {
        for k in 0..3 {
            let d = c[k] - t[k];
            sum += d * d;
            grad.data[i][k] = 2.0 * d / n;
        }
    }
    (sum / n, grad)
}

/// Optimizes texel colors toward the guidance's refined renders.
pub fn refine_texture(
    mesh: &TriangleMesh,
    atlas: &UvAtlas,
    texture: &TextureImage,
    guidance: &dyn Guidance,
    train: &TrainConfig,
    config: &RefineConfig,
    reference: Option<&ReferenceInput>,
) -> Result<(TextureImage, Vec<RefineRow>), RefineError> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(RefineError::Config(problems));
    }
    if !atlas.is_consistent_with(mesh) || texture.resolution != atlas.resolution {
        return Err(RefineError::Inconsistent);
    }
    let reference = match (train.mode, reference) {
        (Mode::Image, None) => return Err(RefineError::MissingReference),
        (Mode::Image, r) => r,
        (Mode::Text, _) => None,
    };
    let white = [1.0; 3];
    let ref_elevation = reference.map_or(0.0, |r| r.elevation);
    let conditioning_image = reference.map(|r| r.image.composite_over(white));
    let ref_target = reference.map(|r| (r.camera(train, r.image.width), r.image.composite_over(white)));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7e47_04e5);
    let mut tex = texture.clone();
    let mut params: Vec<f64> = tex.rgb.iter().flatten().copied().collect();
    let mut state = AdamState::zeros(params.len());
    let adam = AdamConfig::default();
    let mut trace = Vec::with_capacity(config.steps);
    let (lo, hi) = config.resolution_range;

    for step in 0..config.steps {
        let res = rng.random_range(lo..=hi);
        let (camera, background) = sample_camera(train, ref_elevation, res, &mut rng);
        let fragments = rasterize(mesh, &camera);
        let coarse = shade(&fragments, atlas, &tex, background);
        let conditioning = match (&conditioning_image, reference) {
            (Some(img), Some(r)) => {
                Conditioning::Image { reference: img.clone(), delta: camera.delta_from(&r.camera(train, r.image.width)) }
            }
            _ => Conditioning::Text { prompt: train.prompt.clone() },
        };
        let request = GuidanceRequest {
            kind: RequestKind::Refine,
            image: coarse.clone(),
            camera,
            background,
            timestep: config.t_start,
            conditioning,
        };
        let refined = guidance
            .guide(&request)
            .and_then(|r| {
                r.check(&request)?;
                r.into_refined()
            })
            .map_err(|source| RefineError::Guidance { step, source })?;
        let (loss, upstream) = mse_upstream(&coarse, &refined);
        let mut grad = texture_gradient(&fragments, atlas, &upstream);

        let mut ref_loss = 0.0;
        if let Some((ref_cam, target)) = &ref_target {
            let ref_fragments = rasterize(mesh, ref_cam);
            let render = shade(&ref_fragments, atlas, &tex, white);
            let rl = reference_loss(&render, target, config.reference_weight, config.reference_weight)
                .expect("reference camera matches the reference size");
            ref_loss = rl.loss;
            let Upstream { rgb, .. } = rl.upstream;
            for (g, r) in grad.iter_mut().zip(texture_gradient(&ref_fragments, atlas, &rgb)) {
                for k in 0..3 {
                    g[k] += r[k];
                }
            }
        }

        let flat: Vec<f64> = grad.iter().flatten().copied().collect();
        adam_step("texture", &mut params, &flat, &mut state, config.lr, &adam)
            .map_err(|source| RefineError::Optimizer { step, source })?;
        for p in &mut params {
            *p = p.clamp(0.0, 1.0);
        }
        for (c, p) in tex.rgb.iter_mut().zip(params.chunks_exact(3)) {
            *c = [p[0], p[1], p[2]];
        }
        trace.push(RefineRow { step, resolution: res, loss, reference_loss: ref_loss });
    }
    Ok((tex, trace))
}
