//! Stage-1 optimization of a Gaussian cloud under a guidance signal.
//!
//! Each step renders a randomly sampled orbit view, asks the guidance for an
//! image-space residual, and pushes it back through the rasterizer as the upstream
//! gradient. In image mode the reference view adds a weighted RGBA reconstruction
//! loss. Parameters live in an unconstrained space (log-scale, opacity logit) and
//! are updated with Adam; densification and pruning run on a fixed interval.

mod adam;
mod densify;
mod loss;
pub mod schedule;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::guidance::{Conditioning, Guidance, GuidanceError, GuidanceRequest, RequestKind};
use crate::renderer::{render, render_backward, GradientBundle, RenderError, Upstream};
use crate::scene::{init_cloud, ply, Camera, Gaussian, GaussianCloud, GradStat, ImageBuffer, ParamError, SignedImage};

pub use adam::{adam_step, AdamConfig, AdamError, AdamState};
pub use densify::{densify_and_prune, should_prune, DensifyReport, DensifyThresholds, Origin, OriginKind};
pub use loss::{reference_loss, ReferenceLoss, SizeMismatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub mode: Mode,
    pub radius: f64,
    pub fov_y: f64,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub resolution_start: u32,
    pub resolution_end: u32,
    /// Final values of the linearly ramped reference-loss weights.
    pub lambda_rgb: f64,
    pub lambda_alpha: f64,
    pub densify_interval: usize,
    pub densify: DensifyThresholds,
    pub lr_center_start: f64,
    pub lr_center_end: f64,
    pub lr_center_decay_steps: usize,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub timestep_start: f64,
    pub timestep_end: f64,
    /// Constant weight applied to the guidance residual.
    pub sds_weight: f64,
    pub init_count: usize,
    pub init_radius: f32,
    /// Text conditioning sent to the guidance in text mode.
    pub prompt: String,
    pub seed: u64,
    /// Save a PLY every this many steps when `checkpoint_dir` is set; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn image() -> Self {
        Self {
            steps: 500,
            mode: Mode::Image,
            radius: 2.0,
            fov_y: 49.0,
            azimuth_range: (-180.0, 180.0),
            elevation_range: (-30.0, 30.0),
            resolution_start: 64,
            resolution_end: 512,
            lambda_rgb: 1e4,
            lambda_alpha: 1e3,
            densify_interval: 100,
            densify: DensifyThresholds::default(),
            lr_center_start: 1e-3,
            lr_center_end: 2e-5,
            lr_center_decay_steps: 500,
            lr_color: 0.01,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 5e-3,
            timestep_start: 0.98,
            timestep_end: 0.02,
            sds_weight: 1.0,
            init_count: 5000,
            init_radius: 0.5,
            prompt: String::new(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    pub fn text(prompt: &str) -> Self {
        Self {
            mode: Mode::Text,
            radius: 2.5,
            densify_interval: 50,
            densify: DensifyThresholds { grad: 0.01, ..DensifyThresholds::default() },
            prompt: prompt.into(),
            ..Self::image()
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(self.steps >= 1, "steps must be at least 1".into());
        need(self.radius > 0.0 && self.radius.is_finite(), format!("radius {} must be positive", self.radius));
        need(self.fov_y > 0.0 && self.fov_y < 180.0, format!("fov_y {} outside (0, 180)", self.fov_y));
        need(self.azimuth_range.0 < self.azimuth_range.1, "azimuth range must be increasing".into());
        need(self.elevation_range.0 < self.elevation_range.1, "elevation range must be increasing".into());
        need(
            self.elevation_range.0 >= -90.0 && self.elevation_range.1 <= 90.0,
            "elevation range must lie in [-90, 90]".into(),
        );
        need(
            self.resolution_start >= 8 && self.resolution_start <= self.resolution_end,
            "resolution schedule must be non-decreasing and start at 8 or more".into(),
        );
        need(self.lambda_rgb >= 0.0 && self.lambda_alpha >= 0.0, "loss weights must be non-negative".into());
        need(self.densify_interval >= 1, "densify_interval must be at least 1".into());
        let th = &self.densify;
        need(
            th.grad > 0.0 && th.max_scale > 0.0 && th.prune_opacity > 0.0 && th.prune_max_scale > 0.0,
            "densify and prune thresholds must be positive".into(),
        );
        need(th.split_factor > 1.0 && th.split_children >= 1, "split must shrink and produce children".into());
        let lrs = [self.lr_center_start, self.lr_center_end, self.lr_color, self.lr_opacity, self.lr_scale, self.lr_rotation];
        need(lrs.iter().all(|&l| l > 0.0 && l.is_finite()), "learning rates must be positive".into());
        need(self.lr_center_end <= self.lr_center_start, "center learning rate must decay".into());
        need(
            self.timestep_start <= 1.0 && self.timestep_end > 0.0 && self.timestep_end < self.timestep_start,
            "timestep must decrease within (0, 1]".into(),
        );
        need(self.init_count >= 1, "init_count must be at least 1".into());
        need(self.init_radius >= 0.0, "init_radius must be non-negative".into());
        v
    }
}

/// Pre-matted reference image (straight RGB, alpha as foreground mask) seen from azimuth 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceInput {
    pub image: ImageBuffer,
    pub elevation: f64,
}

impl ReferenceInput {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.image.validate()?;
        if self.image.width != self.image.height {
            return Err(ParamError::Invalid("reference image must be square".into()));
        }
        if !(-90.0..=90.0).contains(&self.elevation) {
            return Err(ParamError::Invalid(format!("reference elevation {} outside [-90, 90]", self.elevation)));
        }
        Ok(())
    }

    pub fn camera(&self, config: &TrainConfig, resolution: u32) -> Camera {
        Camera::orbit(0.0, self.elevation, config.radius, config.fov_y, resolution, resolution)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("invalid reference: {0}")]
    Reference(#[from] ParamError),
    #[error("image mode requires a reference input")]
    MissingReference,
    #[error("guidance failed at step {step}: {source}")]
    Guidance { step: usize, source: GuidanceError },
    #[error("render failed at step {step}: {source}")]
    Render { step: usize, source: RenderError },
    #[error("optimizer failed at step {step}: {source}")]
    Optimizer { step: usize, source: AdamError },
    #[error("non-finite loss or parameters at step {step}")]
    NonFinite { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] ply::PlyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub timestep: f64,
    pub resolution: u32,
    pub lambda_rgb: f64,
    pub lambda_alpha: f64,
    pub lr_center: f64,
    /// Root-mean-square of the weighted guidance residual.
    pub sds_norm: f64,
    /// Unweighted reference MSEs (0 in text mode).
    pub ref_rgb: f64,
    pub ref_alpha: f64,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub cloud: GaussianCloud,
    pub trace: Vec<TraceRow>,
    pub events: Vec<DensifyReport>,
}

/// Orbit camera with azimuth and elevation drawn uniformly from the configured
/// ranges, the elevation range widened to include `reference_elevation`, and a
/// white or black background with equal probability.
pub fn sample_camera<R: Rng>(config: &TrainConfig, reference_elevation: f64, resolution: u32, rng: &mut R) -> (Camera, [f64; 3]) {
    let (a0, a1) = config.azimuth_range;
    let e0 = config.elevation_range.0.min(reference_elevation);
    let e1 = config.elevation_range.1.max(reference_elevation);
    let azimuth = rng.random_range(a0..=a1);
    let elevation = rng.random_range(e0..=e1);
    let background = if rng.random_bool(0.5) { [1.0; 3] } else { [0.0; 3] };
    (Camera::orbit(azimuth, elevation, config.radius, config.fov_y, resolution, resolution), background)
}

const GROUPS: [&str; 5] = ["center", "scale", "rotation", "opacity", "color"];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Unconstrained parameters and their optimizer moments.
#[derive(Debug, Clone)]
struct Params {
    center: Vec<[f64; 3]>,
    log_scale: Vec<[f64; 3]>,
    rotation: Vec<[f64; 4]>,
    opacity: Vec<[f64; 1]>,
    color: Vec<[f64; 3]>,
    adam: [AdamState; 5],
    stats: Vec<GradStat>,
}

fn raw_of(g: &Gaussian) -> ([f64; 3], [f64; 3], [f64; 4], [f64; 1], [f64; 3]) {
    (
        g.center.cast::<f64>().into(),
        g.scale.map(|s| f64::from(s.max(1e-8)).ln()).into(),
        g.rotation.cast::<f64>().into(),
        [logit(f64::from(g.opacity))],
        g.color.cast::<f64>().into(),
    )
}

impl Params {
    fn from_cloud(cloud: &GaussianCloud) -> Self {
        let mut p = Params {
            center: Vec::new(),
            log_scale: Vec::new(),
            rotation: Vec::new(),
            opacity: Vec::new(),
            color: Vec::new(),
            adam: Default::default(),
            stats: vec![GradStat::default(); cloud.len()],
        };
        for g in &cloud.gaussians {
            let (c, s, r, o, col) = raw_of(g);
            p.center.push(c);
            p.log_scale.push(s);
            p.rotation.push(r);
            p.opacity.push(o);
            p.color.push(col);
        }
        let dims = [3, 3, 4, 1, 3];
        for (state, d) in p.adam.iter_mut().zip(dims) {
            *state = AdamState::zeros(cloud.len() * d);
        }
        p
    }

    fn len(&self) -> usize {
        self.center.len()
    }

    fn to_cloud(&self) -> GaussianCloud {
        let gaussians = (0..self.len())
            .map(|i| Gaussian {
                center: Vector3::from(self.center[i]).cast(),
                scale: Vector3::from(self.log_scale[i]).map(f64::exp).cast(),
                rotation: Vector4::from(self.rotation[i]).cast(),
                opacity: sigmoid(self.opacity[i][0]) as f32,
                color: Vector3::from(self.color[i]).cast(),
            })
            .collect();
        GaussianCloud { gaussians, grad_stats: self.stats.clone() }
    }

    fn is_finite(&self) -> bool {
        let flat = |v: &[f64]| v.iter().all(|x| x.is_finite());
        flat(self.center.as_flattened())
            && flat(self.log_scale.as_flattened())
            && flat(self.rotation.as_flattened())
            && flat(self.opacity.as_flattened())
            && flat(self.color.as_flattened())
    }

    fn step(&mut self, grads: &GradientBundle, lrs: [f64; 5], cfg: &AdamConfig) -> Result<(), AdamError> {
        let n = self.len();
        let g_center: Vec<f64> = grads.center.iter().flat_map(|v| v.iter().copied()).collect();
        let g_scale: Vec<f64> = (0..n)
            .flat_map(|i| (0..3).map(move |k| (i, k)))
            .map(|(i, k)| grads.scale[i][k] * self.log_scale[i][k].exp())
            .collect();
        let g_rot: Vec<f64> = grads.rotation.iter().flat_map(|v| v.iter().copied()).collect();
        let g_op: Vec<f64> = (0..n)
            .map(|i| {
                let s = sigmoid(self.opacity[i][0]);
                grads.opacity[i] * s * (1.0 - s)
            })
            .collect();
        let g_col: Vec<f64> = grads.color.iter().flat_map(|v| v.iter().copied()).collect();
        let [a0, a1, a2, a3, a4] = &mut self.adam;
        adam_step(GROUPS[0], self.center.as_flattened_mut(), &g_center, a0, lrs[0], cfg)?;
        adam_step(GROUPS[1], self.log_scale.as_flattened_mut(), &g_scale, a1, lrs[1], cfg)?;
        adam_step(GROUPS[2], self.rotation.as_flattened_mut(), &g_rot, a2, lrs[2], cfg)?;
        adam_step(GROUPS[3], self.opacity.as_flattened_mut(), &g_op, a3, lrs[3], cfg)?;
        adam_step(GROUPS[4], self.color.as_flattened_mut(), &g_col, a4, lrs[4], cfg)?;
        for c in self.color.as_flattened_mut() {
            *c = c.clamp(0.0, 1.0);
        }
        Ok(())
    }

    fn accumulate(&mut self, grads: &GradientBundle) {
        for (s, (&v, &vis)) in self.stats.iter_mut().zip(grads.view_grad_norm.iter().zip(&grads.visible)) {
            if vis {
                s.accum += v;
                s.count += 1;
            }
        }
    }

    /// Rebuilds the parameter set after densification. Survivors keep their exact
    /// unconstrained values and moments; new Gaussians start with zero moments.
    fn rebuild(&self, cloud: &GaussianCloud, origins: &[Origin]) -> Params {
        let mut p = Params::from_cloud(&GaussianCloud::new(Vec::new()));
        let dims = [3usize, 3, 4, 1, 3];
        for (g, o) in cloud.gaussians.iter().zip(origins) {
            let i = o.parent;
            let mut center = self.center[i];
            let mut log_scale = self.log_scale[i];
            if o.kind == OriginKind::Split {
                let (c, s, ..) = raw_of(g);
                center = c;
                log_scale = s;
            }
            p.center.push(center);
            p.log_scale.push(log_scale);
            p.rotation.push(self.rotation[i]);
            p.opacity.push(self.opacity[i]);
            p.color.push(self.color[i]);
            for (gi, d) in dims.iter().enumerate() {
                let (m, v) = if o.kind == OriginKind::Original {
                    (self.adam[gi].m[i * d..(i + 1) * d].to_vec(), self.adam[gi].v[i * d..(i + 1) * d].to_vec())
                } else {
                    (vec![0.0; *d], vec![0.0; *d])
                };
                p.adam[gi].m.extend(m);
                p.adam[gi].v.extend(v);
            }
        }
        for gi in 0..5 {
            p.adam[gi].step = self.adam[gi].step;
        }
        p.stats = vec![GradStat::default(); p.len()];
        p
    }
}

fn add_bundle(a: &mut GradientBundle, b: &GradientBundle) {
    for i in 0..a.len() {
        a.center[i] += b.center[i];
        a.scale[i] += b.scale[i];
        a.rotation[i] += b.rotation[i];
        a.opacity[i] += b.opacity[i];
        a.color[i] += b.color[i];
    }
}

fn scaled(residual: &SignedImage, w: f64) -> SignedImage {
    let data = residual.data.iter().map(|p| p.map(|v| v * w)).collect();
    SignedImage { width: residual.width, height: residual.height, data }
}

pub fn train_stage1(
    config: &TrainConfig,
    guidance: &dyn Guidance,
    reference: Option<&ReferenceInput>,
) -> Result<TrainOutput, TrainError> {
    let cloud = init_cloud(config.init_count, config.init_radius, config.seed).map_err(|e| TrainError::Config(vec![e.to_string()]))?;
    train_stage1_from(config, guidance, reference, cloud)
}

/// As [`train_stage1`], starting from a given cloud instead of a random ball.
pub fn train_stage1_from(
    config: &TrainConfig,
    guidance: &dyn Guidance,
    reference: Option<&ReferenceInput>,
    initial: GaussianCloud,
) -> Result<TrainOutput, TrainError> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(TrainError::Config(violations));
    }
    if config.mode == Mode::Image && reference.is_none() {
        return Err(TrainError::MissingReference);
    }
    if let Some(r) = reference {
        r.validate()?;
    }
    let white = [1.0; 3];
    let conditioning_image = reference.map(|r| r.image.composite_over(white));
    let mut targets: HashMap<u32, ImageBuffer> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ca4e7a);
    let mut params = Params::from_cloud(&initial);
    let adam_cfg = AdamConfig::default();
    let mut trace = Vec::with_capacity(config.steps);
    let mut events = Vec::new();
    let ref_elevation = reference.map_or(0.0, |r| r.elevation);

    for step in 0..config.steps {
        let res = schedule::resolution(step, config.steps, config.resolution_start, config.resolution_end);
        let t = schedule::timestep(step, config.steps, config.timestep_start, config.timestep_end);
        let lambda_rgb = schedule::linear_ramp(step, config.steps, config.lambda_rgb);
        let lambda_alpha = schedule::linear_ramp(step, config.steps, config.lambda_alpha);
        let lr_center = schedule::exp_decay(step, config.lr_center_decay_steps, config.lr_center_start, config.lr_center_end);
        let cloud = params.to_cloud();

        let (camera, background) = sample_camera(config, ref_elevation, res, &mut rng);
        let image = render(&cloud, &camera, background);
        let conditioning = match (&conditioning_image, reference) {
            (Some(img), Some(r)) => {
                Conditioning::Image { reference: img.clone(), delta: camera.delta_from(&r.camera(config, res)) }
            }
            _ => Conditioning::Text { prompt: config.prompt.clone() },
        };
        let request = GuidanceRequest { kind: RequestKind::Residual, image, camera, background, timestep: t, conditioning };
        let residual = guidance
            .guide(&request)
            .and_then(|r| {
                r.check(&request)?;
                r.into_residual()
            })
            .map_err(|source| TrainError::Guidance { step, source })?;
        let weighted = scaled(&residual, config.sds_weight);
        let sds_norm = weighted.l2_norm() / ((3 * weighted.data.len()).max(1) as f64).sqrt();
        let mut grads = render_backward(&cloud, &camera, background, &Upstream::from_rgb(weighted))
            .map_err(|source| TrainError::Render { step, source })?;
        params.accumulate(&grads);

        let (mut ref_rgb, mut ref_alpha) = (0.0, 0.0);
        if let Some(r) = reference {
            let ref_cam = r.camera(config, res);
            let target = targets.entry(res).or_insert_with(|| r.image.resample(res, res).composite_over(white));
            let rendered = render(&cloud, &ref_cam, white);
            let rl = reference_loss(&rendered, target, lambda_rgb, lambda_alpha).expect("target resampled to render size");
            ref_rgb = rl.rgb_mse;
            ref_alpha = rl.alpha_mse;
            let g = render_backward(&cloud, &ref_cam, white, &rl.upstream).map_err(|source| TrainError::Render { step, source })?;
            params.accumulate(&g);
            add_bundle(&mut grads, &g);
        }
        if !grads.is_finite() || !sds_norm.is_finite() || !(ref_rgb + ref_alpha).is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        let lrs = [lr_center, config.lr_scale, config.lr_rotation, config.lr_opacity, config.lr_color];
        params.step(&grads, lrs, &adam_cfg).map_err(|source| TrainError::Optimizer { step, source })?;
        if !params.is_finite() {
            return Err(TrainError::NonFinite { step });
        }

        if (step + 1) % config.densify_interval == 0 {
            let (next, origins, mut report) = densify_and_prune(&params.to_cloud(), &config.densify, &mut rng);
            report.step = step + 1;
            log::debug!("densify at step {}: {:?}", step + 1, report);
            params = params.rebuild(&next, &origins);
            events.push(report);
        }
        trace.push(TraceRow {
            step,
            timestep: t,
            resolution: res,
            lambda_rgb,
            lambda_alpha,
            lr_center,
            sds_norm,
            ref_rgb,
            ref_alpha,
            count: params.len(),
        });
        if let Some(dir) = &config.checkpoint_dir {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                ply::save(&params.to_cloud(), &dir.join(format!("checkpoint_{:05}.ply", step + 1)))?;
            }
        }
    }
    let mut cloud = params.to_cloud();
    cloud.reset_stats();
    Ok(TrainOutput { cloud, trace, events })
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,sds_norm,ref_rgb,ref_alpha,count")?;
    for r in trace {
        writeln!(out, "{},{:.9e},{:.9e},{:.9e},{}", r.step, r.sds_norm, r.ref_rgb, r.ref_alpha, r.count)?;
    }
    Ok(())
}

pub fn save_trace_csv(trace: &[TraceRow], path: &Path) -> std::io::Result<()> {
    write_trace_csv(trace, std::io::BufWriter::new(std::fs::File::create(path)?))
}
