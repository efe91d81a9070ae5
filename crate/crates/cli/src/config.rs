//! Flat `key = value` run configuration.
//!
//! Every key has a default; the resolved configuration is written back in the
//! same format, so a manifest can be fed to `--config` to repeat a run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use splatgen_core::texturer::{RefineConfig, DEFAULT_TEXTURE_RESOLUTION};
use splatgen_core::trainer::{Mode, TrainConfig};

/// Keys in manifest order.
pub const KEYS: &[&str] = &[
    "image",
    "prompt",
    "reference_elevation",
    "guidance",
    "guidance_timeout",
    "seed",
    "out",
    "steps",
    "radius",
    "fov_y",
    "azimuth_min",
    "azimuth_max",
    "elevation_min",
    "elevation_max",
    "resolution_start",
    "resolution_end",
    "lambda_rgb",
    "lambda_alpha",
    "sds_weight",
    "timestep_start",
    "timestep_end",
    "densify_interval",
    "densify_grad",
    "densify_max_scale",
    "prune_opacity",
    "prune_max_scale",
    "split_factor",
    "split_children",
    "lr_center_start",
    "lr_center_end",
    "lr_center_decay_steps",
    "lr_color",
    "lr_opacity",
    "lr_scale",
    "lr_rotation",
    "init_count",
    "init_radius",
    "checkpoint_every",
    "threshold",
    "target_faces",
    "smooth_iters",
    "texture_resolution",
    "bake_resolution",
    "refine_steps",
    "t_start",
    "texture_lr",
    "refine_resolution_min",
    "refine_resolution_max",
    "reference_weight",
    "views",
    "render_resolution",
    "background",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuidanceSpec {
    Zero,
    /// Ground-truth cloud PLY.
    Oracle(PathBuf),
    /// Server root URL.
    Remote(String),
}

impl FromStr for GuidanceSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "zero" {
            return Ok(GuidanceSpec::Zero);
        }
        if let Some(p) = s.strip_prefix("oracle:").filter(|p| !p.is_empty()) {
            return Ok(GuidanceSpec::Oracle(p.into()));
        }
        if let Some(u) = s.strip_prefix("remote:").filter(|u| !u.is_empty()) {
            return Ok(GuidanceSpec::Remote(u.into()));
        }
        Err(format!("guidance `{s}` is not `zero`, `oracle:<scene.ply>` or `remote:<url>`"))
    }
}

impl fmt::Display for GuidanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidanceSpec::Zero => write!(f, "zero"),
            GuidanceSpec::Oracle(p) => write!(f, "oracle:{}", p.display()),
            GuidanceSpec::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub image: Option<PathBuf>,
    pub reference_elevation: f64,
    pub guidance: Option<GuidanceSpec>,
    /// Seconds per remote request.
    pub guidance_timeout: f64,
    pub out: PathBuf,
    pub threshold: f64,
    pub target_faces: usize,
    pub smooth_iters: usize,
    pub texture_resolution: u32,
    pub bake_resolution: u32,
    pub refine: RefineConfig,
    pub views: usize,
    pub render_resolution: u32,
    pub background: [f64; 3],
}

/// Parses config text into ordered entries, one message per bad line.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>, Vec<String>> {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => entries.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(format!("line {}: expected `key = value`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(entries)
    } else {
        Err(errors)
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse `{v}`"))
}

fn fmt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    fn defaults(text_mode: bool) -> Self {
        let train = if text_mode { TrainConfig::text("") } else { TrainConfig::image() };
        Self {
            train,
            image: None,
            reference_elevation: 0.0,
            guidance: None,
            guidance_timeout: 120.0,
            out: PathBuf::from("out"),
            threshold: 1.0,
            target_faces: splatgen_core::meshex::DEFAULT_TARGET_FACES,
            smooth_iters: splatgen_core::meshex::DEFAULT_SMOOTH_ITERS,
            texture_resolution: DEFAULT_TEXTURE_RESOLUTION,
            bake_resolution: 1024,
            refine: RefineConfig::default(),
            views: 8,
            render_resolution: 512,
            background: [1.0; 3],
        }
    }

    /// Config file entries overlaid with flag overrides (flags win). Unknown and
    /// repeated keys are errors; every problem is reported.
    pub fn resolve(file: &[(String, String)], flags: &[(&str, String)]) -> Result<Self, Vec<String>> {
        let mut errors = Vec::new();
        let mut map = BTreeMap::new();
        for (k, v) in file {
            if !KEYS.contains(&k.as_str()) {
                errors.push(format!("unknown key `{k}`"));
            } else if map.insert(k.clone(), v.clone()).is_some() {
                errors.push(format!("key `{k}` given more than once"));
            }
        }
        for (k, v) in flags {
            map.insert((*k).to_string(), v.clone());
        }
        let text_mode = map.get("prompt").is_some_and(|p| !p.is_empty());
        let mut cfg = Self::defaults(text_mode);
        for (k, v) in &map {
            if KEYS.contains(&k.as_str()) {
                if let Err(e) = cfg.set(k, v) {
                    errors.push(e);
                }
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "image" => self.image = (!v.is_empty()).then(|| PathBuf::from(v)),
            "prompt" => t.prompt = v.to_string(),
            "reference_elevation" => self.reference_elevation = num(key, v)?,
            "guidance" => self.guidance = if v.is_empty() { None } else { Some(v.parse()?) },
            "guidance_timeout" => self.guidance_timeout = num(key, v)?,
            "seed" => {
                t.seed = num(key, v)?;
                self.refine.seed = t.seed;
            }
            "out" => self.out = PathBuf::from(v),
            "steps" => t.steps = num(key, v)?,
            "radius" => t.radius = num(key, v)?,
            "fov_y" => t.fov_y = num(key, v)?,
            "azimuth_min" => t.azimuth_range.0 = num(key, v)?,
            "azimuth_max" => t.azimuth_range.1 = num(key, v)?,
            "elevation_min" => t.elevation_range.0 = num(key, v)?,
            "elevation_max" => t.elevation_range.1 = num(key, v)?,
            "resolution_start" => t.resolution_start = num(key, v)?,
            "resolution_end" => t.resolution_end = num(key, v)?,
            "lambda_rgb" => t.lambda_rgb = num(key, v)?,
            "lambda_alpha" => t.lambda_alpha = num(key, v)?,
            "sds_weight" => t.sds_weight = num(key, v)?,
            "timestep_start" => t.timestep_start = num(key, v)?,
            "timestep_end" => t.timestep_end = num(key, v)?,
            "densify_interval" => t.densify_interval = num(key, v)?,
            "densify_grad" => t.densify.grad = num(key, v)?,
            "densify_max_scale" => t.densify.max_scale = num(key, v)?,
            "prune_opacity" => t.densify.prune_opacity = num(key, v)?,
            "prune_max_scale" => t.densify.prune_max_scale = num(key, v)?,
            "split_factor" => t.densify.split_factor = num(key, v)?,
            "split_children" => t.densify.split_children = num(key, v)?,
            "lr_center_start" => t.lr_center_start = num(key, v)?,
            "lr_center_end" => t.lr_center_end = num(key, v)?,
            "lr_center_decay_steps" => t.lr_center_decay_steps = num(key, v)?,
            "lr_color" => t.lr_color = num(key, v)?,
            "lr_opacity" => t.lr_opacity = num(key, v)?,
            "lr_scale" => t.lr_scale = num(key, v)?,
            "lr_rotation" => t.lr_rotation = num(key, v)?,
            "init_count" => t.init_count = num(key, v)?,
            "init_radius" => t.init_radius = num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "threshold" => self.threshold = num(key, v)?,
            "target_faces" => self.target_faces = num(key, v)?,
            "smooth_iters" => self.smooth_iters = num(key, v)?,
            "texture_resolution" => self.texture_resolution = num(key, v)?,
            "bake_resolution" => self.bake_resolution = num(key, v)?,
            "refine_steps" => self.refine.steps = num(key, v)?,
            "t_start" => self.refine.t_start = num(key, v)?,
            "texture_lr" => self.refine.lr = num(key, v)?,
            "refine_resolution_min" => self.refine.resolution_range.0 = num(key, v)?,
            "refine_resolution_max" => self.refine.resolution_range.1 = num(key, v)?,
            "reference_weight" => self.refine.reference_weight = num(key, v)?,
            "views" => self.views = num(key, v)?,
            "render_resolution" => self.render_resolution = num(key, v)?,
            "background" => {
                let parts: Vec<f64> = v.split(',').map(|c| num(key, c.trim())).collect::<Result<_, _>>()?;
                self.background = parts.try_into().map_err(|_| format!("{key}: expected `r,g,b`"))?;
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "image" => fmt_path(&self.image),
            "prompt" => t.prompt.clone(),
            "reference_elevation" => self.reference_elevation.to_string(),
            "guidance" => self.guidance.as_ref().map(|g| g.to_string()).unwrap_or_default(),
            "guidance_timeout" => self.guidance_timeout.to_string(),
            "seed" => t.seed.to_string(),
            "out" => self.out.display().to_string(),
            "steps" => t.steps.to_string(),
            "radius" => t.radius.to_string(),
            "fov_y" => t.fov_y.to_string(),
            "azimuth_min" => t.azimuth_range.0.to_string(),
            "azimuth_max" => t.azimuth_range.1.to_string(),
            "elevation_min" => t.elevation_range.0.to_string(),
            "elevation_max" => t.elevation_range.1.to_string(),
            "resolution_start" => t.resolution_start.to_string(),
            "resolution_end" => t.resolution_end.to_string(),
            "lambda_rgb" => t.lambda_rgb.to_string(),
            "lambda_alpha" => t.lambda_alpha.to_string(),
            "sds_weight" => t.sds_weight.to_string(),
            "timestep_start" => t.timestep_start.to_string(),
            "timestep_end" => t.timestep_end.to_string(),
            "densify_interval" => t.densify_interval.to_string(),
            "densify_grad" => t.densify.grad.to_string(),
            "densify_max_scale" => t.densify.max_scale.to_string(),
            "prune_opacity" => t.densify.prune_opacity.to_string(),
            "prune_max_scale" => t.densify.prune_max_scale.to_string(),
            "split_factor" => t.densify.split_factor.to_string(),
            "split_children" => t.densify.split_children.to_string(),
            "lr_center_start" => t.lr_center_start.to_string(),
            "lr_center_end" => t.lr_center_end.to_string(),
            "lr_center_decay_steps" => t.lr_center_decay_steps.to_string(),
            "lr_color" => t.lr_color.to_string(),
            "lr_opacity" => t.lr_opacity.to_string(),
            "lr_scale" => t.lr_scale.to_string(),
            "lr_rotation" => t.lr_rotation.to_string(),
            "init_count" => t.init_count.to_string(),
            "init_radius" => t.init_radius.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "threshold" => self.threshold.to_string(),
            "target_faces" => self.target_faces.to_string(),
            "smooth_iters" => self.smooth_iters.to_string(),
            "texture_resolution" => self.texture_resolution.to_string(),
            "bake_resolution" => self.bake_resolution.to_string(),
            "refine_steps" => self.refine.steps.to_string(),
            "t_start" => self.refine.t_start.to_string(),
            "texture_lr" => self.refine.lr.to_string(),
            "refine_resolution_min" => self.refine.resolution_range.0.to_string(),
            "refine_resolution_max" => self.refine.resolution_range.1.to_string(),
            "reference_weight" => self.refine.reference_weight.to_string(),
            "views" => self.views.to_string(),
            "render_resolution" => self.render_resolution.to_string(),
            "background" => self.background.map(|c| c.to_string()).join(","),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    pub fn mode(&self) -> Mode {
        self.train.mode
    }

    /// Every resolved key, one `key = value` line each, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }

    /// Problems shared by the commands that optimize: inputs and guidance.
    pub fn optimization_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match (&self.image, self.train.prompt.is_empty()) {
            (Some(_), false) => v.push("image and prompt are mutually exclusive".into()),
            (None, true) => v.push("one of image (image mode) or prompt (text mode) is required".into()),
            _ => {}
        }
        if let Some(p) = &self.image {
            if !p.is_file() {
                v.push(format!("image: {} does not exist", p.display()));
            }
        }
        match &self.guidance {
            None => v.push("guidance is required (zero, oracle:<scene.ply> or remote:<url>)".into()),
            Some(GuidanceSpec::Oracle(p)) if !p.is_file() => v.push(format!("guidance: {} does not exist", p.display())),
            _ => {}
        }
        if !(self.guidance_timeout > 0.0 && self.guidance_timeout.is_finite()) {
            v.push(format!("guidance_timeout {} must be positive", self.guidance_timeout));
        }
        v
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
