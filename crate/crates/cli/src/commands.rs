use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};
use splatgen_core::guidance::{Guidance, GuidanceError, OracleGuidance, RemoteGuidance, ZeroGuidance};
use splatgen_core::meshex::{build_grid, load_obj, marching_cubes, postprocess, save_obj, Culling};
use splatgen_core::renderer::render;
use splatgen_core::scene::{ply, Camera, ImageBuffer};
use splatgen_core::texturer::{self, backproject, refine_texture, render_mesh, unwrap, BakeSettings, Bundle, RefineError, RefineRow};
use splatgen_core::trainer::{save_trace_csv, train_stage1, Mode, ReferenceInput, TrainError};

use crate::config::{hex, GuidanceSpec, RunConfig};

/// Environment variable that replaces the URL of `remote:` guidance.
pub const GUIDANCE_URL_ENV: &str = "SPLATGEN_GUIDANCE_URL";

#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Runtime(anyhow::Error),
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Transport(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(v) => {
                write!(f, "invalid configuration:")?;
                for e in v {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "{e:#}"),
            CliError::Transport(e) => write!(f, "{e}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn guidance_failure(step: usize, source: GuidanceError) -> CliError {
    if source.is_transport() {
        CliError::Transport(format!("guidance failed at step {step}: {source}"))
    } else {
        CliError::Runtime(anyhow!("guidance failed at step {step}: {source}"))
    }
}

fn require(violations: Vec<String>) -> Result<(), CliError> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(violations))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    require(if path.is_file() { vec![] } else { vec![format!("{what}: {} does not exist", path.display())] })
}

fn build_guidance(cfg: &RunConfig) -> anyhow::Result<Box<dyn Guidance>> {
    Ok(match cfg.guidance.as_ref().expect("validated") {
        GuidanceSpec::Zero => Box::new(ZeroGuidance),
        GuidanceSpec::Oracle(p) => {
            let scene = ply::load(p).with_context(|| format!("reading oracle scene {}", p.display()))?;
            Box::new(OracleGuidance::new(scene))
        }
        GuidanceSpec::Remote(url) => {
            let url = std::env::var(GUIDANCE_URL_ENV).ok().filter(|u| !u.is_empty()).unwrap_or_else(|| url.clone());
            log::info!("remote guidance at {url}");
            Box::new(RemoteGuidance::new(&url, Duration::from_secs_f64(cfg.guidance_timeout)))
        }
    })
}

fn load_reference(cfg: &RunConfig) -> Result<Option<ReferenceInput>, CliError> {
    let Some(path) = cfg.image.as_ref().filter(|_| cfg.mode() == Mode::Image) else { return Ok(None) };
    let image = ImageBuffer::load_png(path).map_err(|e| CliError::Validation(vec![format!("image: {}: {e}", path.display())]))?;
    let reference = ReferenceInput { image, elevation: cfg.reference_elevation };
    reference.validate().map_err(|e| CliError::Validation(vec![format!("image: {e}")]))?;
    Ok(Some(reference))
}

fn create_out(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

fn file_digest(path: &Path) -> String {
    std::fs::read(path).map(|b| hex(&Sha256::digest(&b))).unwrap_or_else(|_| "unreadable".into())
}

/// Resolved config plus provenance comments; valid input for `--config`.
pub fn manifest_text(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# splatgen {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# command: {command}");
    let _ = writeln!(s, "# config_sha256: {}", cfg.digest());
    let mut files: Vec<&Path> = inputs.to_vec();
    files.extend(cfg.image.as_deref());
    if let Some(GuidanceSpec::Oracle(p)) = &cfg.guidance {
        files.push(p);
    }
    for p in files {
        let _ = writeln!(s, "# input {} sha256 {}", p.display(), file_digest(p));
    }
    s + &cfg.to_text()
}

fn write_manifest(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> anyhow::Result<PathBuf> {
    let path = cfg.out.join("manifest.txt");
    std::fs::write(&path, manifest_text(command, cfg, inputs)).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let mut v = cfg.optimization_violations();
    v.extend(cfg.train.violations());
    require(v)?;
    let reference = load_reference(cfg)?;
    let guidance = build_guidance(cfg)?;
    create_out(cfg)?;
    let mut train = cfg.train.clone();
    if train.checkpoint_every > 0 {
        train.checkpoint_dir = Some(cfg.out.join("checkpoints"));
    }
    let out = train_stage1(&train, guidance.as_ref(), reference.as_ref()).map_err(|e| match e {
        TrainError::Config(v) => CliError::Validation(v),
        TrainError::Reference(e) => CliError::Validation(vec![format!("image: {e}")]),
        TrainError::MissingReference => CliError::Validation(vec!["image mode requires an image".into()]),
        TrainError::Guidance { step, source } => guidance_failure(step, source),
        other => CliError::Runtime(other.into()),
    })?;
    let cloud_path = cfg.out.join("cloud.ply");
    ply::save(&out.cloud, &cloud_path).with_context(|| format!("writing {}", cloud_path.display()))?;
    let trace_path = cfg.out.join("trace.csv");
    save_trace_csv(&out.trace, &trace_path).with_context(|| format!("writing {}", trace_path.display()))?;
    write_manifest("generate", cfg, &[])?;
    log::info!("{} Gaussians after {} steps, {} densify events", out.cloud.len(), train.steps, out.events.len());
    Ok(())
}

pub fn extract_mesh(cfg: &RunConfig, ply_path: &Path) -> Result<(), CliError> {
    require_file(ply_path, "cloud")?;
    let mut v = Vec::new();
    if !cfg.threshold.is_finite() {
        v.push(format!("threshold {} must be finite", cfg.threshold));
    }
    if cfg.target_faces < 4 {
        v.push("target_faces must be at least 4".into());
    }
    require(v)?;
    let cloud = ply::load(ply_path).with_context(|| format!("reading {}", ply_path.display()))?;
    let grid = build_grid(&cloud, Culling::Conservative);
    let raw = marching_cubes(&grid, cfg.threshold);
    if raw.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "empty isosurface: density never crosses threshold {} (grid maximum {:.4})",
            cfg.threshold,
            grid.max_value()
        )));
    }
    let (mesh, report) = postprocess(&raw, cfg.target_faces, cfg.smooth_iters);
    create_out(cfg)?;
    let obj = cfg.out.join("mesh.obj");
    save_obj(&mesh, &obj).with_context(|| format!("writing {}", obj.display()))?;
    write_manifest("extract-mesh", cfg, &[ply_path])?;
    let topo = mesh.topology();
    log::info!(
        "{} vertices, {} faces ({} before decimation), {} components, euler characteristic {}",
        topo.vertices,
        topo.faces,
        report.faces_before,
        mesh.face_components().0,
        topo.euler_characteristic()
    );
    Ok(())
}

fn write_refine_csv(rows: &[RefineRow], path: &Path) -> anyhow::Result<()> {
    let mut s = String::from("step,resolution,loss,reference_loss\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.9e},{:.9e}", r.step, r.resolution, r.loss, r.reference_loss);
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn refine(cfg: &RunConfig, ply_path: &Path, obj_path: &Path) -> Result<(), CliError> {
    let mut v = cfg.optimization_violations();
    v.extend(cfg.train.violations());
    v.extend(cfg.refine.violations());
    for (p, what) in [(ply_path, "cloud"), (obj_path, "mesh")] {
        if !p.is_file() {
            v.push(format!("{what}: {} does not exist", p.display()));
        }
    }
    if cfg.texture_resolution < 16 || cfg.bake_resolution < 8 {
        v.push("texture_resolution must be at least 16 and bake_resolution at least 8".into());
    }
    require(v)?;
    let reference = load_reference(cfg)?;
    let guidance = build_guidance(cfg)?;
    let cloud = ply::load(ply_path).with_context(|| format!("reading {}", ply_path.display()))?;
    let mesh = load_obj(obj_path).with_context(|| format!("reading {}", obj_path.display()))?;
    if mesh.is_empty() {
        return Err(CliError::Runtime(anyhow!("{} has no faces", obj_path.display())));
    }
    let atlas = unwrap(&mesh, cfg.texture_resolution);
    let bake = BakeSettings { view_resolution: cfg.bake_resolution, radius: cfg.train.radius, fov_y: cfg.train.fov_y, ..Default::default() };
    let baked = backproject(&mesh, &atlas, &cloud, &bake);
    log::info!("{} charts, {:.1}% texture occupancy", atlas.charts.len(), 100.0 * atlas.occupancy());
    let (texture, rows) =
        refine_texture(&mesh, &atlas, &baked, guidance.as_ref(), &cfg.train, &cfg.refine, reference.as_ref()).map_err(|e| match e {
            RefineError::Config(v) => CliError::Validation(v),
            RefineError::MissingReference => CliError::Validation(vec!["image mode requires an image".into()]),
            RefineError::Guidance { step, source } => guidance_failure(step, source),
            other => CliError::Runtime(other.into()),
        })?;
    create_out(cfg)?;
    let bundle = Bundle::at(&cfg.out, "textured");
    texturer::export(&mesh, &atlas, &texture, &bundle).context("exporting the textured bundle")?;
    write_refine_csv(&rows, &cfg.out.join("refine.csv"))?;
    write_manifest("refine-texture", cfg, &[ply_path, obj_path])?;
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        log::info!("refine loss {:.3e} -> {:.3e} over {} steps", first.loss, last.loss, rows.len());
    }
    Ok(())
}

/// Zero-padded PNG name for view `i` of `n`.
pub fn view_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(3);
    format!("view_{i:0width$}.png")
}

/// Azimuths of `n` evenly spaced views starting at the front.
pub fn view_azimuths(n: usize) -> Vec<f64> {
    (0..n).map(|i| 360.0 * i as f64 / n as f64).collect()
}

pub fn render_views(cfg: &RunConfig, asset: &Path) -> Result<(), CliError> {
    require_file(asset, "asset")?;
    let mut v = Vec::new();
    if cfg.views == 0 {
        v.push("views must be at least 1".into());
    }
    if cfg.render_resolution < 8 {
        v.push("render_resolution must be at least 8".into());
    }
    require(v)?;
    let ext = asset.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let draw: Box<dyn Fn(&Camera) -> ImageBuffer> = match ext.as_deref() {
        Some("ply") => {
            let cloud = ply::load(asset).with_context(|| format!("reading {}", asset.display()))?;
            let bg = cfg.background;
            Box::new(move |c| render(&cloud, c, bg))
        }
        Some("obj") => {
            let (mesh, atlas, tex) = texturer::import(asset).with_context(|| format!("reading {}", asset.display()))?;
            let bg = cfg.background;
            Box::new(move |c| render_mesh(&mesh, &atlas, &tex, c, bg))
        }
        _ => return Err(CliError::Validation(vec![format!("asset {} must be a .ply cloud or a textured .obj", asset.display())])),
    };
    create_out(cfg)?;
    let res = cfg.render_resolution;
    for (i, az) in view_azimuths(cfg.views).into_iter().enumerate() {
        let cam = Camera::orbit(az, 0.0, cfg.train.radius, cfg.train.fov_y, res, res);
        let path = cfg.out.join(view_name(i, cfg.views));
        draw(&cam).save_png(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    write_manifest("render", cfg, &[asset])?;
    log::info!("{} views written to {}", cfg.views, cfg.out.display());
    Ok(())
}
