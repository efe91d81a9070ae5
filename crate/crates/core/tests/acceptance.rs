//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use splatgen_core::guidance::OracleGuidance;
use splatgen_core::meshex::{build_grid, marching_cubes, postprocess, Culling};
use splatgen_core::renderer::{render, render_backward_with, render_with, RenderSettings};
use splatgen_core::scene::{
    ply, reference_view, three_gaussian_scene, Camera, Gaussian, GaussianCloud, TextureImage, TriangleMesh,
};
use splatgen_core::texturer::{
    backproject, export, import, rasterize, refine_texture, render_mesh, unwrap, BakeSettings, Bundle, RefineConfig, UvAtlas,
};
use splatgen_core::trainer::{train_stage1, ReferenceInput, TrainConfig, TrainOutput};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn rasterizer_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let n = 50 * (k as usize + 1);
        let cloud = random_cloud(n, 1000 + k, 0.7, (0.01, 0.1));
        let cam = Camera::orbit(18.0 * k as f64, -20.0 + 3.0 * k as f64, 2.0, 49.0, 96, 80);
        let bg = [0.2, 0.5, 0.8];
        let tiled = render_with(&cloud, &cam, bg, &RenderSettings::default());
        let brute = brute_force_render(&cloud, &cam, bg, 1.0 / 255.0);
        worst = worst.max(max_abs_diff(&tiled, &brute));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        "rasterizer equivalence",
        worst < 1e-4 && secs < 60.0,
        format!("20 clouds of 50..1000 Gaussians, max |diff| {worst:.2e} (< 1e-4), {secs:.1} s (< 60 s)"),
    )
}

fn gradient_correctness() -> Outcome {
    let cloud = random_cloud(20, 4242, 0.4, (0.05, 0.15));
    let cam = Camera::orbit(25.0, 10.0, 2.0, 49.0, 48, 48);
    let bg = [1.0, 0.5, 0.0];
    let settings = RenderSettings::exact();
    let up = random_upstream(48, 48, 9);
    let grads = render_backward_with(&cloud, &cam, bg, &up, &settings).unwrap();
    let loss = linear_loss(&up, &cam, bg, settings);
    let mut worst = [0.0f64; 5];
    let mut checked = 0;
    for i in 0..cloud.len() {
        for (group, (_, dims)) in GROUPS.iter().enumerate() {
            for k in 0..*dims {
                let analytic = match group {
                    0 => grads.center[i][k],
                    1 => grads.scale[i][k],
                    2 => grads.rotation[i][k],
                    3 => grads.opacity[i],
                    _ => grads.color[i][k],
                };
                if analytic.abs() <= 1e-6 {
                    continue;
                }
                checked += 1;
                let fd = central_difference(&cloud, i, group, k, 1e-3, &loss);
                worst[group] = worst[group].max(relative_error(analytic, fd));
            }
        }
    }
    let per: Vec<String> = GROUPS.iter().zip(&worst).map(|((n, _), w)| format!("{n} {w:.1e}")).collect();
    outcome(
        "gradient correctness",
        worst.iter().all(|&w| w < 2e-2),
        format!("{checked} parameters, worst relative error per group: {} (< 2e-2)", per.join(", ")),
    )
}

fn density_grid_fidelity() -> Outcome {
    let cloud = random_cloud(2000, 7, 0.8, (0.01, 0.08));
    let t0 = Instant::now();
    let grid = build_grid(&cloud, Culling::Conservative);
    let block = t0.elapsed();
    let t1 = Instant::now();
    let naive = naive_density_grid(&cloud, 128);
    let brute = t1.elapsed();
    let worst = grid.values.iter().zip(&naive).map(|(a, b)| (f64::from(*a) - b).abs()).fold(0.0, f64::max);
    let speedup = brute.as_secs_f64() / block.as_secs_f64();
    outcome(
        "density grid fidelity",
        naive.len() == 2_097_152 && worst < 1.2e-4 && speedup >= 5.0,
        format!(
            "{} points, max |diff| {worst:.2e} (< 1.2e-4), block {:.2} s vs naive {:.2} s = {speedup:.1}x (>= 5x)",
            naive.len(),
            block.as_secs_f64(),
            brute.as_secs_f64()
        ),
    )
}

fn isosurface_accuracy() -> Outcome {
    let cloud = GaussianCloud::new(vec![Gaussian::isotropic(nalgebra::Vector3::zeros(), 0.25, 3.0, nalgebra::Vector3::repeat(0.5))]);
    let mesh = marching_cubes(&build_grid(&cloud, Culling::Conservative), 1.0);
    let expected = 0.25 * (2.0 * 3f64.ln()).sqrt();
    let spacing = 2.0 / 128.0;
    let worst = mesh.vertices.iter().map(|v| (v.norm() - expected).abs()).fold(0.0, f64::max);
    let topo = mesh.topology();
    outcome(
        "isosurface accuracy",
        !mesh.is_empty() && worst <= spacing && topo.is_closed_manifold() && topo.euler_characteristic() == 2,
        format!(
            "r* {expected:.4}, max radius error {worst:.4} (<= {spacing:.4}), closed manifold {}, euler {}",
            topo.is_closed_manifold(),
            topo.euler_characteristic()
        ),
    )
}

fn held_out_views(size: u32) -> Vec<Camera> {
    (0..8).map(|k| Camera::orbit(22.5 + 45.0 * k as f64, 15.0, 2.0, 49.0, size, size)).collect()
}

struct Stage1 {
    config: TrainConfig,
    reference: ReferenceInput,
    out: TrainOutput,
    elapsed: Duration,
}

fn run_stage1(scene: &GaussianCloud) -> Stage1 {
    let config = TrainConfig::image();
    let reference = ReferenceInput { image: reference_view(scene, 0.0, config.radius, config.fov_y, 512), elevation: 0.0 };
    let t0 = Instant::now();
    let out = train_stage1(&config, &OracleGuidance::new(scene.clone()), Some(&reference)).unwrap();
    Stage1 { config, reference, out, elapsed: t0.elapsed() }
}

fn end_to_end(scene: &GaussianCloud, run: &Stage1) -> Outcome {
    let psnr: Vec<f64> = held_out_views(256)
        .iter()
        .map(|c| render(&run.out.cloud, c, [1.0; 3]).psnr(&render(scene, c, [1.0; 3])))
        .collect();
    let mean = psnr.iter().sum::<f64>() / psnr.len() as f64;
    let secs = run.elapsed.as_secs_f64();
    outcome(
        "end-to-end image-to-3D",
        mean > 25.0 && run.out.events.len() == 5 && secs < 600.0,
        format!(
            "held-out PSNR {mean:.2} dB (> 25, min {:.2}), {} densify/prune events (= 5), {} Gaussians, {secs:.0} s (< 600 s)",
            psnr.iter().cloned().fold(f64::INFINITY, f64::min),
            run.out.events.len(),
            run.out.cloud.len()
        ),
    )
}

fn schedule_conformance(run: &Stage1) -> Outcome {
    let trace = &run.out.trace;
    let last = trace.last().unwrap();
    let lambdas = last.lambda_rgb == 1e4 && last.lambda_alpha == 1e3;
    let t_dec = trace.windows(2).all(|w| w[1].timestep < w[0].timestep);
    let r_mono = trace.windows(2).all(|w| w[1].resolution >= w[0].resolution);
    let ends = (trace[0].resolution, last.resolution);
    outcome(
        "schedule conformance",
        lambdas && t_dec && r_mono && ends == (64, 512) && trace.len() == run.config.steps,
        format!(
            "final lambda_rgb {} lambda_alpha {}, timestep strictly decreasing {t_dec}, resolution non-decreasing {r_mono} {}->{}",
            last.lambda_rgb, last.lambda_alpha, ends.0, ends.1
        ),
    )
}

fn determinism(scene: &GaussianCloud, run: &Stage1) -> Outcome {
    let again = train_stage1(&run.config, &OracleGuidance::new(scene.clone()), Some(&run.reference)).unwrap();
    let (a, b) = (ply::to_bytes(&run.out.cloud).unwrap(), ply::to_bytes(&again.cloud).unwrap());
    outcome("determinism", a == b, format!("two default 500-step runs, seed {}: {} vs {} PLY bytes, identical {}", run.config.seed, a.len(), b.len(), a == b))
}

/// Mean full-image MSE on white against the ground truth, and the MSE of straight colors on
/// pixels both the mesh and the scene cover.
fn texture_error(mesh: &TriangleMesh, atlas: &UvAtlas, tex: &TextureImage, scene: &GaussianCloud) -> (f64, f64) {
    let views = held_out_views(256);
    let (mut full, mut covered) = (0.0, 0.0);
    for c in &views {
        let img = render_mesh(mesh, atlas, tex, c, [1.0; 3]);
        full += img.mse(&render(scene, c, [1.0; 3]));
        let frags = rasterize(mesh, c);
        let gt = render(scene, c, [0.0; 3]).unpremultiplied();
        let (mut e, mut n) = (0.0f64, 0.0f64);
        for i in 0..img.pixel_count() {
            if frags.covered(i) && gt.alpha[i] > 1e-3 {
                e += (0..3).map(|k| (img.rgb[i][k] - gt.rgb[i][k]).powi(2)).sum::<f64>();
                n += 3.0;
            }
        }
        covered += e / n.max(1.0);
    }
    (full / views.len() as f64, covered / views.len() as f64)
}

struct Stage2 {
    mesh: TriangleMesh,
    atlas: UvAtlas,
    refined: TextureImage,
}

fn stage2_efficacy(scene: &GaussianCloud, run: &Stage1) -> (Outcome, Option<Stage2>) {
    let raw = marching_cubes(&build_grid(&run.out.cloud, Culling::Conservative), 1.0);
    if raw.is_empty() {
        return (outcome("stage-2 efficacy", false, "threshold-1 isosurface of the stage-1 cloud is empty".into()), None);
    }
    let (mesh, _) = postprocess(&raw, 50_000, 3);
    let atlas = unwrap(&mesh, 1024);
    let baked = backproject(&mesh, &atlas, &run.out.cloud, &BakeSettings::default());
    let oracle = OracleGuidance::new(scene.clone());
    let (refined, rows) =
        refine_texture(&mesh, &atlas, &baked, &oracle, &run.config, &RefineConfig::default(), Some(&run.reference)).unwrap();
    let (before, before_cov) = texture_error(&mesh, &atlas, &baked, scene);
    let (after, after_cov) = texture_error(&mesh, &atlas, &refined, scene);
    let drop = 1.0 - after / before;
    let detail = format!(
        "{} steps, held-out MSE {before:.5} -> {after:.5} ({:+.1}%, need <= -50%); covered-pixel straight-color MSE {before_cov:.5} -> {after_cov:.5}; \
         mesh {} faces in {} components",
        rows.len(),
        -100.0 * drop,
        mesh.faces.len(),
        mesh.face_components().0
    );
    (outcome("stage-2 efficacy", drop >= 0.5, detail), Some(Stage2 { mesh, atlas, refined }))
}

fn round_trips(run: &Stage1, stage2: Option<&Stage2>) -> Outcome {
    let bytes = ply::to_bytes(&run.out.cloud).unwrap();
    let back = ply::read_cloud(bytes.as_slice()).unwrap();
    let ply_ok = back.gaussians == run.out.cloud.gaussians && ply::to_bytes(&back).unwrap() == bytes;
    let Some(s2) = stage2 else {
        return outcome("round trips", false, format!("PLY lossless {ply_ok}; no mesh to export"));
    };
    let dir = tempfile::tempdir().unwrap();
    let bundle = Bundle::at(dir.path(), "asset");
    export(&s2.mesh, &s2.atlas, &s2.refined, &bundle).unwrap();
    let (mesh, atlas, tex) = import(&bundle.obj).unwrap();
    let mut quantized = s2.refined.clone();
    quantized.quantize();
    let uv = atlas.uvs.iter().flatten().flatten().zip(s2.atlas.uvs.iter().flatten().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let geometry = mesh.faces == s2.mesh.faces && mesh.vertices == s2.mesh.vertices;
    let texture = tex.rgb == quantized.rgb;
    let relative = std::fs::read_to_string(&bundle.mtl).unwrap().contains("map_Kd asset.png");
    outcome(
        "round trips",
        ply_ok && geometry && uv < 1e-6 && texture && relative,
        format!("PLY lossless {ply_ok}; OBJ geometry exact {geometry}, UV max |diff| {uv:.1e} (< 1e-6), PNG texels exact {texture}, relative map_Kd {relative}"),
    )
}

fn main() {
    let mut results = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        results.push(o.pass);
    };
    report(rasterizer_equivalence());
    report(gradient_correctness());
    report(density_grid_fidelity());
    report(isosurface_accuracy());
    let scene = three_gaussian_scene();
    let run = run_stage1(&scene);
    report(end_to_end(&scene, &run));
    report(schedule_conformance(&run));
    let (s2, stage2) = stage2_efficacy(&scene, &run);
    report(s2);
    report(determinism(&scene, &run));
    report(round_trips(&run, stage2.as_ref()));
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
