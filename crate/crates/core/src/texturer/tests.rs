use super::*;
use crate::guidance::{OracleGuidance, ZeroGuidance};
use crate::scene::{Camera, Gaussian, GaussianCloud, SignedImage, TextureImage, TriangleMesh};
use crate::trainer::TrainConfig;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cube() -> TriangleMesh {
    let v: Vec<Vector3<f64>> = (0..8)
        .map(|i| Vector3::new(f64::from(i & 1), f64::from((i >> 1) & 1), f64::from((i >> 2) & 1)) * 0.8 - Vector3::repeat(0.4))
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh::new(v, faces)
}

fn sphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let mut m = crate::meshex::tests::icosphere(subdivisions);
    m.vertices.iter_mut().for_each(|v| *v *= radius);
    m.compute_normals();
    m
}

fn random_texture(res: u32, seed: u64) -> TextureImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = TextureImage::new(res);
    t.rgb.iter_mut().for_each(|c| *c = std::array::from_fn(|_| rng.random()));
    t
}

#[test]
fn cube_unwraps_to_six_equal_square_charts() {
    let mesh = cube();
    let atlas = unwrap(&mesh, 256);
    assert_eq!(atlas.charts.len(), 6);
    let areas: Vec<f64> = atlas.charts.iter().map(|c| c.faces.iter().map(|&f| atlas.uv_area(f as usize)).sum()).collect();
    for c in &atlas.charts {
        assert_eq!(c.rect[2], c.rect[3]);
    }
    for a in &areas {
        assert!((a - areas[0]).abs() < 1e-6);
    }
    assert!(atlas.occupancy() >= 0.4, "{}", atlas.occupancy());
}

#[test]
fn sphere_distortion_and_occupancy() {
    let mesh = sphere(0.37, 4);
    let atlas = unwrap(&mesh, 1024);
    let mut ratios: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.face_area(f) / atlas.uv_area(f)).collect();
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!(ratios.iter().all(|r| *r <= 2.0 * median && *r >= 0.5 * median));
    assert!(atlas.occupancy() >= 0.4, "{}", atlas.occupancy());
    assert!(atlas.uvs.iter().flatten().flatten().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn chart_masks_are_disjoint() {
    let atlas = unwrap(&sphere(0.37, 3), 512);
    let grown = |c: &Chart| {
        let [x, y, w, h] = c.rect;
        (x as i64 - 2, y as i64 - 2, (x + w) as i64 + 2, (y + h) as i64 + 2)
    };
    for (i, a) in atlas.charts.iter().enumerate() {
        for b in &atlas.charts[i + 1..] {
            let (a0, a1, a2, a3) = grown(a);
            let (b0, b1, b2, b3) = grown(b);
            assert!(a2 <= b0 || b2 <= a0 || a3 <= b1 || b3 <= a1, "{:?} {:?}", a.rect, b.rect);
        }
    }
    let labels = chart_labels(&atlas, 1.5);
    let r = atlas.resolution as usize;
    for (t, &l) in labels.iter().enumerate() {
        if l == u32::MAX {
            continue;
        }
        let (x, y) = ((t % r) as i64, (t / r) as i64);
        let (x0, y0, x1, y1) = grown(&atlas.charts[l as usize]);
        assert!(x >= x0 && x < x1 && y >= y0 && y < y1);
    }
}

#[test]
fn constant_texture_renders_constant_with_binary_alpha() {
    let mesh = sphere(0.4, 3);
    let atlas = unwrap(&mesh, 128);
    let mut tex = TextureImage::new(128);
    tex.rgb.iter_mut().for_each(|c| *c = [0.2, 0.6, 0.9]);
    let cam = Camera::orbit(30.0, 10.0, 2.0, 49.0, 96, 96);
    let img = render_mesh(&mesh, &atlas, &tex, &cam, [1.0, 0.0, 0.0]);
    for (c, &a) in img.rgb.iter().zip(&img.alpha) {
        assert!(a == 0.0 || a == 1.0);
        let expect = if a == 1.0 { [0.2, 0.6, 0.9] } else { [1.0, 0.0, 0.0] };
        for k in 0..3 {
            assert!((c[k] - expect[k]).abs() < 1e-12);
        }
    }
    let covered = img.alpha.iter().filter(|&&a| a == 1.0).count();
    assert!(covered > 1000);
}

#[test]
fn texture_gradient_matches_finite_differences() {
    assert!(fd_texels(16) > 0);
    let checked = fd_texels(48);
    assert!(checked >= 100, "{checked}");
}

/// Central-difference check of every texel channel; returns how many texels had a gradient.
fn fd_texels(res: u32) -> usize {
    let mesh = cube();
    let atlas = unwrap(&mesh, res);
    let tex = random_texture(res, 1);
    let cams = [Camera::orbit(35.0, 25.0, 2.0, 49.0, 64, 64), Camera::orbit(215.0, -25.0, 2.0, 49.0, 64, 64)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ups: Vec<SignedImage> = cams
        .iter()
        .map(|_| {
            let mut up = SignedImage::zeros(64, 64);
            up.data.iter_mut().for_each(|g| *g = std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            up
        })
        .collect();
    let loss = |t: &TextureImage| {
        let mut total = 0.0;
        for (cam, up) in cams.iter().zip(&ups) {
            let img = render_mesh(&mesh, &atlas, t, cam, [0.0; 3]);
            total += img.rgb.iter().zip(&up.data).map(|(c, g)| (0..3).map(|k| c[k] * g[k]).sum::<f64>()).sum::<f64>();
        }
        total
    };
    let n = (res * res) as usize;
    let mut grad = vec![[0.0; 3]; n];
    for (cam, up) in cams.iter().zip(&ups) {
        for (g, d) in grad.iter_mut().zip(texture_gradient(&rasterize(&mesh, cam), &atlas, up)) {
            for k in 0..3 {
                g[k] += d[k];
            }
        }
    }
    let mut texels = 0;
    for t in 0..n {
        let mut any = false;
        for k in 0..3 {
            let h = 1e-3;
            let mut p = tex.clone();
            p.rgb[t][k] += h;
            let mut m = tex.clone();
            m.rgb[t][k] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let g = grad[t][k];
            if g.abs() > 1e-6 {
                assert!((fd - g).abs() / g.abs().max(fd.abs()) < 1e-2, "texel {t} {k}: {fd} vs {g}");
                any = true;
            } else {
                assert!(fd.abs() < 1e-6);
            }
        }
        texels += usize::from(any);
    }
    texels
}

#[test]
fn uniform_red_cloud_bakes_red() {
    let mesh = sphere(0.3, 3);
    let atlas = unwrap(&mesh, 256);
    let gs = mesh
        .vertices
        .iter()
        .map(|v| Gaussian::isotropic(v.cast(), 0.05, 0.8, Vector3::new(1.0, 0.0, 0.0)))
        .collect();
    let cloud = GaussianCloud::new(gs);
    let settings = BakeSettings { view_resolution: 192, ..Default::default() };
    let tex = backproject(&mesh, &atlas, &cloud, &settings);
    let valid = tex.valid.iter().filter(|&&v| v).count();
    assert!(valid > 1000);
    for (c, _) in tex.rgb.iter().zip(&tex.valid).filter(|(_, &v)| v) {
        assert!((c[0] - 1.0).abs() < 1.0 / 255.0 && c[1].abs() < 1.0 / 255.0 && c[2].abs() < 1.0 / 255.0, "{c:?}");
    }
    assert_eq!(bake_cameras(&settings).len(), 26);
}

#[test]
fn two_view_blend_is_weighted_mean() {
    let (w1, c1, w2, c2) = (0.8, [0.9, 0.1, 0.3], 0.3, [0.2, 0.7, 0.5]);
    let tex = accumulate(4, &[vec![(5, w1, c1)], vec![(5, w2, c2)]], 0);
    for k in 0..3 {
        assert!((tex.rgb[5][k] - (w1 * c1[k] + w2 * c2[k]) / (w1 + w2)).abs() < 1e-15);
    }
    assert!(tex.valid[5] && !tex.valid[4]);
    assert_eq!(tex.rgb[4], crate::scene::TEXTURE_FILL);
}

#[test]
fn dilation_grows_one_ring_per_pass() {
    let mut tex = TextureImage::new(9);
    let c = tex.index(4, 4);
    tex.rgb[c] = [1.0, 0.0, 0.0];
    tex.valid[c] = true;
    dilate(&mut tex, 2);
    assert_eq!(tex.rgb[tex.index(6, 6)], [1.0, 0.0, 0.0]);
    assert_eq!(tex.rgb[tex.index(7, 4)], crate::scene::TEXTURE_FILL);
}

#[test]
fn grazing_face_gets_no_direct_samples() {
    // A thin horizontal quad viewed from elevation 3 degrees.
    let v = vec![
        Vector3::new(-0.5, 0.0, -0.5),
        Vector3::new(0.5, 0.0, -0.5),
        Vector3::new(0.5, 0.0, 0.5),
        Vector3::new(-0.5, 0.0, 0.5),
    ];
    let mesh = TriangleMesh::new(v, vec![[0, 2, 1], [0, 3, 2]]);
    let atlas = unwrap(&mesh, 64);
    let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.4, 0.9, Vector3::new(0.0, 1.0, 0.0))]);
    let cam = Camera::orbit(0.0, 3.0, 2.0, 49.0, 128, 128);
    let frags = rasterize(&mesh, &cam);
    assert!(frags.face.iter().any(|&f| f != NO_FACE));
    let samples = view_samples(&mesh, &atlas, &cloud, &cam, &BakeSettings::default());
    assert!(samples.is_empty());
    let top = Camera::orbit(0.0, 60.0, 2.0, 49.0, 128, 128);
    assert!(!view_samples(&mesh, &atlas, &cloud, &top, &BakeSettings::default()).is_empty());
}

fn small_refine(steps: usize) -> RefineConfig {
    RefineConfig { steps, resolution_range: (48, 96), ..Default::default() }
}

#[test]
fn identity_refiner_is_a_fixed_point() {
    let mesh = sphere(0.35, 3);
    let atlas = unwrap(&mesh, 128);
    let tex = random_texture(128, 5);
    let (out, trace) =
        refine_texture(&mesh, &atlas, &tex, &ZeroGuidance, &TrainConfig::text("x"), &small_refine(50), None).unwrap();
    assert_eq!(trace.len(), 50);
    assert!(trace.iter().all(|r| r.loss == 0.0));
    assert_eq!(out, tex);
}

#[test]
fn oracle_refinement_keeps_range_and_gutters() {
    let mesh = sphere(0.35, 3);
    let atlas = unwrap(&mesh, 128);
    let tex = random_texture(128, 6);
    let gt = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.25, 0.95, Vector3::new(0.9, 0.4, 0.1))]);
    let oracle = OracleGuidance::new(gt);
    let (out, trace) =
        refine_texture(&mesh, &atlas, &tex, &oracle, &TrainConfig::text("x"), &small_refine(12), None).unwrap();
    assert_eq!(trace.len(), 12);
    assert!(out.rgb.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let mask = atlas.chart_mask();
    let mut changed = 0;
    for (t, &inside) in mask.iter().enumerate() {
        if inside {
            changed += usize::from(out.rgb[t] != tex.rgb[t]);
        } else {
            assert_eq!(out.rgb[t], tex.rgb[t], "gutter texel {t} moved");
        }
    }
    assert!(changed > 0);
    assert!(trace.last().unwrap().loss < trace[0].loss);
}

#[test]
fn refine_reports_guidance_step() {
    let mesh = sphere(0.35, 2);
    let atlas = unwrap(&mesh, 64);
    let tex = TextureImage::new(64);
    let bad = OracleGuidance { blend: Some(2.0), ..OracleGuidance::new(GaussianCloud::new(Vec::new())) };
    match refine_texture(&mesh, &atlas, &tex, &bad, &TrainConfig::text("x"), &small_refine(3), None) {
        Err(RefineError::Guidance { step: 0, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        refine_texture(&mesh, &atlas, &tex, &ZeroGuidance, &TrainConfig::image(), &small_refine(3), None),
        Err(RefineError::MissingReference)
    ));
}

#[test]
fn export_import_round_trip() {
    let mesh = cube();
    let atlas = unwrap(&mesh, 64);
    let mut tex = random_texture(64, 9);
    tex.quantize();
    let dir = tempfile::tempdir().unwrap();
    let bundle = Bundle::at(dir.path(), "cube");
    export(&mesh, &atlas, &tex, &bundle).unwrap();
    let mtl = std::fs::read_to_string(&bundle.mtl).unwrap();
    assert!(mtl.lines().any(|l| l == "map_Kd cube.png"));
    let (m2, a2, t2) = import(&bundle.obj).unwrap();
    assert_eq!(m2.faces, mesh.faces);
    assert_eq!(m2.vertices, mesh.vertices);
    let du = atlas.uvs.iter().flatten().flatten().zip(a2.uvs.iter().flatten().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(du < 1e-6);
    assert_eq!(t2.rgb, tex.rgb);
    let cam = Camera::orbit(30.0, 20.0, 2.0, 49.0, 64, 64);
    let before = render_mesh(&mesh, &atlas, &tex, &cam, [0.0; 3]);
    let after = render_mesh(&m2, &a2, &t2, &cam, [0.0; 3]);
    let worst = before.rgb.iter().flatten().zip(after.rgb.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1.0 / 255.0);
}
