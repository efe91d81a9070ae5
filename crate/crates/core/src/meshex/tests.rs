use super::*;
use crate::scene::Gaussian;
use nalgebra::{Rotation3, Unit, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere_cloud() -> GaussianCloud {
    GaussianCloud::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.25, 3.0, Vector3::repeat(0.5))])
}

fn random_cloud(n: usize, seed: u64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gs = (0..n)
        .map(|_| {
            let q = Vector4::from_fn(|_, _| rng.random_range(-1.0f32..1.0));
            Gaussian {
                center: Vector3::from_fn(|_, _| rng.random_range(-0.8..0.8)),
                scale: Vector3::from_fn(|_, _| rng.random_range(0.02..0.15)),
                rotation: q,
                opacity: rng.random_range(0.05..1.0),
                color: Vector3::repeat(0.5),
            }
        })
        .collect();
    GaussianCloud::new(gs)
}

pub(crate) fn icosphere(subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::from(*p).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2],
        [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5],
        [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let m = [0, 1, 2].map(|k| {
                let key = crate::scene::edge_key(tri[k], tri[(k + 1) % 3]);
                *mid.entry(key).or_insert_with(|| {
                    v.push(((v[key.0 as usize] + v[key.1 as usize]) / 2.0).normalize());
                    (v.len() - 1) as u32
                })
            });
            next.extend([[tri[0], m[0], m[2]], [tri[1], m[1], m[0]], [tri[2], m[2], m[1]], m]);
        }
        f = next;
    }
    TriangleMesh::new(v, f)
}

#[test]
fn density_at_center_and_one_sigma() {
    let k = kernels(&GaussianCloud::new(vec![Gaussian::isotropic(Vector3::new(0.1, 0.2, 0.3), 0.1, 0.8, Vector3::zeros())]));
    assert!((density_at(&Vector3::new(0.1, 0.2, 0.3), &k) - 0.8).abs() < 1e-7);
    let d = density_at(&Vector3::new(0.1, 0.3, 0.3), &k);
    assert!((d - 0.8 * (-0.5f64).exp()).abs() < 1e-6, "{d}");
}

#[test]
fn density_matches_naive_sum() {
    let cloud = random_cloud(50, 1);
    let ks = kernels(&cloud);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let mut naive = 0.0;
        for g in &cloud.gaussians {
            let q = crate::scene::normalize_quat(&g.rotation.cast());
            let r = crate::scene::quat_to_matrix(&q);
            let local = r.transpose() * (x - g.center.cast::<f64>());
            let s: Vector3<f64> = g.scale.cast();
            let m: f64 = (0..3).map(|i| (local[i] / s[i]).powi(2)).sum();
            naive += f64::from(g.opacity) * (-0.5 * m).exp();
        }
        assert!((density_at(&x, &ks) - naive).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn density_is_rotation_invariant(seed in 0u64..1000, axis in prop::array::uniform3(-1.0f64..1.0), angle in -3.1f64..3.1) {
        prop_assume!(Vector3::from(axis).norm() > 0.1);
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let qv = Vector4::new(q.w, q.i, q.j, q.k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<DensityKernel> = (0..5).map(|_| {
            let c = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let s = Vector3::from_fn(|_, _| rng.random_range(0.05..0.3));
            let r = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            (c, s, r, rng.random_range(0.1..1.0))
        })
        .map(|(c, s, r, o)| DensityKernel::new(c, s, &r, o))
        .collect();
        let rotated: Vec<DensityKernel> = base.iter().map(|k| {
            let mut out = *k;
            out.center = rot * k.center;
            out.precision = rot.matrix() * k.precision * rot.matrix().transpose();
            out
        }).collect();
        // Rotating through the quaternion path as a second check.
        let x = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let composed = crate::scene::quat_to_matrix(&qv);
        prop_assert!((composed - rot.matrix()).norm() < 1e-9);
        prop_assert!((density_at(&x, &base) - density_at(&(rot * x), &rotated)).abs() < 1e-8);
    }
}

#[test]
fn rotation_invariance_through_gaussian_parameters() {
    let c0 = Vector3::new(0.1, -0.2, 0.05);
    let s = Vector3::new(0.1, 0.2, 0.05);
    let q0 = Vector4::new(0.8, 0.1, -0.3, 0.2).normalize();
    let rot = nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1);
    let q0u = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q0[0], q0[1], q0[2], q0[3]));
    let q1 = rot * q0u;
    let k0 = DensityKernel::new(c0, s, &q0, 0.7);
    let k1 = DensityKernel::new(rot * c0, s, &Vector4::new(q1.w, q1.i, q1.j, q1.k), 0.7);
    let x = Vector3::new(0.15, -0.1, 0.0);
    assert!((k0.eval(&x) - k1.eval(&(rot * x))).abs() < 1e-8);
}

#[test]
fn empty_cloud_gives_zero_grid_and_empty_mesh() {
    let g = build_grid(&GaussianCloud::new(Vec::new()), Culling::Conservative);
    assert_eq!(g.values.len(), 128usize.pow(3));
    assert!(g.values.iter().all(|&v| v == 0.0));
    assert!(marching_cubes(&g, 1.0).is_empty());
}

#[test]
fn tiny_gaussian_stays_local() {
    let center = Vector3::new(grid_coord(20, 128), grid_coord(83, 128), grid_coord(51, 128));
    let cloud = GaussianCloud::new(vec![Gaussian::isotropic(center.cast(), 0.005, 0.9, Vector3::zeros())]);
    let g = build_grid(&cloud, Culling::Conservative);
    let lists = partition(&kernels(&cloud), Culling::Conservative);
    assert_eq!(lists.iter().filter(|l| !l.is_empty()).count(), 1);
    for z in 0..128 {
        for y in 0..128 {
            for x in 0..128 {
                let v = g.values[g.index(x, y, z)];
                let far = (x / 8, y / 8, z / 8) != (2, 10, 6);
                assert!(!(far && v > 0.0));
            }
        }
    }
    assert!((g.values[g.index(20, 83, 51)] - 0.9).abs() < 1e-6);
}

#[test]
fn block_grid_matches_brute_force_on_small_cloud() {
    let cloud = random_cloud(60, 7);
    let ks = kernels(&cloud);
    let g = build_grid(&cloud, Culling::Conservative);
    let mut worst = 0.0f64;
    for i in (0..g.values.len()).step_by(97) {
        let (x, y, z) = (i % 128, (i / 128) % 128, i / (128 * 128));
        worst = worst.max((g.values[i] - density_at(&g.point(x, y, z), &ks)).abs());
    }
    assert!(worst < 1.2e-4, "{worst}");
}

#[test]
fn center_only_culling_drops_straddling_support() {
    let cloud = GaussianCloud::new(vec![Gaussian::isotropic(Vector3::new(0.001, 0.001, 0.001), 0.1, 1.0, Vector3::zeros())]);
    let ks = kernels(&cloud);
    let conservative = partition(&ks, Culling::Conservative);
    let center = partition(&ks, Culling::CenterOnly);
    assert_eq!(center.iter().filter(|l| !l.is_empty()).count(), 1);
    assert!(conservative.iter().filter(|l| !l.is_empty()).count() > 8);
}

#[test]
fn sphere_isosurface_radius_topology_and_orientation() {
    let g = build_grid(&sphere_cloud(), Culling::Conservative);
    let mesh = marching_cubes(&g, 1.0);
    let r_star = 0.25 * (2.0 * 3f64.ln()).sqrt();
    for v in &mesh.vertices {
        assert!((v.norm() - r_star).abs() <= g.spacing(), "{}", v.norm());
    }
    let topo = mesh.topology();
    assert!(topo.is_closed_manifold());
    assert_eq!(topo.euler_characteristic(), 2);
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.face_positions(f);
        let centroid = (a + b + c) / 3.0;
        assert!(mesh.face_normal_raw(f).dot(&centroid) > 0.0, "face {f} points inward");
    }
    assert!(mesh.has_valid_indices());
    assert_eq!(marching_cubes(&g, 1.0), mesh);
}

#[test]
fn icosphere_decimation_keeps_shape() {
    let ico = icosphere(5);
    assert_eq!(ico.faces.len(), 20480);
    let (out, report) = decimate(&ico, 5000);
    assert!(out.faces.len() <= 5000, "{:?}", report);
    let worst = out.vertices.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 0.02, "{worst}");
    let topo = out.topology();
    assert!(topo.is_closed_manifold());
    assert_eq!(topo.euler_characteristic(), 2);
    assert!((0..out.faces.len()).all(|f| out.face_area(f) > 0.0));
}

#[test]
fn smoothing_reduces_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noisy = icosphere(4);
    for v in &mut noisy.vertices {
        *v *= 1.0 + rng.random_range(-0.03..0.03);
    }
    let rms = |m: &TriangleMesh| (m.vertices.iter().map(|v| (v.norm() - 1.0).powi(2)).sum::<f64>() / m.vertices.len() as f64).sqrt();
    let smooth = laplacian_smooth(&noisy, 3, SMOOTH_LAMBDA);
    assert!(rms(&smooth) < rms(&noisy) * 0.7, "{} {}", rms(&smooth), rms(&noisy));
}

#[test]
fn postprocess_no_op() {
    let ico = icosphere(2);
    let (out, report) = postprocess(&ico, 10_000, 0);
    assert_eq!(out, ico);
    assert_eq!(report.collapses, 0);
}

#[test]
fn open_mesh_boundary_is_kept() {
    let mut ico = icosphere(3);
    ico.faces.retain(|f| f.iter().all(|&v| ico.vertices[v as usize].z > -0.5));
    ico.compact();
    let before = ico.topology().boundary_edges;
    let (out, report) = decimate(&ico, 200);
    assert!(report.locked_vertices > 0);
    assert_eq!(out.topology().boundary_edges, before);
    assert_eq!(out.topology().nonmanifold_edges, 0);
}

#[test]
fn obj_export_lists_every_element() {
    let ico = icosphere(1);
    let mut buf = Vec::new();
    write_obj(&ico, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), ico.vertices.len());
    assert_eq!(text.lines().filter(|l| l.starts_with("vn ")).count(), ico.vertices.len());
    assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 80);
}

#[test]
fn obj_round_trip_is_exact() {
    let mut ico = icosphere(2);
    for v in &mut ico.vertices {
        *v *= 0.1 + 1.0 / 3.0;
    }
    let mut buf = Vec::new();
    write_obj(&ico, &mut buf).unwrap();
    let back = read_obj(buf.as_slice()).unwrap();
    assert_eq!(back.vertices, ico.vertices);
    assert_eq!(back.faces, ico.faces);
}

#[test]
fn obj_reader_rejects_bad_faces() {
    let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
    assert!(matches!(read_obj(quad.as_bytes()), Err(ObjError::Parse { line: 5, .. })));
    let range = "v 0 0 0\nf 1 2 3\n";
    assert!(matches!(read_obj(range.as_bytes()), Err(ObjError::Parse { line: 2, .. })));
    let slashes = read_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1/1 2/1/1 3/1/1\n".as_bytes()).unwrap();
    assert_eq!(slashes.faces, vec![[0, 1, 2]]);
}
