use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::scene::{edge_key, TriangleMesh};

pub const DEFAULT_TARGET_FACES: usize = 50_000;
pub const DEFAULT_SMOOTH_ITERS: usize = 3;
pub const SMOOTH_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PostprocessReport {
    pub faces_before: usize,
    pub faces_after: usize,
    pub collapses: usize,
    /// Candidate collapses rejected by the link, flip, or boundary tests.
    pub rejected: usize,
    /// Vertices on boundary or non-manifold edges, which are never moved by collapses.
    pub locked_vertices: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    u: u32,
    v: u32,
    stamp: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Min-heap on cost, ties broken by vertex ids for determinism.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| (other.u, other.v).cmp(&(self.u, self.v)))
    }
}

struct Decimator {
    pos: Vec<Vector3<f64>>,
    quadric: Vec<Matrix4<f64>>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
    locked: Vec<bool>,
    stamp: Vec<u32>,
    alive_faces: usize,
}

fn plane_quadric(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Matrix4<f64> {
    let n = (b - a).cross(&(c - a));
    let area2 = n.norm();
    if area2 == 0.0 {
        return Matrix4::zeros();
    }
    let n = n / area2;
    let p = Vector4::new(n.x, n.y, n.z, -n.dot(a));
    p * p.transpose() * (0.5 * area2)
}

fn quadric_error(q: &Matrix4<f64>, x: &Vector3<f64>) -> f64 {
    let h = Vector4::new(x.x, x.y, x.z, 1.0);
    (h.transpose() * q * h)[0].max(0.0)
}

impl Decimator {
    fn new(mesh: &TriangleMesh) -> Self {
        let n = mesh.vertices.len();
        let mut quadric = vec![Matrix4::zeros(); n];
        let mut vertex_faces = vec![Vec::new(); n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            let q = plane_quadric(&a, &b, &c);
            for &v in f {
                quadric[v as usize] += q;
                vertex_faces[v as usize].push(fi as u32);
            }
        }
        let mut locked = vec![false; n];
        for ((a, b), count) in mesh.edge_face_counts() {
            if count != 2 {
                locked[a as usize] = true;
                locked[b as usize] = true;
            }
        }
        Self {
            pos: mesh.vertices.clone(),
            quadric,
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.faces.len()],
            vertex_faces,
            locked,
            stamp: vec![0; n],
            alive_faces: mesh.faces.len(),
        }
    }

    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut out: Vec<u32> = self.vertex_faces[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn placement(&self, u: u32, v: u32) -> (Vector3<f64>, f64) {
        let q = self.quadric[u as usize] + self.quadric[v as usize];
        let a: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into_owned();
        let b = Vector3::new(q[(0, 3)], q[(1, 3)], q[(2, 3)]);
        let (pu, pv) = (self.pos[u as usize], self.pos[v as usize]);
        let mut best = [pu, pv, (pu + pv) * 0.5]
            .into_iter()
            .map(|x| (x, quadric_error(&q, &x)))
            .fold((pu, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        let scale = a.norm();
        if scale > 0.0 && a.determinant().abs() > 1e-12 * scale.powi(3) {
            if let Some(inv) = a.try_inverse() {
                let x = -(inv * b);
                // Reject solutions that wander far from the edge.
                if (x - (pu + pv) * 0.5).norm() <= 2.0 * (pu - pv).norm() {
                    let e = quadric_error(&q, &x);
                    if e <= best.1 {
                        best = (x, e);
                    }
                }
            }
        }
        best
    }

    fn candidate(&self, u: u32, v: u32) -> Candidate {
        let (u, v) = edge_key(u, v);
        let (_, cost) = self.placement(u, v);
        Candidate { cost, u, v, stamp: (self.stamp[u as usize], self.stamp[v as usize]) }
    }

    /// Link condition plus face-flip and degeneracy tests for collapsing `v` into `u` at `x`.
    fn is_safe(&self, u: u32, v: u32, x: &Vector3<f64>) -> bool {
        if self.locked[u as usize] || self.locked[v as usize] {
            return false;
        }
        let shared: Vec<u32> =
            self.vertex_faces[u as usize].iter().copied().filter(|f| self.faces[*f as usize].contains(&v)).collect();
        if shared.len() != 2 {
            return false;
        }
        let nu = self.neighbors(u);
        let nv = self.neighbors(v);
        let common = nu.iter().filter(|w| nv.binary_search(w).is_ok()).count();
        if common != 2 {
            return false;
        }
        for &w in [u, v].iter() {
            for &f in &self.vertex_faces[w as usize] {
                let face = self.faces[f as usize];
                if face.contains(&u) && face.contains(&v) {
                    continue;
                }
                let old = face.map(|i| self.pos[i as usize]);
                let new = face.map(|i| if i == u || i == v { *x } else { self.pos[i as usize] });
                let n0 = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n1 = (new[1] - new[0]).cross(&(new[2] - new[0]));
                if n1.norm() <= 1e-12 * n0.norm().max(f64::MIN_POSITIVE) || n0.dot(&n1) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, u: u32, v: u32, x: Vector3<f64>) {
        self.pos[u as usize] = x;
        self.quadric[u as usize] = self.quadric[u as usize] + self.quadric[v as usize];
        let moved = std::mem::take(&mut self.vertex_faces[v as usize]);
        for f in moved {
            let face = &mut self.faces[f as usize];
            if face.contains(&u) {
                let face = *face;
                self.face_alive[f as usize] = false;
                self.alive_faces -= 1;
                for w in face {
                    if w != v {
                        self.vertex_faces[w as usize].retain(|&g| g != f);
                    }
                }
            } else {
                for i in face.iter_mut() {
                    if *i == v {
                        *i = u;
                    }
                }
                self.vertex_faces[u as usize].push(f);
            }
        }
        self.stamp[u as usize] += 1;
        self.stamp[v as usize] = u32::MAX;
        for w in self.neighbors(u) {
            self.stamp[w as usize] += 1;
        }
    }

    fn into_mesh(self) -> TriangleMesh {
        let faces = self.faces.iter().zip(&self.face_alive).filter(|(_, &a)| a).map(|(f, _)| *f).collect();
        let mut mesh = TriangleMesh::new(self.pos, faces);
        mesh.compact();
        mesh
    }
}

/// Quadric-error edge collapse until at most `target_faces` remain or no safe collapse is left.
pub fn decimate(mesh: &TriangleMesh, target_faces: usize) -> (TriangleMesh, PostprocessReport) {
    let mut report = PostprocessReport { faces_before: mesh.faces.len(), faces_after: mesh.faces.len(), ..Default::default() };
    if mesh.faces.len() <= target_faces {
        return (mesh.clone(), report);
    }
    let mut d = Decimator::new(mesh);
    report.locked_vertices = d.locked.iter().filter(|&&l| l).count();
    let mut heap = BinaryHeap::new();
    let mut seen = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let e = edge_key(f[k], f[(k + 1) % 3]);
            seen.entry(e).or_insert_with(|| heap.push(d.candidate(e.0, e.1)));
        }
    }
    while d.alive_faces > target_faces {
        let Some(c) = heap.pop() else { break };
        if c.stamp != (d.stamp[c.u as usize], d.stamp[c.v as usize]) {
            continue;
        }
        let (x, _) = d.placement(c.u, c.v);
        if !d.is_safe(c.u, c.v, &x) {
            report.rejected += 1;
            continue;
        }
        d.collapse(c.u, c.v, x);
        report.collapses += 1;
        // Every neighbor's stamp moved, so all edges around u and its ring are requeued.
        let ring = d.neighbors(c.u);
        for &w in &ring {
            heap.push(d.candidate(c.u, w));
            for z in d.neighbors(w) {
                if z != c.u {
                    heap.push(d.candidate(w, z));
                }
            }
        }
    }
    let out = d.into_mesh();
    report.faces_after = out.faces.len();
    (out, report)
}

/// Uniform Laplacian smoothing `x ← x + λ (mean(neighbors) − x)`; boundary vertices stay fixed.
pub fn laplacian_smooth(mesh: &TriangleMesh, iterations: usize, lambda: f64) -> TriangleMesh {
    let mut out = mesh.clone();
    if iterations == 0 {
        return out;
    }
    let mut neighbors = vec![Vec::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            neighbors[a as usize].push(b);
            neighbors[b as usize].push(a);
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    let mut fixed = vec![false; mesh.vertices.len()];
    for ((a, b), count) in mesh.edge_face_counts() {
        if count != 2 {
            fixed[a as usize] = true;
            fixed[b as usize] = true;
        }
    }
    for _ in 0..iterations {
        let prev = out.vertices.clone();
        for (i, v) in out.vertices.iter_mut().enumerate() {
            if fixed[i] || neighbors[i].is_empty() {
                continue;
            }
            let mean = neighbors[i].iter().map(|&j| prev[j as usize]).sum::<Vector3<f64>>() / neighbors[i].len() as f64;
            *v = prev[i] + (mean - prev[i]) * lambda;
        }
    }
    out.compute_normals();
    out
}

/// Decimation followed by `smooth_iters` rounds of Laplacian smoothing.
pub fn postprocess(mesh: &TriangleMesh, target_faces: usize, smooth_iters: usize) -> (TriangleMesh, PostprocessReport) {
    let (decimated, report) = decimate(mesh, target_faces);
    (laplacian_smooth(&decimated, smooth_iters, SMOOTH_LAMBDA), report)
}
