//! Indexed triangle meshes and UV textures.

use std::collections::HashMap;

use nalgebra::Vector3;

/// Indexed triangle mesh with per-vertex normals and optional per-corner UVs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vector3<f64>>,
    /// Per-corner UVs, one entry per face. Empty until the mesh is unwrapped.
    pub uvs: Vec<[[f64; 2]; 3]>,
}

/// Counts used for topology checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    /// Edges used by exactly one face.
    pub boundary_edges: usize,
    /// Edges used by three or more faces.
    pub nonmanifold_edges: usize,
}

impl Topology {
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }

    pub fn is_closed_manifold(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0
    }
}

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Self {
        let mut mesh = Self { vertices, faces, normals: Vec::new(), uvs: Vec::new() };
        mesh.compute_normals();
        mesh
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_positions(&self, f: usize) -> [Vector3<f64>; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_normal_raw(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_positions(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_normal_raw(f).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted vertex normals.
    pub fn compute_normals(&mut self) {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let n = self.face_normal_raw(f);
            for &v in &self.faces[f] {
                normals[v as usize] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            *n = if len > 0.0 { *n / len } else { Vector3::z() };
        }
        self.normals = normals;
    }

    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                *counts.entry(edge_key(f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn topology(&self) -> Topology {
        let counts = self.edge_face_counts();
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v as usize] = true;
            }
        }
        Topology {
            vertices: used.iter().filter(|&&u| u).count(),
            edges: counts.len(),
            faces: self.faces.len(),
            boundary_edges: counts.values().filter(|&&c| c == 1).count(),
            nonmanifold_edges: counts.values().filter(|&&c| c > 2).count(),
        }
    }

    pub fn has_valid_indices(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.faces.iter().all(|f| f.iter().all(|&v| v < n))
    }

    /// Drops faces with repeated indices or area below `min_area`, then unused vertices.
    pub fn remove_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.faces[f];
                a != b && b != c && a != c && self.face_area(f) > min_area
            })
            .collect();
        let mut k = keep.iter();
        self.faces.retain(|_| *k.next().unwrap());
        if !self.uvs.is_empty() {
            let mut k = keep.iter();
            self.uvs.retain(|_| *k.next().unwrap());
        }
        self.compact();
    }

    /// Removes unreferenced vertices, preserving the order of the survivors.
    pub fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for f in &mut self.faces {
            for v in f.iter_mut() {
                let old = *v as usize;
                if remap[old] == u32::MAX {
                    remap[old] = vertices.len() as u32;
                    vertices.push(self.vertices[old]);
                }
                *v = remap[old];
            }
        }
        self.vertices = vertices;
        self.compute_normals();
    }

    /// Splits the faces into edge-connected components; returns a component id per face.
    pub fn face_components(&self) -> (usize, Vec<usize>) {
        let mut parent: Vec<usize> = (0..self.faces.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut first: HashMap<(u32, u32), usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let e = edge_key(f[k], f[(k + 1) % 3]);
                if let Some(&other) = first.get(&e) {
                    let (a, b) = (find(&mut parent, fi), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                } else {
                    first.insert(e, fi);
                }
            }
        }
        let mut ids = HashMap::new();
        let comp = (0..self.faces.len())
            .map(|f| {
                let root = find(&mut parent, f);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect();
        (ids.len(), comp)
    }

    /// Keeps only the faces of the component with the largest surface area.
    pub fn keep_largest_component(&mut self) -> usize {
        let (n, comp) = self.face_components();
        if n <= 1 {
            return 0;
        }
        let mut area = vec![0.0; n];
        for (f, &c) in comp.iter().enumerate() {
            area[c] += self.face_area(f);
        }
        let best = (0..n).fold(0, |b, c| if area[c] > area[b] { c } else { b });
        let mut it = comp.iter();
        self.faces.retain(|_| *it.next().unwrap() == best);
        if !self.uvs.is_empty() {
            let mut it = comp.iter();
            self.uvs.retain(|_| *it.next().unwrap() == best);
        }
        self.compact();
        n - 1
    }
}

/// Square RGB texture with a mask of texels that received baked or optimized data.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    pub resolution: u32,
    pub rgb: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

/// Color of texels that never received data.
pub const TEXTURE_FILL: [f64; 3] = [0.5, 0.5, 0.5];

impl TextureImage {
    pub fn new(resolution: u32) -> Self {
        let n = (resolution as usize).pow(2);
        Self { resolution, rgb: vec![TEXTURE_FILL; n], valid: vec![false; n] }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.resolution as usize + x as usize
    }

    /// PNG with row 0 at v = 1, the orientation OBJ consumers expect.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let r = self.resolution;
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::RgbImage::from_fn(r, r, |x, y| {
            let c = self.rgb[self.index(x, r - 1 - y)];
            image::Rgb([q(c[0]), q(c[1]), q(c[2])])
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Option<TextureImage> {
        let (w, h) = img.dimensions();
        if w != h {
            return None;
        }
        let mut tex = TextureImage::new(w);
        for (x, y, p) in img.enumerate_pixels() {
            let i = tex.index(x, w - 1 - y);
            tex.rgb[i] = std::array::from_fn(|k| f64::from(p[k]) / 255.0);
            tex.valid[i] = true;
        }
        Some(tex)
    }

    /// Rounds every texel to the nearest 8-bit level, matching what a PNG stores.
    pub fn quantize(&mut self) {
        for c in self.rgb.iter_mut().flatten() {
            *c = (c.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
    }
}
