use nalgebra::{Vector2, Vector3};

use crate::scene::{edge_key, TriangleMesh};

pub const DEFAULT_TEXTURE_RESOLUTION: u32 = 1024;
/// Empty texels between neighboring chart rectangles.
pub const GUTTER: u32 = 4;

/// One planar chart: faces sharing a dominant normal axis and connected by edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    /// `2 * axis + (normal component negative)`.
    pub bin: u8,
    /// Texel rectangle `[x, y, width, height]`.
    pub rect: [u32; 4],
    pub faces: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvAtlas {
    pub resolution: u32,
    /// Per-corner UVs in `[0, 1]²`, one entry per face.
    pub uvs: Vec<[[f64; 2]; 3]>,
    pub chart_of_face: Vec<u32>,
    pub charts: Vec<Chart>,
    /// Texels per world unit, shared by all charts.
    pub scale: f64,
}

fn dominant_bin(n: &Vector3<f64>) -> u8 {
    let axis = (0..3).fold(0, |b, k| if n[k].abs() > n[b].abs() { k } else { b });
    (2 * axis + usize::from(n[axis] < 0.0)) as u8
}

/// Planar coordinates for a bin; mirrored on negative bins so charts keep their winding.
fn project(bin: u8, p: &Vector3<f64>) -> Vector2<f64> {
    let axis = (bin / 2) as usize;
    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
    if bin % 2 == 0 {
        Vector2::new(p[a], p[b])
    } else {
        Vector2::new(p[b], p[a])
    }
}

fn components(mesh: &TriangleMesh, bins: &[u8]) -> Vec<Vec<u32>> {
    let n = mesh.faces.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut first = std::collections::HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let e = edge_key(f[k], f[(k + 1) % 3]);
            match first.get(&e) {
                Some(&other) if bins[other] == bins[fi] => {
                    let (a, b) = (find(&mut parent, fi), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                Some(_) => {}
                None => {
                    first.insert(e, fi);
                }
            }
        }
    }
    let mut index = std::collections::HashMap::new();
    let mut out: Vec<Vec<u32>> = Vec::new();
    for f in 0..n {
        let root = find(&mut parent, f);
        let id = *index.entry(root).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[id].push(f as u32);
    }
    out
}

/// Shelf packing of `sizes` (continuous texel extents) at the given resolution; `None` if they do not fit.
fn shelf_pack(sizes: &[[f64; 2]], order: &[usize], resolution: u32) -> Option<Vec<[u32; 4]>> {
    let margin = GUTTER / 2;
    let limit = resolution - margin;
    let mut rects = vec![[0u32; 4]; sizes.len()];
    let (mut x, mut y, mut shelf) = (margin, margin, 0u32);
    for &i in order {
        let w = sizes[i][0].ceil().max(1.0) as u32;
        let h = sizes[i][1].ceil().max(1.0) as u32;
        if w > limit - margin || h > limit - margin {
            return None;
        }
        if x + w > limit {
            x = margin;
            y += shelf + GUTTER;
            shelf = 0;
        }
        if y + h > limit {
            return None;
        }
        rects[i] = [x, y, w, h];
        x += w + GUTTER;
        shelf = shelf.max(h);
    }
    Some(rects)
}

/// Box-projection charts packed into a square texture.
pub fn unwrap(mesh: &TriangleMesh, resolution: u32) -> UvAtlas {
    let bins: Vec<u8> = (0..mesh.faces.len()).map(|f| dominant_bin(&mesh.face_normal_raw(f))).collect();
    let groups = components(mesh, &bins);
    let bounds: Vec<(Vector2<f64>, Vector2<f64>)> = groups
        .iter()
        .map(|faces| {
            let bin = bins[faces[0] as usize];
            let mut lo = Vector2::repeat(f64::INFINITY);
            let mut hi = Vector2::repeat(f64::NEG_INFINITY);
            for &f in faces {
                for p in mesh.face_positions(f as usize) {
                    let q = project(bin, &p);
                    lo = lo.inf(&q);
                    hi = hi.sup(&q);
                }
            }
            (lo, hi)
        })
        .collect();
    let extent: Vec<[f64; 2]> = bounds.iter().map(|(lo, hi)| [hi.x - lo.x, hi.y - lo.y]).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| extent[b][1].total_cmp(&extent[a][1]).then(a.cmp(&b)));

    let sized = |s: f64| extent.iter().map(|e| [e[0] * s, e[1] * s]).collect::<Vec<_>>();
    let (mut lo, mut hi) = (0.0, f64::from(resolution) / extent.iter().flatten().fold(1e-12f64, |m, &v| m.max(v)));
    let mut rects = shelf_pack(&sized(lo), &order, resolution).unwrap_or_default();
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        match shelf_pack(&sized(mid), &order, resolution) {
            Some(r) => {
                lo = mid;
                rects = r;
            }
            None => hi = mid,
        }
    }
    let scale = lo;
    let res = f64::from(resolution);
    let mut uvs = vec![[[0.0; 2]; 3]; mesh.faces.len()];
    let mut chart_of_face = vec![0u32; mesh.faces.len()];
    let mut charts = Vec::with_capacity(groups.len());
    for (c, faces) in groups.into_iter().enumerate() {
        let bin = bins[faces[0] as usize];
        let origin = bounds[c].0;
        let [rx, ry, _, _] = rects[c];
        for &f in &faces {
            let p = mesh.face_positions(f as usize);
            uvs[f as usize] = p.map(|p| {
                let q = (project(bin, &p) - origin) * scale;
                [(f64::from(rx) + q.x) / res, (f64::from(ry) + q.y) / res]
            });
            chart_of_face[f as usize] = c as u32;
        }
        charts.push(Chart { bin, rect: rects[c], faces });
    }
    UvAtlas { resolution, uvs, chart_of_face, charts, scale }
}

fn point_triangle_distance(p: Vector2<f64>, t: &[Vector2<f64>; 3]) -> f64 {
    let cross = |a: Vector2<f64>, b: Vector2<f64>| a.x * b.y - a.y * b.x;
    let area = cross(t[1] - t[0], t[2] - t[0]);
    let inside = (0..3).all(|k| {
        let s = cross(t[(k + 1) % 3] - t[k], p - t[k]);
        s * area >= 0.0
    });
    if inside && area != 0.0 {
        return 0.0;
    }
    (0..3)
        .map(|k| {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let ab = b - a;
            let len2 = ab.norm_squared();
            let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p - (a + ab * s)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Texels within `radius` of any UV triangle, labelled with the chart id (`u32::MAX` outside).
pub fn chart_labels(atlas: &UvAtlas, radius: f64) -> Vec<u32> {
    let r = atlas.resolution as usize;
    let res = f64::from(atlas.resolution);
    let mut labels = vec![u32::MAX; r * r];
    for (f, uv) in atlas.uvs.iter().enumerate() {
        let t = uv.map(|c| Vector2::new(c[0] * res, c[1] * res));
        let lo = t.iter().fold(Vector2::repeat(f64::INFINITY), |m, p| m.inf(p));
        let hi = t.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
        let x0 = (lo.x - radius - 0.5).floor().max(0.0) as usize;
        let y0 = (lo.y - radius - 0.5).floor().max(0.0) as usize;
        let x1 = ((hi.x + radius - 0.5).ceil().max(0.0) as usize).min(r - 1);
        let y1 = ((hi.y + radius - 0.5).ceil().max(0.0) as usize).min(r - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                if point_triangle_distance(c, &t) <= radius {
                    labels[y * r + x] = atlas.chart_of_face[f];
                }
            }
        }
    }
    labels
}

impl UvAtlas {
    /// Fraction of the texture covered by UV triangles.
    pub fn occupancy(&self) -> f64 {
        self.uvs
            .iter()
            .map(|t| 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs())
            .sum()
    }

    pub fn uv_area(&self, face: usize) -> f64 {
        let t = self.uvs[face];
        0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs()
    }

    /// Texels any bilinear lookup inside a chart can touch.
    pub fn chart_mask(&self) -> Vec<bool> {
        chart_labels(self, 1.5).into_iter().map(|l| l != u32::MAX).collect()
    }

    pub fn is_consistent_with(&self, mesh: &TriangleMesh) -> bool {
        self.uvs.len() == mesh.faces.len() && self.uvs.iter().flatten().flatten().all(|v| v.is_finite())
    }
}
