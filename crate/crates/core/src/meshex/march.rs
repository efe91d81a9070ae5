use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::tables::{EDGES, TRIANGLES};
use super::DensityGrid;
use crate::scene::TriangleMesh;

/// Corner offsets matching the numbering of the triangle table.
const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0], [0, 0, 1], [0, 1, 1], [1, 1, 1], [1, 0, 1]];

/// Grid-edge key: `point_index * 3 + axis`, the edge running from the point along `+axis`.
fn edge_key(grid: &DensityGrid, cell: [usize; 3], edge: usize) -> u64 {
    let [a, b] = EDGES[edge];
    let (ca, cb) = (CORNERS[a], CORNERS[b]);
    let base = std::array::from_fn::<usize, 3, _>(|k| cell[k] + ca[k].min(cb[k]));
    let axis = (0..3).find(|&k| ca[k] != cb[k]).expect("edge spans one axis");
    grid.index(base[0], base[1], base[2]) as u64 * 3 + axis as u64
}

fn edge_vertex(grid: &DensityGrid, key: u64, iso: f64) -> Vector3<f64> {
    let r = grid.resolution;
    let axis = (key % 3) as usize;
    let p = (key / 3) as usize;
    let (x, y, z) = (p % r, (p / r) % r, p / (r * r));
    let mut q = [x, y, z];
    q[axis] += 1;
    let (v0, v1) = (grid.values[p], grid.values[grid.index(q[0], q[1], q[2])]);
    let t = ((iso - v0) / (v1 - v0)).clamp(0.0, 1.0);
    let a = grid.point(x, y, z);
    let b = grid.point(q[0], q[1], q[2]);
    a + (b - a) * t
}

/// Extracts the `threshold` isosurface; an empty mesh when the field never crosses it.
/// Faces are wound so their normals point toward decreasing density.
pub fn marching_cubes(grid: &DensityGrid, threshold: f64) -> TriangleMesh {
    let r = grid.resolution;
    if r < 2 {
        return TriangleMesh::new(Vec::new(), Vec::new());
    }
    let slabs: Vec<Vec<[u64; 3]>> = (0..r - 1)
        .into_par_iter()
        .map(|z| {
            let mut tris = Vec::new();
            for y in 0..r - 1 {
                for x in 0..r - 1 {
                    let cell = [x, y, z];
                    let mut case = 0usize;
                    for (k, c) in CORNERS.iter().enumerate() {
                        if grid.values[grid.index(x + c[0], y + c[1], z + c[2])] > threshold {
                            case |= 1 << k;
                        }
                    }
                    for t in TRIANGLES[case].chunks(3).take_while(|t| t[0] >= 0) {
                        let e = [t[0], t[1], t[2]].map(|e| edge_key(grid, cell, e as usize));
                        tris.push(e);
                    }
                }
            }
            tris
        })
        .collect();

    let mut ids: HashMap<u64, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for tri in slabs.iter().flatten() {
        let f = tri.map(|key| {
            *ids.entry(key).or_insert_with(|| {
                vertices.push(edge_vertex(grid, key, threshold));
                (vertices.len() - 1) as u32
            })
        });
        if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
            faces.push(f);
        }
    }
    let mut mesh = TriangleMesh::new(vertices, faces);
    mesh.remove_degenerate(0.0);
    mesh.compact();
    mesh
}
