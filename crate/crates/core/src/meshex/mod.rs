//! Mesh extraction from a Gaussian cloud.
//!
//! The opacity-weighted mixture density is sampled on a cell-centered 128³ grid
//! over `(-1, 1)³`, one 8³ block at a time, each block only summing the Gaussians
//! that can reach it. [`marching_cubes`] then extracts the isosurface and
//! [`postprocess`] decimates and smooths it.

mod decimate;
mod march;
mod tables;

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::scene::{normalize_quat, quat_to_matrix, GaussianCloud, TriangleMesh};

pub use decimate::{
    decimate, laplacian_smooth, postprocess, PostprocessReport, DEFAULT_SMOOTH_ITERS, DEFAULT_TARGET_FACES, SMOOTH_LAMBDA,
};
pub use march::marching_cubes;

pub const GRID_RESOLUTION: usize = 128;
pub const BLOCKS_PER_AXIS: usize = 16;
pub const BLOCK_SIZE: usize = GRID_RESOLUTION / BLOCKS_PER_AXIS;
/// Per-Gaussian contributions below this are treated as zero when culling.
pub const CONTRIBUTION_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Culling {
    /// Keep every Gaussian whose support box (out to [`CONTRIBUTION_EPSILON`]) touches the block.
    #[default]
    Conservative,
    /// Keep only Gaussians whose center lies inside the block.
    CenterOnly,
}

/// Grid-point coordinate along one axis.
pub fn grid_coord(i: usize, resolution: usize) -> f64 {
    -1.0 + (i as f64 + 0.5) * 2.0 / resolution as f64
}

/// Density samples; index `(z * r + y) * r + x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn spacing(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution + y) * self.resolution + x
    }

    pub fn point(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let r = self.resolution;
        Vector3::new(grid_coord(x, r), grid_coord(y, r), grid_coord(z, r))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// A Gaussian prepared for density evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DensityKernel {
    pub center: Vector3<f64>,
    pub precision: Matrix3<f64>,
    pub opacity: f64,
    /// Half extents of the axis-aligned box outside which the contribution is below
    /// [`CONTRIBUTION_EPSILON`]; zero when it never reaches it.
    pub extent: Vector3<f64>,
}

impl DensityKernel {
    pub fn new(center: Vector3<f64>, scale: Vector3<f64>, rotation: &nalgebra::Vector4<f64>, opacity: f64) -> Self {
        let s = scale.map(|v| v.max(1e-6));
        let r = quat_to_matrix(&normalize_quat(rotation));
        let precision = r * Matrix3::from_diagonal(&s.map(|v| 1.0 / (v * v))) * r.transpose();
        let cov = r * Matrix3::from_diagonal(&s.map(|v| v * v)) * r.transpose();
        let k = if opacity > CONTRIBUTION_EPSILON { (2.0 * (opacity / CONTRIBUTION_EPSILON).ln()).sqrt() } else { 0.0 };
        let extent = Vector3::new(cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()) * k;
        Self { center, precision, opacity, extent }
    }

    #[inline]
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.center;
        self.opacity * (-0.5 * d.dot(&(self.precision * d))).exp()
    }
}

pub fn kernels(cloud: &GaussianCloud) -> Vec<DensityKernel> {
    cloud
        .gaussians
        .iter()
        .map(|g| DensityKernel::new(g.center.cast(), g.scale.cast(), &g.rotation.cast(), f64::from(g.opacity)))
        .collect()
}

/// `Σᵢ αᵢ exp(-½ (x - xᵢ)ᵀ Σᵢ⁻¹ (x - xᵢ))` over every Gaussian.
pub fn density_at(x: &Vector3<f64>, kernels: &[DensityKernel]) -> f64 {
    kernels.iter().map(|k| k.eval(x)).sum()
}

/// Gaussians retained for each block, blocks in `(bz * 16 + by) * 16 + bx` order.
pub fn partition(kernels: &[DensityKernel], culling: Culling) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); BLOCKS_PER_AXIS.pow(3)];
    let width = 2.0 / BLOCKS_PER_AXIS as f64;
    let block_of = |v: f64| ((v + 1.0) / width).floor();
    for (i, k) in kernels.iter().enumerate() {
        match culling {
            Culling::CenterOnly => {
                let b = k.center.map(block_of);
                if b.iter().all(|&v| (0.0..BLOCKS_PER_AXIS as f64).contains(&v)) {
                    let (x, y, z) = (b.x as usize, b.y as usize, b.z as usize);
                    lists[(z * BLOCKS_PER_AXIS + y) * BLOCKS_PER_AXIS + x].push(i as u32);
                }
            }
            Culling::Conservative => {
                if k.extent.x == 0.0 {
                    continue;
                }
                // Blocks whose grid points fall inside the support box.
                let range = |axis: usize| {
                    let lo = k.center[axis] - k.extent[axis];
                    let hi = k.center[axis] + k.extent[axis];
                    let first = ((lo + 1.0) * GRID_RESOLUTION as f64 / 2.0 - 0.5).ceil().max(0.0);
                    let last = ((hi + 1.0) * GRID_RESOLUTION as f64 / 2.0 - 0.5).floor().min(GRID_RESOLUTION as f64 - 1.0);
                    if first > last {
                        None
                    } else {
                        Some((first as usize / BLOCK_SIZE, last as usize / BLOCK_SIZE))
                    }
                };
                let (Some(rx), Some(ry), Some(rz)) = (range(0), range(1), range(2)) else { continue };
                for bz in rz.0..=rz.1 {
                    for by in ry.0..=ry.1 {
                        for bx in rx.0..=rx.1 {
                            lists[(bz * BLOCKS_PER_AXIS + by) * BLOCKS_PER_AXIS + bx].push(i as u32);
                        }
                    }
                }
            }
        }
    }
    lists
}

/// Block-wise evaluation of the density on the 128³ grid.
pub fn build_grid(cloud: &GaussianCloud, culling: Culling) -> DensityGrid {
    let ks = kernels(cloud);
    let lists = partition(&ks, culling);
    let n = GRID_RESOLUTION;
    let blocks: Vec<Vec<f64>> = lists
        .par_iter()
        .enumerate()
        .map(|(b, list)| {
            let mut out = vec![0.0; BLOCK_SIZE.pow(3)];
            if list.is_empty() {
                return out;
            }
            let (bx, by, bz) = (b % BLOCKS_PER_AXIS, (b / BLOCKS_PER_AXIS) % BLOCKS_PER_AXIS, b / BLOCKS_PER_AXIS.pow(2));
            let local: Vec<DensityKernel> = list.iter().map(|&i| ks[i as usize]).collect();
            for z in 0..BLOCK_SIZE {
                for y in 0..BLOCK_SIZE {
                    for x in 0..BLOCK_SIZE {
                        let p = Vector3::new(
                            grid_coord(bx * BLOCK_SIZE + x, n),
                            grid_coord(by * BLOCK_SIZE + y, n),
                            grid_coord(bz * BLOCK_SIZE + z, n),
                        );
                        out[(z * BLOCK_SIZE + y) * BLOCK_SIZE + x] = density_at(&p, &local);
                    }
                }
            }
            out
        })
        .collect();
    let mut grid = DensityGrid { resolution: n, values: vec![0.0; n * n * n] };
    for (b, vals) in blocks.iter().enumerate() {
        let (bx, by, bz) = (b % BLOCKS_PER_AXIS, (b / BLOCKS_PER_AXIS) % BLOCKS_PER_AXIS, b / BLOCKS_PER_AXIS.pow(2));
        for z in 0..BLOCK_SIZE {
            for y in 0..BLOCK_SIZE {
                let row = grid.index(bx * BLOCK_SIZE, by * BLOCK_SIZE + y, bz * BLOCK_SIZE + z);
                let src = (z * BLOCK_SIZE + y) * BLOCK_SIZE;
                grid.values[row..row + BLOCK_SIZE].copy_from_slice(&vals[src..src + BLOCK_SIZE]);
            }
        }
    }
    grid
}

/// Geometry-only OBJ (`v`, `vn`, `f`).
pub fn write_obj<W: Write>(mesh: &TriangleMesh, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len())?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for n in &mesh.normals {
        writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
    }
    out.flush()
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> std::io::Result<()> {
    write_obj(mesh, std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[derive(Debug, Error)]
pub enum ObjError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads positions and triangles; texture and normal indices are ignored and normals recomputed.
pub fn read_obj<R: BufRead>(input: R) -> Result<TriangleMesh, ObjError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let bad = |message: String| ObjError::Parse { line: i + 1, message };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let xyz: Vec<f64> = parts.take(3).map(|p| p.parse().map_err(|_| bad(format!("bad number `{p}`")))).collect::<Result<_, _>>()?;
                if xyz.len() != 3 {
                    return Err(bad("vertex needs three coordinates".into()));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = parts.collect();
                if idx.len() != 3 {
                    return Err(bad("only triangles are supported".into()));
                }
                let mut tri = [0u32; 3];
                for (t, s) in tri.iter_mut().zip(&idx) {
                    let v: usize = s.split('/').next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad index `{s}`")))?;
                    if v == 0 || v > vertices.len() {
                        return Err(bad(format!("vertex index {v} out of range")));
                    }
                    *t = (v - 1) as u32;
                }
                faces.push(tri);
            }
            _ => {}
        }
    }
    Ok(TriangleMesh::new(vertices, faces))
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh, ObjError> {
    read_obj(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
pub(crate) mod tests;
