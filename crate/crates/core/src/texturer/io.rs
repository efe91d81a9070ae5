use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

use super::atlas::UvAtlas;
use crate::scene::{TextureImage, TriangleMesh};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("atlas does not match the mesh or texture")]
    Inconsistent,
}

/// Paths written by [`export`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub png: PathBuf,
}

impl Bundle {
    /// `<dir>/<stem>.obj`, `.mtl` and `.png`.
    pub fn at(dir: &Path, stem: &str) -> Self {
        Self { obj: dir.join(format!("{stem}.obj")), mtl: dir.join(format!("{stem}.mtl")), png: dir.join(format!("{stem}.png")) }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write(path: &Path, text: &str) -> Result<(), ExportError> {
    std::fs::write(path, text).map_err(|source| ExportError::Io { path: path.into(), source })
}

const MATERIAL: &str = "texture";

/// Writes the mesh with per-corner UVs, its material, and the 8-bit texture.
pub fn export(mesh: &TriangleMesh, atlas: &UvAtlas, texture: &TextureImage, bundle: &Bundle) -> Result<(), ExportError> {
    if !atlas.is_consistent_with(mesh) || texture.resolution != atlas.resolution {
        return Err(ExportError::Inconsistent);
    }
    let mut obj = String::new();
    let _ = writeln!(obj, "mtllib {}", file_name(&bundle.mtl));
    for v in &mesh.vertices {
        let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
    }
    for n in &mesh.normals {
        let _ = writeln!(obj, "vn {} {} {}", n.x, n.y, n.z);
    }
    for uv in atlas.uvs.iter().flatten() {
        let _ = writeln!(obj, "vt {} {}", uv[0], uv[1]);
    }
    let _ = writeln!(obj, "usemtl {MATERIAL}");
    for (f, tri) in mesh.faces.iter().enumerate() {
        let c = |k: usize| format!("{}/{}/{}", tri[k] + 1, 3 * f + k + 1, tri[k] + 1);
        let _ = writeln!(obj, "f {} {} {}", c(0), c(1), c(2));
    }
    write(&bundle.obj, &obj)?;
    let mtl = format!("newmtl {MATERIAL}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {}\n", file_name(&bundle.png));
    write(&bundle.mtl, &mtl)?;
    texture.to_rgb8().save(&bundle.png).map_err(|source| ExportError::Image { path: bundle.png.clone(), source })
}

fn parse_floats<const N: usize>(parts: &[&str], path: &Path, line: usize) -> Result<[f64; N], ExportError> {
    let bad = |message: String| ExportError::Parse { path: path.into(), line, message };
    if parts.len() < N {
        return Err(bad(format!("expected {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad(format!("bad number `{p}`")))?;
    }
    Ok(out)
}

/// Reads a bundle written by [`export`]: triangulated OBJ with `v/vt` or `v/vt/vn` corners.
/// The texture is located through the OBJ's `mtllib` and the material's `map_Kd`.
pub fn import(obj_path: &Path) -> Result<(TriangleMesh, UvAtlas, TextureImage), ExportError> {
    let text = std::fs::read_to_string(obj_path).map_err(|source| ExportError::Io { path: obj_path.into(), source })?;
    let dir = obj_path.parent().unwrap_or(Path::new("."));
    let mut vertices = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    let mut mtllib = None;
    for (ln, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| ExportError::Parse { path: obj_path.into(), line: ln + 1, message };
        match parts.first().copied() {
            Some("v") => vertices.push(Vector3::from(parse_floats::<3>(&parts[1..], obj_path, ln + 1)?)),
            Some("vt") => texcoords.push(parse_floats::<2>(&parts[1..], obj_path, ln + 1)?),
            Some("mtllib") => mtllib = parts.get(1).map(|s| dir.join(s)),
            Some("f") => {
                if parts.len() != 4 {
                    return Err(bad("only triangles are supported".into()));
                }
                let mut tri = [0u32; 3];
                let mut uv = [[0.0; 2]; 3];
                for k in 0..3 {
                    let mut idx = parts[k + 1].split('/');
                    let v: usize = idx.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad vertex index".into()))?;
                    let t: usize = idx.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("missing texture index".into()))?;
                    if v == 0 || v > vertices.len() || t == 0 || t > texcoords.len() {
                        return Err(bad("index out of range".into()));
                    }
                    tri[k] = (v - 1) as u32;
                    uv[k] = texcoords[t - 1];
                }
                faces.push(tri);
                uvs.push(uv);
            }
            _ => {}
        }
    }
    let mtl_path = mtllib.ok_or_else(|| ExportError::Parse { path: obj_path.into(), line: 0, message: "no mtllib".into() })?;
    let mtl = std::fs::read_to_string(&mtl_path).map_err(|source| ExportError::Io { path: mtl_path.clone(), source })?;
    let png = mtl
        .lines()
        .find_map(|l| l.trim().strip_prefix("map_Kd").map(|s| dir.join(s.trim())))
        .ok_or_else(|| ExportError::Parse { path: mtl_path.clone(), line: 0, message: "no map_Kd".into() })?;
    let img = image::open(&png).map_err(|source| ExportError::Image { path: png.clone(), source })?.to_rgb8();
    let texture = TextureImage::from_rgb8(&img)
        .ok_or_else(|| ExportError::Parse { path: png.clone(), line: 0, message: "texture must be square".into() })?;
    let mesh = TriangleMesh::new(vertices, faces);
    let atlas = UvAtlas { resolution: texture.resolution, chart_of_face: vec![0; uvs.len()], uvs, charts: Vec::new(), scale: 0.0 };
    Ok((mesh, atlas, texture))
}
