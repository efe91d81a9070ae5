//! Binary little-endian PLY persistence for Gaussian clouds.
//!
//! One `vertex` element with float properties
//! `x y z scale_0 scale_1 scale_2 rot_0 rot_1 rot_2 rot_3 opacity red_f green_f blue_f`.
//! Values are stored activated: true standard deviations, opacity and color in
//! `[0, 1]`, quaternion scalar-first. This is not the log-scale/logit layout used by
//! some other splatting tools.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use thiserror::Error;

use super::{Gaussian, GaussianCloud};

pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red_f",
    "green_f", "blue_f",
];

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("missing property `{0}`")]
    MissingProperty(String),
    #[error("property `{name}` has unsupported type `{ty}`")]
    PropertyType { name: String, ty: String },
    #[error("duplicate property `{0}`")]
    DuplicateProperty(String),
    #[error("payload truncated at vertex {vertex}, property `{property}`")]
    Truncated { vertex: usize, property: String },
    #[error("non-finite value in property `{0}`")]
    NonFinite(String),
}

pub fn header(count: usize) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {count}\n");
    for p in PROPERTIES {
        h.push_str("property float ");
        h.push_str(p);
        h.push('\n');
    }
    h.push_str("end_header\n");
    h
}

fn fields(g: &Gaussian) -> [f32; 14] {
    [
        g.center.x, g.center.y, g.center.z, g.scale.x, g.scale.y, g.scale.z, g.rotation[0], g.rotation[1],
        g.rotation[2], g.rotation[3], g.opacity, g.color.x, g.color.y, g.color.z,
    ]
}

pub fn write_cloud<W: Write>(cloud: &GaussianCloud, mut out: W) -> Result<(), PlyError> {
    if let Some((i, _)) = cloud.gaussians.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(PlyError::NonFinite(format!("vertex {i}")));
    }
    out.write_all(header(cloud.len()).as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * PROPERTIES.len() * 4);
    for g in &cloud.gaussians {
        for v in fields(g) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn to_bytes(cloud: &GaussianCloud) -> Result<Vec<u8>, PlyError> {
    let mut v = Vec::new();
    write_cloud(cloud, &mut v)?;
    Ok(v)
}

pub fn save(cloud: &GaussianCloud, path: &Path) -> Result<(), PlyError> {
    let file = std::fs::File::create(path)?;
    write_cloud(cloud, std::io::BufWriter::new(file))
}

pub fn load(path: &Path) -> Result<GaussianCloud, PlyError> {
    read_cloud(std::fs::File::open(path)?)
}

pub fn read_cloud<R: Read>(input: R) -> Result<GaussianCloud, PlyError> {
    let mut reader = BufReader::new(input);
    let (count, layout) = parse_header(&mut reader)?;
    // Column of every required property in the stored record.
    let columns: Vec<usize> = PROPERTIES
        .iter()
        .map(|p| {
            layout.iter().position(|n| n == p).ok_or_else(|| PlyError::MissingProperty((*p).to_string()))
        })
        .collect::<Result<_, _>>()?;
    let stride = layout.len();
    let mut record = vec![0u8; stride * 4];
    let mut gaussians = Vec::with_capacity(count);
    for vertex in 0..count {
        let mut filled = 0;
        while filled < record.len() {
            match reader.read(&mut record[filled..])? {
                0 => {
                    return Err(PlyError::Truncated { vertex, property: layout[filled / 4].clone() });
                }
                n => filled += n,
            }
        }
        let value = |k: usize| {
            let c = columns[k] * 4;
            f32::from_le_bytes([record[c], record[c + 1], record[c + 2], record[c + 3]])
        };
        let v: [f32; 14] = std::array::from_fn(value);
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(PlyError::NonFinite(PROPERTIES[k].to_string()));
        }
        gaussians.push(Gaussian {
            center: Vector3::new(v[0], v[1], v[2]),
            scale: Vector3::new(v[3], v[4], v[5]),
            rotation: Vector4::new(v[6], v[7], v[8], v[9]),
            opacity: v[10],
            color: Vector3::new(v[11], v[12], v[13]),
        });
    }
    Ok(GaussianCloud::new(gaussians))
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<(usize, Vec<String>), PlyError> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String, PlyError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(PlyError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(reader)? != "ply" {
        return Err(PlyError::MalformedHeader("missing `ply` magic".into()));
    }
    let mut format_seen = false;
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format_seen = true,
            ["format", other, ..] => {
                return Err(PlyError::MalformedHeader(format!("unsupported format `{other}`")));
            }
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(PlyError::MalformedHeader("duplicate vertex element".into()));
                }
                count = Some(n.parse::<usize>().map_err(|_| PlyError::MalformedHeader(format!("bad count `{n}`")))?);
            }
            ["element", name, ..] => {
                return Err(PlyError::MalformedHeader(format!("unsupported element `{name}`")));
            }
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(PlyError::MalformedHeader("property before element".into()));
                }
                if !matches!(*ty, "float" | "float32") {
                    return Err(PlyError::PropertyType { name: (*name).to_string(), ty: (*ty).to_string() });
                }
                if props.iter().any(|p| p == name) {
                    return Err(PlyError::DuplicateProperty((*name).to_string()));
                }
                props.push((*name).to_string());
            }
            _ => return Err(PlyError::MalformedHeader(format!("unrecognized line `{l}`"))),
        }
    }
    if !format_seen {
        return Err(PlyError::MalformedHeader("missing format line".into()));
    }
    let count = count.ok_or_else(|| PlyError::MalformedHeader("missing vertex element".into()))?;
    Ok((count, props))
}
