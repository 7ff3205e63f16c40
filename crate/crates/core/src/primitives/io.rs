use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PointCloud, TriMesh, Vec3};
use crate::error::{Error, Result};

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn obj_string(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, &path.display().to_string())
}

pub(crate) fn parse_obj(text: &str, context: &str) -> Result<TriMesh> {
    let mut mesh = TriMesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        let at = |msg: &str| Error::format(context, format!("line {}: {msg}", lineno + 1));
        match toks.next() {
            Some("v") => {
                let coords: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| at("bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(at("vertex needs three coordinates"));
                }
                mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| at("bad face index"))?;
                        let n = mesh.vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(at("face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(at("only triangular faces are supported"));
                }
                mesh.faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    if !mesh.indices_in_range() {
        return Err(Error::format(context, "face index out of range"));
    }
    Ok(mesh)
}

pub fn write_stl(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(84 + 50 * mesh.faces.len());
    let mut header = [0u8; 80];
    let tag = b"polycube binary stl";
    header[..tag.len()].copy_from_slice(tag);
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(mesh.faces.len() as u32).to_le_bytes());
    for [a, b, c] in mesh.triangles() {
        let n = (b - a).cross(&(c - a));
        let n = if n.norm() > 0.0 { n.normalize() } else { n };
        for v in [n, a, b, c] {
            for k in 0..3 {
                buf.extend_from_slice(&(v[k] as f32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads binary STL, welding vertices with bit-identical coordinates.
pub fn read_stl(path: &Path) -> Result<TriMesh> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 84 {
        return Err(Error::format(&ctx, "file shorter than the STL header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() < 84 + 50 * count {
        return Err(Error::format(&ctx, format!("truncated: header declares {count} triangles")));
    }
    let mut mesh = TriMesh::default();
    let mut lookup: HashMap<[u32; 3], usize> = HashMap::new();
    for t in 0..count {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let mut face = [0usize; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let off = 12 + 12 * k;
            let bits: [u32; 3] = std::array::from_fn(|c| {
                u32::from_le_bytes(rec[off + 4 * c..off + 4 * c + 4].try_into().unwrap())
            });
            *slot = *lookup.entry(bits).or_insert_with(|| {
                mesh.vertices
                    .push(Vec3::from_iterator(bits.iter().map(|&b| f32::from_bits(b) as f64)));
                mesh.vertices.len() - 1
            });
        }
        mesh.faces.push(face);
    }
    Ok(mesh)
}

pub fn write_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    fs::write(path, xyz_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 40);
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format(&ctx, format!("line {}: bad number", lineno + 1))))
            .collect::<Result<_>>()?;
        if c.len() != 3 {
            return Err(Error::format(&ctx, format!("line {}: expected 'x y z'", lineno + 1)));
        }
        points.push(Vec3::new(c[0], c[1], c[2]));
    }
    Ok(PointCloud::new(points))
}
