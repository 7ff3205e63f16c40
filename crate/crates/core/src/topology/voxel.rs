use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{check_closed, UnionFind};
use crate::error::{Error, Result};
use crate::primitives::{Aabb, Axis, TriMesh, Vec3};

const RAY_DIR: [f64; 3] = [1.0, 1e-3, 2e-3];

/// Dense boolean occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    /// Bounding box of the voxelized source; partition cuts are relative to it.
    pub bounds: Aabb,
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, spacing: f64) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || !(spacing > 0.0) {
            return Err(Error::param("voxel grid needs positive dims and spacing"));
        }
        let max = origin + Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * spacing;
        Ok(Self {
            dims,
            origin,
            spacing,
            bounds: Aabb { min: origin, max },
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.spacing
    }

    pub fn lattice_point(&self, p: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64) * self.spacing
    }

    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occupancy[idx]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.occupancy[idx] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn occupied(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.occupancy[i]).collect()
    }

    /// Run-length text dump: a header, then one `<count> <0|1>` line per run.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(out, "origin {} {} {}", self.origin.x, self.origin.y, self.origin.z);
        let _ = writeln!(out, "spacing {}", self.spacing);
        let mut iter = self.occupancy.iter().peekable();
        while let Some(&v) = iter.next() {
            let mut run = 1;
            while iter.peek() == Some(&&v) {
                iter.next();
                run += 1;
            }
            let _ = writeln!(out, "{run} {}", v as u8);
        }
        out
    }

    pub fn from_rle(text: &str) -> Result<Self> {
        let fail = |m: &str| Error::format("voxel RLE", m.to_string());
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| fail("missing header"))?;
            let mut toks = line.split_whitespace();
            if toks.next() != Some(key) {
                return Err(fail(&format!("expected '{key}'")));
            }
            toks.map(|t| t.parse::<f64>().map_err(|_| fail("bad number"))).collect()
        };
        let d = header("dims")?;
        let o = header("origin")?;
        let s = header("spacing")?;
        if d.len() != 3 || o.len() != 3 || s.len() != 1 {
            return Err(fail("malformed header"));
        }
        let mut grid = VoxelGrid::new([d[0] as usize, d[1] as usize, d[2] as usize], Vec3::new(o[0], o[1], o[2]), s[0])?;
        let mut pos = 0;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut toks = line.split_whitespace();
            let run: usize = toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| fail("bad run"))?;
            let val = match toks.next() {
                Some("0") => false,
                Some("1") => true,
                _ => return Err(fail("bad run value")),
            };
            if pos + run > grid.len() {
                return Err(fail("runs exceed grid size"));
            }
            grid.occupancy[pos..pos + run].fill(val);
            pos += run;
        }
        if pos != grid.len() {
            return Err(fail("runs do not cover the grid"));
        }
        Ok(grid)
    }
}

fn ray_hits(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-18 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 0.0
}

/// Solid voxelization: a voxel is occupied iff its center is inside the closed mesh
/// (ray parity along a fixed slightly tilted direction).
pub fn voxelize(mesh: &TriMesh, resolution: usize) -> Result<VoxelGrid> {
    if resolution < 4 {
        return Err(Error::param(format!("voxel resolution must be >= 4, got {resolution}")));
    }
    check_closed(mesh)?;
    let bounds = mesh
        .bbox()
        .ok_or_else(|| Error::DegenerateGeometry("mesh has no vertices".into()))?;
    let longest = bounds.longest_edge();
    if !(longest > 0.0) {
        return Err(Error::DegenerateGeometry("mesh has zero extent".into()));
    }
    let spacing = longest / resolution as f64;
    let ext = bounds.extent();
    let dims: [usize; 3] = std::array::from_fn(|a| ((ext[a] / spacing - 1e-9).ceil() as usize).max(1));
    let span = Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * spacing;
    let mut grid = VoxelGrid::new(dims, bounds.center() - span * 0.5, spacing)?;
    grid.bounds = bounds;

    let dir = Vec3::from(RAY_DIR);
    let tris: Vec<[Vec3; 3]> = mesh.triangles().collect();
    let tri_boxes: Vec<Aabb> = tris
        .iter()
        .map(|t| Aabb::from_points(t.iter().copied()).unwrap())
        .collect();
    let travel = span.x + ext.x;
    let eps = 1e-9 * longest;

    let [nx, ny, nz] = dims;
    let rows: Vec<Vec<bool>> = (0..ny * nz)
        .into_par_iter()
        .map(|row| {
            let (j, k) = (row % ny, row / ny);
            let probe = grid.center(grid.index(0, j, k));
            let candidates: Vec<&[Vec3; 3]> = tris
                .iter()
                .zip(&tri_boxes)
                .filter(|(_, b)| {
                    b.max.y >= probe.y - eps
                        && b.min.y <= probe.y + RAY_DIR[1] * travel + eps
                        && b.max.z >= probe.z - eps
                        && b.min.z <= probe.z + RAY_DIR[2] * travel + eps
                })
                .map(|(t, _)| t)
                .collect();
            (0..nx)
                .map(|i| {
                    let c = grid.center(grid.index(i, j, k));
                    candidates.iter().filter(|t| ray_hits(&c, &dir, t)).count() % 2 == 1
                })
                .collect()
        })
        .collect();
    for (row, vals) in rows.into_iter().enumerate() {
        let (j, k) = (row % ny, row / ny);
        for (i, v) in vals.into_iter().enumerate() {
            let idx = grid.index(i, j, k);
            grid.occupancy[idx] = v;
        }
    }
    Ok(grid)
}

/// One slab-product cell of a partition.
#[derive(Debug, Clone)]
pub struct Region {
    /// Slab index along each axis.
    pub slab: [usize; 3],
    /// Occupied voxel indices assigned to the region.
    pub voxels: Vec<usize>,
    /// Closed boundary surface; `None` flags an empty region.
    pub boundary: Option<TriMesh>,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SubregionPartition {
    /// Splitting fractions per axis (a single `1.0` for an uncut axis).
    pub ratios: [Vec<f64>; 3],
    /// Cut coordinates per axis, including both bounding planes.
    pub cuts: [Vec<f64>; 3],
    /// Regions ordered with the X slab varying fastest, then Y, then Z.
    pub regions: Vec<Region>,
}

impl SubregionPartition {
    pub fn counts(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.ratios[a].len())
    }

    pub fn region(&self, slab: [usize; 3]) -> Option<&Region> {
        self.regions.iter().find(|r| r.slab == slab)
    }
}

pub fn validate_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::param("split ratios must be positive"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split ratios sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Single-axis slab partition with cut planes at cumulative `ratios`.
pub fn partition(grid: &VoxelGrid, axis: Axis, ratios: &[f64]) -> Result<SubregionPartition> {
    let mut splits: [Vec<f64>; 3] = [vec![1.0], vec![1.0], vec![1.0]];
    splits[axis.index()] = ratios.to_vec();
    partition_grid(grid, &splits)
}

/// Product partition: independent slab cuts on every axis.
pub fn partition_grid(grid: &VoxelGrid, ratios: &[Vec<f64>; 3]) -> Result<SubregionPartition> {
    for r in ratios {
        validate_ratios(r)?;
    }
    let cuts: [Vec<f64>; 3] = std::array::from_fn(|a| {
        let (lo, ext) = (grid.bounds.min[a], grid.bounds.extent()[a]);
        let mut acc = 0.0;
        let mut c = vec![lo];
        for (n, r) in ratios[a].iter().enumerate() {
            acc += r;
            c.push(if n + 1 == ratios[a].len() { grid.bounds.max[a] } else { lo + acc * ext });
        }
        c
    });
    let counts: [usize; 3] = std::array::from_fn(|a| ratios[a].len());
    let slab_of = |a: usize, x: f64| -> usize {
        let inner = &cuts[a][1..cuts[a].len() - 1];
        inner.iter().filter(|&&c| x >= c).count()
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); counts[0] * counts[1] * counts[2]];
    for idx in grid.occupied() {
        let c = grid.center(idx);
        let s = [slab_of(0, c.x), slab_of(1, c.y), slab_of(2, c.z)];
        buckets[s[0] + counts[0] * (s[1] + counts[1] * s[2])].push(idx);
    }
    let regions = buckets
        .into_iter()
        .enumerate()
        .map(|(b, voxels)| {
            let slab = [b % counts[0], (b / counts[0]) % counts[1], b / (counts[0] * counts[1])];
            let boundary = if voxels.is_empty() {
                None
            } else {
                Some(boundary_surface(grid, &voxels)?)
            };
            Ok(Region { slab, voxels, boundary })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubregionPartition {
        ratios: ratios.clone(),
        cuts,
        regions,
    })
}

/// Closed, outward-oriented triangulated boundary of a voxel subset.
///
/// Faces between a member voxel and any non-member are emitted as two triangles.
/// Edges touched by two diagonal member voxels are split (6-connected solid), and
/// vertices are duplicated per face fan, so the result is always a 2-manifold.
pub fn boundary_surface(grid: &VoxelGrid, voxels: &[usize]) -> Result<TriMesh> {
    if voxels.is_empty() {
        return Err(Error::param("boundary of an empty region"));
    }
    let mut member = vec![false; grid.len()];
    for &v in voxels {
        member[v] = true;
    }
    let dims = grid.dims;
    // (corners in CCW order seen from outside, owner voxel)
    let mut quads: Vec<([[usize; 3]; 4], usize)> = Vec::new();
    for &v in voxels {
        let c = grid.coords(v);
        for a in 0..3 {
            let (b, d) = ((a + 1) % 3, (a + 2) % 3);
            for positive in [false, true] {
                let mut n = c;
                let outside = if positive {
                    n[a] += 1;
                    n[a] >= dims[a]
                } else if n[a] == 0 {
                    true
                } else {
                    n[a] -= 1;
                    false
                };
                if !outside && member[grid.index(n[0], n[1], n[2])] {
                    continue;
                }
                let offs: [(usize, usize); 4] = if positive {
                    [(0, 0), (1, 0), (1, 1), (0, 1)]
                } else {
                    [(0, 0), (0, 1), (1, 1), (1, 0)]
                };
                let corners = offs.map(|(ob, od)| {
                    let mut p = c;
                    p[a] += positive as usize;
                    p[b] += ob;
                    p[d] += od;
                    p
                });
                quads.push((corners, v));
            }
        }
    }

    // Pair faces across each lattice edge.
    type P = [usize; 3];
    let mut edge_faces: HashMap<(P, P), Vec<(usize, usize)>> = HashMap::new();
    for (q, (corners, owner)) in quads.iter().enumerate() {
        for k in 0..4 {
            let (p, r) = (corners[k], corners[(k + 1) % 4]);
            let key = if p < r { (p, r) } else { (r, p) };
            edge_faces.entry(key).or_default().push((q, *owner));
        }
    }
    let mut uf = UnionFind::new(quads.len() * 4);
    let slot = |q: usize, p: &P| -> usize { q * 4 + quads[q].0.iter().position(|c| c == p).unwrap() };
    for ((p, r), faces) in &edge_faces {
        let pairs: Vec<(usize, usize)> = match faces.len() {
            2 => vec![(faces[0].0, faces[1].0)],
            4 => {
                let mut by_owner: HashMap<usize, Vec<usize>> = HashMap::new();
                for &(q, o) in faces {
                    by_owner.entry(o).or_default().push(q);
                }
                by_owner
                    .values()
                    .filter(|g| g.len() == 2)
                    .map(|g| (g[0], g[1]))
                    .collect()
            }
            n => {
                return Err(Error::Topology(format!("voxel edge shared by {n} boundary faces")));
            }
        };
        for (f, g) in pairs {
            uf.union(slot(f, p), slot(g, p));
            uf.union(slot(f, r), slot(g, r));
        }
    }

    let mut mesh = TriMesh::default();
    let mut vertex_of: HashMap<usize, usize> = HashMap::new();
    for (q, (corners, _)) in quads.iter().enumerate() {
        let ids: [usize; 4] = std::array::from_fn(|k| {
            let root = uf.find(q * 4 + k);
            *vertex_of.entry(root).or_insert_with(|| {
                mesh.vertices.push(grid.lattice_point(corners[k]));
                mesh.vertices.len() - 1
            })
        });
        mesh.faces.push([ids[0], ids[1], ids[2]]);
        mesh.faces.push([ids[0], ids[2], ids[3]]);
    }
    Ok(mesh)
}
