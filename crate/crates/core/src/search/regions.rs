//! Per-region surface extraction and the map from partition slabs to frame cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridLayout;
use crate::primitives::{triangle_area, PointCloud, SurfaceSampler, TriMesh, Vec3, POINTS_PER_CELL};
use crate::tensor::frame_cell_box;
use crate::topology::{Region, SubregionPartition, VoxelGrid};

fn clip_polygon(poly: &[Vec3], axis: usize, value: f64, keep_above: bool) -> Vec<Vec3> {
    let inside = |p: &Vec3| if keep_above { p[axis] >= value } else { p[axis] <= value };
    let mut out = Vec::with_capacity(poly.len() + 2);
    for (i, cur) in poly.iter().enumerate() {
        let prev = &poly[(i + poly.len() - 1) % poly.len()];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(*cur),
            (true, false) => out.push(crossing(prev, cur, axis, value)),
            (false, true) => {
                out.push(crossing(prev, cur, axis, value));
                out.push(*cur);
            }
            (false, false) => {}
        }
    }
    out
}

fn crossing(a: &Vec3, b: &Vec3, axis: usize, value: f64) -> Vec3 {
    let t = (value - a[axis]) / (b[axis] - a[axis]);
    let mut p = a + (b - a) * t;
    p[axis] = value;
    p
}

/// Interval of slab `s` on `axis`; outermost slabs are unbounded.
fn slab_bounds(part: &SubregionPartition, axis: usize, s: usize) -> (f64, f64) {
    let cuts = &part.cuts[axis];
    let lo = if s == 0 { f64::NEG_INFINITY } else { cuts[s] };
    let hi = if s + 2 == cuts.len() { f64::INFINITY } else { cuts[s + 1] };
    (lo, hi)
}

fn clip_to_slab(poly: Vec<Vec3>, part: &SubregionPartition, slab: [usize; 3]) -> Vec<[Vec3; 3]> {
    let mut poly = poly;
    for a in 0..3 {
        let (lo, hi) = slab_bounds(part, a, slab[a]);
        if lo.is_finite() {
            poly = clip_polygon(&poly, a, lo, true);
        }
        if hi.is_finite() {
            poly = clip_polygon(&poly, a, hi, false);
        }
        if poly.len() < 3 {
            return Vec::new();
        }
    }
    (1..poly.len() - 1)
        .map(|i| [poly[0], poly[i], poly[i + 1]])
        .filter(|t| triangle_area(t) > 0.0)
        .collect()
}

/// Surface belonging to `region`: input triangles clipped to the slab box, plus
/// voxel faces shared with occupied voxels of other regions, snapped to the cut plane.
pub fn region_triangles(
    mesh: &TriMesh,
    grid: &VoxelGrid,
    part: &SubregionPartition,
    region: &Region,
) -> Vec<[Vec3; 3]> {
    let mut tris: Vec<[Vec3; 3]> = mesh
        .triangles()
        .flat_map(|t| clip_to_slab(t.to_vec(), part, region.slab))
        .collect();
    let mut member = vec![false; grid.len()];
    for &v in &region.voxels {
        member[v] = true;
    }
    let h = grid.spacing;
    for &v in &region.voxels {
        let c = grid.coords(v);
        for a in 0..3 {
            for dir in [-1i64, 1] {
                let n = c[a] as i64 + dir;
                if n < 0 || n >= grid.dims[a] as i64 {
                    continue;
                }
                let mut nc = c;
                nc[a] = n as usize;
                let ni = grid.index(nc[0], nc[1], nc[2]);
                if !grid.is_occupied(ni) || member[ni] {
                    continue;
                }
                let s = region.slab[a];
                let plane = if dir > 0 { part.cuts[a][s + 1] } else { part.cuts[a][s] };
                let center = grid.center(v);
                let (b, d) = ((a + 1) % 3, (a + 2) % 3);
                let corner = |u: f64, w: f64| {
                    let mut p = center;
                    p[a] = plane;
                    p[b] += u * h * 0.5;
                    p[d] += w * h * 0.5;
                    p
                };
                let quad = vec![corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];
                tris.extend(clip_to_slab(quad, part, region.slab));
            }
        }
    }
    tris
}

/// Affine per-axis map from a slab box onto the frame box of grid cell `target`.
#[derive(Debug, Clone, Copy)]
pub struct SlabMap {
    lo: Vec3,
    hi: Vec3,
    frame_lo: Vec3,
    frame_hi: Vec3,
}

impl SlabMap {
    pub fn new(part: &SubregionPartition, slab: [usize; 3], target: usize) -> Result<Self> {
        let frame = frame_cell_box(target).ok_or_else(|| Error::param(format!("no grid cell {target}")))?;
        let lo = Vec3::from_fn(|a, _| part.cuts[a][slab[a]]);
        let hi = Vec3::from_fn(|a, _| part.cuts[a][slab[a] + 1]);
        if (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(Error::DegenerateGeometry(format!("slab {slab:?} has zero width")));
        }
        Ok(Self { lo, hi, frame_lo: frame.min, frame_hi: frame.max })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|a, _| {
            let u = ((p[a] - self.lo[a]) / (self.hi[a] - self.lo[a])).clamp(0.0, 1.0);
            self.frame_lo[a] + u * (self.frame_hi[a] - self.frame_lo[a])
        })
    }
}

/// `POINTS_PER_CELL` area-weighted samples of the region surface mapped onto `target`.
pub fn region_cloud(
    mesh: &TriMesh,
    grid: &VoxelGrid,
    part: &SubregionPartition,
    region: &Region,
    target: usize,
    seed: u64,
) -> Result<PointCloud> {
    let tris = region_triangles(mesh, grid, part, region);
    let sampler = SurfaceSampler::new(tris)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(target as u64);
    let map = SlabMap::new(part, region.slab, target)?;
    let cloud = sampler.sample(POINTS_PER_CELL, &mut rng);
    Ok(PointCloud::new(cloud.points.iter().map(|p| map.apply(p)).collect()))
}

/// Grid cell a slab lands on when the partition is anchored at `offset`.
pub fn slab_cell(slab: [usize; 3], offset: [usize; 3]) -> Option<usize> {
    GridLayout::cell_at(std::array::from_fn(|a| slab[a] + offset[a]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{partition_grid, voxelize};

    #[test]
    fn clipped_halves_cover_the_cube_surface() {
        let mesh = TriMesh::axis_box(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
        let grid = voxelize(&mesh, 8).unwrap();
        let part = partition_grid(&grid, &[vec![0.5, 0.5], vec![1.0], vec![1.0]]).unwrap();
        for r in &part.regions {
            let area: f64 = region_triangles(&mesh, &grid, &part, r).iter().map(triangle_area).sum();
            // five outer faces of a unit cube plus the unit interface square
            assert!((area - 6.0).abs() < 1e-9, "area {area}");
        }
    }

    #[test]
    fn slab_map_hits_frame_cell() {
        let mesh = TriMesh::axis_box(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
        let grid = voxelize(&mesh, 8).unwrap();
        let part = partition_grid(&grid, &[vec![0.5, 0.5], vec![1.0], vec![1.0]]).unwrap();
        let r = part.region([1, 0, 0]).unwrap();
        let cloud = region_cloud(&mesh, &grid, &part, r, 1, 3).unwrap();
        let b = frame_cell_box(1).unwrap();
        assert!(cloud.points.iter().all(|p| b.contains(p, 1e-12)));
        assert_eq!(slab_cell([1, 1, 0], [0, 0, 1]), Some(11));
    }
}
