//! Exact voxel-built solids for pipeline fixtures. Each cell is a 4x4x4 block of
//! sub-voxels, so square holes of half the cell width and half-depth blind holes
//! are represented without approximation.

use crate::error::{Error, Result};
use crate::grid::{labels_from_values, GridLayout, Labels, CELL_COUNT, GRID_DIMS};
use crate::primitives::{Axis, HoleKind, TriMesh, Vec3};
use crate::topology::{boundary_surface, VoxelGrid};

const SUB: usize = 4;

fn solid_sub_voxel(kind: HoleKind, s: [usize; 3]) -> bool {
    let central = |k: usize| (1..3).contains(&k);
    let axis_of = |a: Axis| a.index();
    match kind {
        HoleKind::None => true,
        HoleKind::Through(a) => {
            let ax = axis_of(a);
            !(0..3).filter(|&k| k != ax).all(|k| central(s[k]))
        }
        HoleKind::Blind { axis, positive } => {
            let ax = axis_of(axis);
            let in_column = (0..3).filter(|&k| k != ax).all(|k| central(s[k]));
            let upper = if positive { s[ax] >= SUB / 2 } else { s[ax] < SUB / 2 };
            !(in_column && upper)
        }
    }
}

/// Voxel occupancy of the labelled cells, in model space with unit cells.
pub fn fixture_voxels(labels: &Labels) -> Result<VoxelGrid> {
    let dims = GRID_DIMS.map(|d| d * SUB);
    let mut grid = VoxelGrid::new(dims, Vec3::zeros(), 1.0 / SUB as f64)?;
    for cell in 1..=CELL_COUNT {
        let Some(cat) = labels[cell - 1].category() else { continue };
        let c = GridLayout::coords(cell).unwrap();
        for k in 0..SUB {
            for j in 0..SUB {
                for i in 0..SUB {
                    if solid_sub_voxel(cat.hole(), [i, j, k]) {
                        let idx = grid.index(c[0] * SUB + i, c[1] * SUB + j, c[2] * SUB + k);
                        grid.set(idx, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Closed boundary of the labelled cells' union.
pub fn fixture_mesh(labels: &Labels) -> Result<TriMesh> {
    let grid = fixture_voxels(labels)?;
    let occupied = grid.occupied();
    if occupied.is_empty() {
        return Err(Error::EmptyAssembly);
    }
    boundary_surface(&grid, &occupied)
}

/// Three Z through-hole cells and one cube forming a 2x2x1 block.
pub fn triple_hole_labels() -> Labels {
    labels_from_values(&[2, 2, 0, 2, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap()
}

/// Triple-hole solid and the split ratios that isolate its four cells.
pub fn triple_hole_fixture() -> Result<(TriMesh, [Vec<f64>; 3])> {
    Ok((fixture_mesh(&triple_hole_labels())?, [vec![0.5, 0.5], vec![0.5, 0.5], vec![1.0]]))
}
