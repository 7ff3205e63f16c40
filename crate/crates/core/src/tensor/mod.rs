//! The 64x96x3 geometry tensor: normalization, PCA alignment, block layout,
//! and the binary tensor file format.

mod pca;

pub use pca::{pca_align, pca_align_mesh};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Assembly, GridLayout, Labels, CELL_COUNT};
use crate::primitives::{Aabb, PointCloud, TemplateLibrary, TriMesh, Vec3, POINTS_PER_CELL};

pub const ROWS: usize = 64;
pub const COLS: usize = 96;
pub const CHANNELS: usize = 3;
pub const BLOCK_ROWS: usize = 16;
pub const BLOCK_COLS: usize = 32;
pub const TENSOR_LEN: usize = ROWS * COLS * CHANNELS;
/// Allowed slack beyond `[-1, 1]`.
pub const RANGE_SLACK: f64 = 0.02;
/// Points at or below this norm are placeholders.
pub const PLACEHOLDER_NORM: f64 = 1e-4;

const MAGIC: &[u8; 8] = b"SDPMTNSR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryTensor {
    data: Vec<f64>,
}

impl Default for GeometryTensor {
    fn default() -> Self {
        Self::zeros()
    }
}

impl GeometryTensor {
    pub fn zeros() -> Self {
        Self { data: vec![0.0; TENSOR_LEN] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != TENSOR_LEN {
            return Err(Error::Layout(format!("tensor needs {TENSOR_LEN} values, got {}", data.len())));
        }
        Ok(Self { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(row: usize, col: usize) -> usize {
        (row * COLS + col) * CHANNELS
    }

    pub fn point(&self, row: usize, col: usize) -> Vec3 {
        let o = Self::offset(row, col);
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    pub fn set_point(&mut self, row: usize, col: usize, p: Vec3) {
        let o = Self::offset(row, col);
        self.data[o..o + 3].copy_from_slice(p.as_slice());
    }

    /// `(row, col)` of the `k`-th slot of cell `cell`'s block.
    pub fn slot(cell: usize, k: usize) -> (usize, usize) {
        let (r, c) = GridLayout::block(cell).expect("cell in 1..=12");
        (r * BLOCK_ROWS + k / BLOCK_COLS, c * BLOCK_COLS + k % BLOCK_COLS)
    }

    /// All 512 entries of a block, placeholders included, in row-major order.
    pub fn block_points(&self, cell: usize) -> Vec<Vec3> {
        (0..POINTS_PER_CELL)
            .map(|k| {
                let (r, c) = Self::slot(cell, k);
                self.point(r, c)
            })
            .collect()
    }

    pub fn set_block(&mut self, cell: usize, points: &[Vec3]) {
        for (k, p) in points.iter().enumerate() {
            let (r, c) = Self::slot(cell, k);
            self.set_point(r, c, *p);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn in_range(&self) -> bool {
        self.max_abs() <= 1.0 + RANGE_SLACK
    }

    /// Elementwise `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        Self { data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Adds `c * v[channel]` to every element of each channel.
    pub fn add_channels(&self, v: &Vec3, c: f64) -> Self {
        let mut out = self.clone();
        for (i, x) in out.data.iter_mut().enumerate() {
            *x += c * v[i % CHANNELS];
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * TENSOR_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [ROWS, COLS, CHANNELS] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Error::format("tensor file", m);
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(fail("missing SDPMTNSR header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != VERSION {
            return Err(fail(format!("unsupported version {}", word(0))));
        }
        let dims = [word(1), word(2), word(3)];
        if dims != [ROWS as u32, COLS as u32, CHANNELS as u32] {
            return Err(fail(format!("unsupported dims {dims:?}")));
        }
        let body = &bytes[24..];
        if body.len() != 4 * TENSOR_LEN {
            return Err(fail(format!("expected {} payload bytes, got {}", 4 * TENSOR_LEN, body.len())));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rounds every value through `f32`, matching a write/read cycle.
    pub fn quantized(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }
}

/// `p -> scale * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub scale: f64,
    pub translation: Vec3,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, translation: Vec3::zeros() }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.translation
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        (p - self.translation) / self.scale
    }

    pub fn inverse(&self) -> Self {
        Self { scale: 1.0 / self.scale, translation: -self.translation / self.scale }
    }

    pub fn apply_cloud(&self, c: &PointCloud) -> PointCloud {
        PointCloud::new(c.points.iter().map(|p| self.apply(p)).collect())
    }

    pub fn apply_mesh(&self, m: &TriMesh) -> TriMesh {
        TriMesh { vertices: m.vertices.iter().map(|p| self.apply(p)).collect(), faces: m.faces.clone() }
    }

    pub fn apply_box(&self, b: &Aabb) -> Aabb {
        Aabb { min: self.apply(&b.min), max: self.apply(&b.max) }
    }
}

fn box_transform(b: &Aabb) -> Result<NormalizationTransform> {
    let longest = b.longest_edge();
    if !(longest > 0.0) || !longest.is_finite() {
        return Err(Error::DegenerateGeometry("bounding box has zero extent".into()));
    }
    let scale = 2.0 / longest;
    Ok(NormalizationTransform { scale, translation: -b.center() * scale })
}

/// Maps the bounding box's longest edge to length 2 and its center to the origin.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    let b = cloud
        .bbox()
        .ok_or_else(|| Error::DegenerateGeometry("empty cloud".into()))?;
    let t = box_transform(&b)?;
    Ok((t.apply_cloud(cloud), t))
}

pub fn normalize_mesh(mesh: &TriMesh) -> Result<(TriMesh, NormalizationTransform)> {
    let b = mesh
        .bbox()
        .ok_or_else(|| Error::DegenerateGeometry("empty mesh".into()))?;
    let t = box_transform(&b)?;
    Ok((t.apply_mesh(mesh), t))
}

/// Fixed normalization of the model-space grid box `[0,3]x[0,2]x[0,2]`.
/// Dataset and inference tensors share it so cell scale is preserved.
pub fn grid_frame() -> NormalizationTransform {
    box_transform(&GridLayout::grid_box()).unwrap()
}

/// Cell edge length in the grid frame.
pub const FRAME_CELL_EDGE: f64 = 2.0 / 3.0;

pub fn frame_cell_box(cell: usize) -> Option<Aabb> {
    Some(grid_frame().apply_box(&GridLayout::cell_box(cell)?))
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

pub fn sort_points(points: &mut [Vec3]) {
    points.sort_by(lex_cmp);
}

/// Writes each cell's points, sorted by (X, Y, Z), into its block; null cells stay zero.
pub fn tensorize(cells: &[PointCloud]) -> Result<GeometryTensor> {
    if cells.len() != CELL_COUNT {
        return Err(Error::Layout(format!("expected {CELL_COUNT} cell clouds, got {}", cells.len())));
    }
    let mut t = GeometryTensor::zeros();
    for (j, cloud) in cells.iter().enumerate() {
        match cloud.len() {
            0 => {}
            POINTS_PER_CELL => {
                let mut pts = cloud.points.clone();
                sort_points(&mut pts);
                t.set_block(j + 1, &pts);
            }
            n => {
                return Err(Error::Layout(format!(
                    "cell {} has {n} points; expected 0 or {POINTS_PER_CELL}",
                    j + 1
                )))
            }
        }
    }
    Ok(t)
}

/// Per-block points with placeholders dropped, in block order.
pub fn detensorize(t: &GeometryTensor) -> Vec<PointCloud> {
    (1..=CELL_COUNT)
        .map(|cell| {
            PointCloud::new(
                t.block_points(cell)
                    .into_iter()
                    .filter(|p| p.norm() > PLACEHOLDER_NORM)
                    .collect(),
            )
        })
        .collect()
}

/// Tensor of an assembly mapped into the grid frame.
pub fn assembly_tensor(asm: &Assembly) -> Result<GeometryTensor> {
    let f = grid_frame();
    let cells: Vec<PointCloud> = asm.cell_clouds.iter().map(|c| f.apply_cloud(c)).collect();
    tensorize(&cells)
}

/// Ideal target for `labels`: each occupied cell holds its category's template
/// placed in the frame cell box. `lib` must be built at `FRAME_CELL_EDGE`.
pub fn ideal_tensor(labels: &Labels, lib: &TemplateLibrary) -> Result<GeometryTensor> {
    if (lib.edge() - FRAME_CELL_EDGE).abs() > 1e-12 {
        return Err(Error::param("ideal tensors need a frame-edge template library"));
    }
    let cells: Vec<PointCloud> = labels
        .iter()
        .enumerate()
        .map(|(j, l)| match l.category() {
            Some(cat) => lib.placed(cat, frame_cell_box(j + 1).unwrap().center()),
            None => PointCloud::default(),
        })
        .collect();
    tensorize(&cells)
}
