//! Base primitives (cube, through-hole cube, blind-hole cube), their ten
//! axis-oriented categories, surface sampling and the centered template
//! library used by template competition.

mod io;
mod mesh;

pub use io::{obj_string, read_obj, read_stl, read_xyz, write_obj, write_stl, write_xyz, xyz_string};
pub use mesh::{Aabb, TriMesh};

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Per-cell point budget; also the template size.
pub const POINTS_PER_CELL: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::param(format!("unknown axis '{other}'"))),
        }
    }
}

/// The ten primitive categories in their fixed encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveCategory {
    Cube,
    ThcZ,
    ThcX,
    ThcY,
    BhcPosZ,
    BhcNegZ,
    BhcPosX,
    BhcNegX,
    BhcPosY,
    BhcNegY,
}

/// Topological family of a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoleKind {
    None,
    Through(Axis),
    /// Blind hole opening on the `positive` (or negative) face normal to the axis.
    Blind { axis: Axis, positive: bool },
}

impl PrimitiveCategory {
    pub const ALL: [PrimitiveCategory; 10] = [
        PrimitiveCategory::Cube,
        PrimitiveCategory::ThcZ,
        PrimitiveCategory::ThcX,
        PrimitiveCategory::ThcY,
        PrimitiveCategory::BhcPosZ,
        PrimitiveCategory::BhcNegZ,
        PrimitiveCategory::BhcPosX,
        PrimitiveCategory::BhcNegX,
        PrimitiveCategory::BhcPosY,
        PrimitiveCategory::BhcNegY,
    ];

    /// Encoding index in `1..=10`.
    pub fn index(self) -> u8 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    pub fn from_index(index: u8) -> Option<Self> {
        (1..=10)
            .contains(&index)
            .then(|| Self::ALL[index as usize - 1])
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveCategory::Cube => "cube",
            PrimitiveCategory::ThcZ => "THC+Z",
            PrimitiveCategory::ThcX => "THC+X",
            PrimitiveCategory::ThcY => "THC+Y",
            PrimitiveCategory::BhcPosZ => "BHC+Z",
            PrimitiveCategory::BhcNegZ => "BHC-Z",
            PrimitiveCategory::BhcPosX => "BHC+X",
            PrimitiveCategory::BhcNegX => "BHC-X",
            PrimitiveCategory::BhcPosY => "BHC+Y",
            PrimitiveCategory::BhcNegY => "BHC-Y",
        }
    }

    pub fn hole(self) -> HoleKind {
        use PrimitiveCategory::*;
        match self {
            Cube => HoleKind::None,
            ThcZ => HoleKind::Through(Axis::Z),
            ThcX => HoleKind::Through(Axis::X),
            ThcY => HoleKind::Through(Axis::Y),
            BhcPosZ => HoleKind::Blind { axis: Axis::Z, positive: true },
            BhcNegZ => HoleKind::Blind { axis: Axis::Z, positive: false },
            BhcPosX => HoleKind::Blind { axis: Axis::X, positive: true },
            BhcNegX => HoleKind::Blind { axis: Axis::X, positive: false },
            BhcPosY => HoleKind::Blind { axis: Axis::Y, positive: true },
            BhcNegY => HoleKind::Blind { axis: Axis::Y, positive: false },
        }
    }

    pub fn is_thc(self) -> bool {
        matches!(self.hole(), HoleKind::Through(_))
    }

    pub fn is_bhc(self) -> bool {
        matches!(self.hole(), HoleKind::Blind { .. })
    }

    /// Genus of the primitive's boundary surface.
    pub fn genus(self) -> i64 {
        if self.is_thc() {
            1
        } else {
            0
        }
    }
}

impl fmt::Display for PrimitiveCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('−', "-");
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::param(format!("unknown primitive category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HoleShape {
    /// Square prism hole of half-width `hole_radius`.
    Square,
    /// Regular polygon approximating a circular hole of radius `hole_radius`.
    Polygon { segments: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveParams {
    pub edge: f64,
    pub hole_radius: f64,
    pub hole_depth: f64,
    pub hole_shape: HoleShape,
}

impl Default for PrimitiveParams {
    fn default() -> Self {
        Self {
            edge: 1.0,
            hole_radius: 0.25,
            hole_depth: 0.5,
            hole_shape: HoleShape::Square,
        }
    }
}

impl PrimitiveParams {
    pub fn with_edge(edge: f64) -> Self {
        let base = Self::default();
        Self {
            edge,
            hole_radius: base.hole_radius * edge,
            hole_depth: base.hole_depth * edge,
            ..base
        }
    }

    fn validate(&self, category: PrimitiveCategory) -> Result<()> {
        if !(self.edge > 0.0) || !self.edge.is_finite() {
            return Err(Error::param(format!("edge length must be positive, got {}", self.edge)));
        }
        if category == PrimitiveCategory::Cube {
            return Ok(());
        }
        if !(self.hole_radius > 0.0 && self.hole_radius < 0.5 * self.edge) {
            return Err(Error::param(format!(
                "hole radius {} must lie in (0, {})",
                self.hole_radius,
                0.5 * self.edge
            )));
        }
        if category.is_bhc() && !(self.hole_depth > 0.0 && self.hole_depth < self.edge) {
            return Err(Error::param(format!(
                "hole depth {} must lie in (0, {})",
                self.hole_depth, self.edge
            )));
        }
        if let HoleShape::Polygon { segments } = self.hole_shape {
            if segments < 8 || segments % 4 != 0 {
                return Err(Error::param(format!(
                    "polygonal hole needs a multiple of 4 segments >= 8, got {segments}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the closed, outward-oriented surface of `category` occupying `[0, edge]^3`.
pub fn make_primitive_mesh(category: PrimitiveCategory, params: &PrimitiveParams) -> Result<TriMesh> {
    params.validate(category)?;
    let mesh = match category.hole() {
        HoleKind::None => TriMesh::axis_box(Vec3::zeros(), Vec3::repeat(params.edge)),
        HoleKind::Through(axis) => holed_cube(params, axis, None),
        HoleKind::Blind { axis, positive } => holed_cube(params, axis, Some(positive)),
    };
    Ok(mesh)
}

/// Maps local `(u, v, w)` with `w` along the hole axis to model coordinates.
/// Cyclic permutations only, so orientation is preserved.
fn local_to_global(axis: Axis, p: Vec3) -> Vec3 {
    match axis {
        Axis::Z => Vec3::new(p.x, p.y, p.z),
        Axis::X => Vec3::new(p.z, p.x, p.y),
        Axis::Y => Vec3::new(p.y, p.z, p.x),
    }
}

/// Ray from the center at `theta` hitting a square of half-width `h`, or a circle of radius `h`.
fn ring_point(theta: f64, h: f64, square: bool) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    if !square {
        return (h * c, h * s);
    }
    let m = c.abs().max(s.abs());
    let snap = |v: f64| {
        if (v.abs() - h).abs() < 1e-12 * h.max(1.0) {
            h.copysign(v)
        } else {
            v
        }
    };
    (snap(h * c / m), snap(h * s / m))
}

fn holed_cube(params: &PrimitiveParams, axis: Axis, blind: Option<bool>) -> TriMesh {
    let e = params.edge;
    let ctr = 0.5 * e;
    let n = match params.hole_shape {
        HoleShape::Square => 4,
        HoleShape::Polygon { segments } => segments,
    };
    let square_hole = matches!(params.hole_shape, HoleShape::Square);
    let floor_w = match blind {
        None => 0.0,
        Some(_) => e - params.hole_depth,
    };

    let mut verts: Vec<Vec3> = Vec::with_capacity(4 * n + 2);
    let ring = |h: f64, square: bool, w: f64, verts: &mut Vec<Vec3>| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let theta = std::f64::consts::FRAC_PI_4 + std::f64::consts::TAU * i as f64 / n as f64;
                let (du, dv) = ring_point(theta, h, square);
                verts.push(Vec3::new(ctr + du, ctr + dv, w));
                verts.len() - 1
            })
            .collect()
    };
    let o_top = ring(ctr, true, e, &mut verts);
    let o_bot = ring(ctr, true, 0.0, &mut verts);
    let i_top = ring(params.hole_radius, square_hole, e, &mut verts);
    let i_bot = ring(params.hole_radius, square_hole, floor_w, &mut verts);

    let mut faces: Vec<[usize; 3]> = Vec::new();
    let quad = |a: usize, b: usize, c: usize, d: usize, faces: &mut Vec<[usize; 3]>| {
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    };
    for i in 0..n {
        let j = (i + 1) % n;
        quad(o_top[i], o_top[j], i_top[j], i_top[i], &mut faces);
        quad(o_bot[i], o_bot[j], o_top[j], o_top[i], &mut faces);
        quad(i_bot[j], i_bot[i], i_top[i], i_top[j], &mut faces);
        if blind.is_none() {
            quad(o_bot[i], i_bot[i], i_bot[j], o_bot[j], &mut faces);
        }
    }
    if blind.is_some() {
        verts.push(Vec3::new(ctr, ctr, floor_w));
        let floor_c = verts.len() - 1;
        verts.push(Vec3::new(ctr, ctr, 0.0));
        let bottom_c = verts.len() - 1;
        for i in 0..n {
            let j = (i + 1) % n;
            faces.push([floor_c, i_bot[i], i_bot[j]]);
            faces.push([bottom_c, o_bot[j], o_bot[i]]);
        }
    }

    let mut mesh = TriMesh { vertices: verts, faces };
    if blind == Some(false) {
        for v in &mut mesh.vertices {
            v.z = e - v.z;
        }
        mesh.flip_orientation();
    }
    for v in &mut mesh.vertices {
        *v = local_to_global(axis, *v);
    }
    mesh
}

/// An ordered list of 3D points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn centered(&self) -> PointCloud {
        let c = self.centroid();
        PointCloud::new(self.points.iter().map(|p| p - c).collect())
    }

    pub fn translated(&self, offset: Vec3) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| p + offset).collect())
    }

    pub fn scaled(&self, factor: f64) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| p * factor).collect())
    }

    pub fn bbox(&self) -> Option<Aabb> {
        Aabb::from_points(self.points.iter().copied())
    }
}

/// Area-weighted uniform sampler over a triangle soup.
#[derive(Debug, Clone)]
pub struct SurfaceSampler {
    triangles: Vec<[Vec3; 3]>,
    cumulative: Vec<f64>,
}

impl SurfaceSampler {
    pub fn new(triangles: Vec<[Vec3; 3]>) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = triangles
            .iter()
            .map(|t| {
                acc += triangle_area(t);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::DegenerateGeometry("surface has zero total area".into()));
        }
        Ok(Self { triangles, cumulative })
    }

    pub fn from_mesh(mesh: &TriMesh) -> Result<Self> {
        Self::new(mesh.triangles().collect())
    }

    pub fn total_area(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let target = rng.random::<f64>() * self.total_area();
        let idx = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.triangles.len() - 1);
        let [a, b, c] = self.triangles[idx];
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PointCloud {
        PointCloud::new((0..n).map(|_| self.sample_one(rng)).collect())
    }
}

pub fn triangle_area(t: &[Vec3; 3]) -> f64 {
    0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
}

/// Samples `n` points uniformly by area on the mesh surface.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::param("sample count must be at least 1"));
    }
    let sampler = SurfaceSampler::from_mesh(mesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(n, &mut rng))
}

/// Centered 512-point clouds, one per category.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary {
    templates: Vec<PointCloud>,
    offsets: Vec<Vec3>,
    edge: f64,
}

impl TemplateLibrary {
    /// Unit-edge templates sampled with per-category streams of `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_edge(seed, 1.0)
    }

    /// Templates at cell edge `edge`: the unit-edge samples scaled uniformly.
    pub fn with_edge(seed: u64, edge: f64) -> Self {
        let params = PrimitiveParams::default();
        let (templates, offsets) = PrimitiveCategory::ALL
            .iter()
            .map(|&cat| {
                let mesh = make_primitive_mesh(cat, &params).expect("default params are valid");
                let sampler = SurfaceSampler::from_mesh(&mesh).expect("primitive has area");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(cat.index() as u64);
                let raw = sampler.sample(POINTS_PER_CELL, &mut rng);
                let offset = (raw.centroid() - Vec3::repeat(0.5)) * edge;
                (raw.centered().scaled(edge), offset)
            })
            .unzip();
        Self { templates, offsets, edge }
    }

    /// Template centroid relative to the center of its cell box, at this edge length.
    pub fn offset(&self, category: PrimitiveCategory) -> Vec3 {
        self.offsets[category.index() as usize - 1]
    }

    /// The template placed in a cell box centered at `center`.
    pub fn placed(&self, category: PrimitiveCategory, center: Vec3) -> PointCloud {
        self.get(category).translated(center + self.offset(category))
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn get(&self, category: PrimitiveCategory) -> &PointCloud {
        &self.templates[category.index() as usize - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PrimitiveCategory, &PointCloud)> {
        PrimitiveCategory::ALL.iter().copied().zip(self.templates.iter())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_indices_are_a_bijection() {
        for (i, c) in PrimitiveCategory::ALL.iter().enumerate() {
            assert_eq!(c.index() as usize, i + 1);
            assert_eq!(PrimitiveCategory::from_index(c.index()), Some(*c));
            assert_eq!(c.name().parse::<PrimitiveCategory>().unwrap(), *c);
        }
        assert_eq!(PrimitiveCategory::from_index(0), None);
        assert_eq!(PrimitiveCategory::from_index(11), None);
    }

    #[test]
    fn cube_mesh_counts() {
        let m = make_primitive_mesh(PrimitiveCategory::Cube, &PrimitiveParams::default()).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn primitive_volumes_match_solid_minus_hole() {
        for shape in [HoleShape::Square, HoleShape::Polygon { segments: 16 }] {
            let params = PrimitiveParams { hole_shape: shape, ..Default::default() };
            let hole_area = match shape {
                HoleShape::Square => 0.25,
                HoleShape::Polygon { segments } => {
                    let n = segments as f64;
                    0.5 * n * 0.25f64.powi(2) * (std::f64::consts::TAU / n).sin()
                }
            };
            for cat in PrimitiveCategory::ALL {
                let m = make_primitive_mesh(cat, &params).unwrap();
                let expected = match cat.hole() {
                    HoleKind::None => 1.0,
                    HoleKind::Through(_) => 1.0 - hole_area,
                    HoleKind::Blind { .. } => 1.0 - 0.5 * hole_area,
                };
                assert!(
                    (m.signed_volume() - expected).abs() < 1e-12,
                    "{cat} {shape:?}: {} vs {expected}",
                    m.signed_volume()
                );
                let bb = m.bbox().unwrap();
                assert!((bb.min - Vec3::zeros()).norm() < 1e-12);
                assert!((bb.max - Vec3::repeat(1.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = PrimitiveParams { edge: 0.0, ..Default::default() };
        assert!(matches!(make_primitive_mesh(PrimitiveCategory::Cube, &bad), Err(Error::Parameter(_))));
        let bad = PrimitiveParams { hole_radius: 0.6, ..Default::default() };
        assert!(make_primitive_mesh(PrimitiveCategory::ThcZ, &bad).is_err());
        let bad = PrimitiveParams { hole_depth: 1.0, ..Default::default() };
        assert!(make_primitive_mesh(PrimitiveCategory::BhcPosX, &bad).is_err());
        // depth is irrelevant for through holes
        assert!(make_primitive_mesh(PrimitiveCategory::ThcX, &bad).is_ok());
    }

    #[test]
    fn sampling_is_deterministic_and_on_cube() {
        let m = make_primitive_mesh(PrimitiveCategory::Cube, &PrimitiveParams::default()).unwrap();
        let a = sample_surface(&m, 512, 42).unwrap();
        let b = sample_surface(&m, 512, 42).unwrap();
        assert_eq!(a.len(), 512);
        assert_eq!(a, b);
        for p in &a.points {
            assert!(p.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
            let on_face = p.iter().any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12);
            assert!(on_face, "{p:?} not on a face");
        }
    }

    #[test]
    fn sampling_fractions_follow_face_areas() {
        let m = make_primitive_mesh(PrimitiveCategory::Cube, &PrimitiveParams::default()).unwrap();
        let cloud = sample_surface(&m, 100_000, 7).unwrap();
        let mut counts = [0usize; 6];
        for p in &cloud.points {
            let face = (0..3)
                .find_map(|a| {
                    if p[a].abs() < 1e-12 {
                        Some(2 * a)
                    } else if (p[a] - 1.0).abs() < 1e-12 {
                        Some(2 * a + 1)
                    } else {
                        None
                    }
                })
                .unwrap();
            counts[face] += 1;
        }
        for c in counts {
            let frac = c as f64 / 100_000.0;
            assert!((frac - 1.0 / 6.0).abs() < 0.01, "face fraction {frac}");
        }
    }

    #[test]
    fn zero_area_and_zero_count_rejected() {
        let flat = TriMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            faces: vec![[0, 1, 2]],
        };
        assert!(matches!(sample_surface(&flat, 4, 0), Err(Error::DegenerateGeometry(_))));
        let m = make_primitive_mesh(PrimitiveCategory::Cube, &PrimitiveParams::default()).unwrap();
        assert!(sample_surface(&m, 0, 0).is_err());
        assert_eq!(sample_surface(&m, 1, 0).unwrap().len(), 1);
    }

    #[test]
    fn templates_are_centered() {
        let lib = TemplateLibrary::new(42);
        assert_eq!(lib.len(), 10);
        for (_, t) in lib.iter() {
            assert_eq!(t.len(), POINTS_PER_CELL);
            assert!(t.centroid().norm() <= 1e-9);
        }
        assert_eq!(lib, TemplateLibrary::new(42));
        assert_ne!(lib, TemplateLibrary::new(43));
    }

    #[test]
    fn bhc_sign_variants_are_reflections() {
        let p = PrimitiveParams::default();
        let pos = make_primitive_mesh(PrimitiveCategory::BhcPosZ, &p).unwrap();
        let neg = make_primitive_mesh(PrimitiveCategory::BhcNegZ, &p).unwrap();
        let mut reflected = pos.clone();
        for v in &mut reflected.vertices {
            v.z = 1.0 - v.z;
        }
        reflected.flip_orientation();
        assert_eq!(reflected.bbox(), neg.bbox());
        assert!((reflected.signed_volume() - neg.signed_volume()).abs() < 1e-12);
        let mut a: Vec<_> = reflected.vertices.iter().map(|v| [v.x, v.y, v.z].map(|c| (c * 1e9).round() as i64)).collect();
        let mut b: Vec<_> = neg.vertices.iter().map(|v| [v.x, v.y, v.z].map(|c| (c * 1e9).round() as i64)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
