//! Structured all-hex meshes of cube-only polycubes and scaled-Jacobian quality.
//!
//! Hex corner convention: corners 0..3 are the bottom face counterclockwise seen
//! from +w, corners 4..7 the top face in the same order (4 above 0).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridLayout, Labels, CELL_COUNT};
use crate::primitives::{PrimitiveCategory, Vec3};
use crate::topology::UnionFind;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HexMesh {
    pub vertices: Vec<Vec3>,
    pub elements: Vec<[usize; 8]>,
}

impl HexMesh {
    pub fn corners(&self, e: usize) -> [Vec3; 8] {
        self.elements[e].map(|i| self.vertices[i])
    }

    pub fn validate(&self) -> Result<()> {
        for (k, el) in self.elements.iter().enumerate() {
            if el.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::format("hex mesh", format!("element {k} index out of range")));
            }
            let mut s = el.to_vec();
            s.sort_unstable();
            s.dedup();
            if s.len() != 8 {
                return Err(Error::format("hex mesh", format!("element {k} repeats a vertex")));
            }
        }
        Ok(())
    }
}

const WELD_QUANTUM: f64 = 1e-9;

fn weld_key(p: &Vec3) -> [i64; 3] {
    [p.x, p.y, p.z].map(|v| (v / WELD_QUANTUM).round() as i64)
}

/// Face-connected groups of occupied cells, each sorted ascending.
pub fn occupancy_components(labels: &Labels) -> Vec<Vec<usize>> {
    let occupied: Vec<usize> = (1..=CELL_COUNT).filter(|&i| !labels[i - 1].is_null()).collect();
    let mut uf = UnionFind::new(CELL_COUNT + 1);
    for &a in &occupied {
        for &b in &occupied {
            if a < b && GridLayout::adjacent(a, b) {
                uf.union(a, b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of: HashMap<usize, usize> = HashMap::new();
    for &c in &occupied {
        let r = uf.find(c);
        let g = *root_of.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(c);
    }
    groups
}

/// `n^3` structured hexes per occupied cube cell, welded across shared faces.
pub fn polycube_to_hex(labels: &Labels, n: usize) -> Result<HexMesh> {
    if n == 0 {
        return Err(Error::param("subdivision count must be at least 1"));
    }
    for (j, l) in labels.iter().enumerate() {
        if let Some(cat) = l.category() {
            if cat != PrimitiveCategory::Cube {
                return Err(Error::UnsupportedCell(format!("cell {} is labelled {cat}", j + 1)));
            }
        }
    }
    if labels.iter().all(|l| l.is_null()) {
        return Err(Error::EmptyAssembly);
    }
    let mut mesh = HexMesh::default();
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let h = 1.0 / n as f64;
    for cell in (1..=CELL_COUNT).filter(|&i| !labels[i - 1].is_null()) {
        let o = GridLayout::cell_box(cell).unwrap().min;
        let mut vid = |i: usize, j: usize, k: usize, mesh: &mut HexMesh| -> usize {
            let p = o + Vec3::new(i as f64, j as f64, k as f64) * h;
            *index.entry(weld_key(&p)).or_insert_with(|| {
                mesh.vertices.push(p);
                mesh.vertices.len() - 1
            })
        };
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let el = [
                        vid(i, j, k, &mut mesh),
                        vid(i + 1, j, k, &mut mesh),
                        vid(i + 1, j + 1, k, &mut mesh),
                        vid(i, j + 1, k, &mut mesh),
                        vid(i, j, k + 1, &mut mesh),
                        vid(i + 1, j, k + 1, &mut mesh),
                        vid(i + 1, j + 1, k + 1, &mut mesh),
                        vid(i, j + 1, k + 1, &mut mesh),
                    ];
                    mesh.elements.push(el);
                }
            }
        }
    }
    Ok(mesh)
}

/// Edge-neighbour corners of each corner, ordered so an undistorted hex is right-handed.
const CORNER_EDGES: [[usize; 3]; 8] = [
    [1, 3, 4],
    [2, 0, 5],
    [3, 1, 6],
    [0, 2, 7],
    [7, 5, 0],
    [4, 6, 1],
    [5, 7, 2],
    [6, 4, 3],
];

/// Minimum over corners of the triple product of the normalized edge vectors.
pub fn sj_element(corners: &[Vec3; 8]) -> f64 {
    let mut worst = f64::INFINITY;
    for (c, nb) in CORNER_EDGES.iter().enumerate() {
        let e: Vec<Vec3> = nb.iter().map(|&k| corners[k] - corners[c]).collect();
        if e.iter().any(|v| v.norm() < 1e-12) {
            return -1.0;
        }
        let u: Vec<Vec3> = e.iter().map(|v| v.normalize()).collect();
        worst = worst.min(u[0].dot(&u[1].cross(&u[2])));
    }
    worst.clamp(-1.0, 1.0)
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QualityReport {
    pub elements: usize,
    pub per_element_min_sj: Vec<f64>,
    pub global_min: f64,
    /// Counts over 20 uniform bins on `[-1, 1]`.
    pub histogram: Vec<usize>,
}

impl QualityReport {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        let w = 2.0 / HISTOGRAM_BINS as f64;
        for (b, c) in self.histogram.iter().enumerate() {
            let lo = -1.0 + w * b as f64;
            let _ = writeln!(out, "{lo:.2},{:.2},{c}", lo + w);
        }
        out
    }
}

pub fn quality(m: &HexMesh) -> Result<QualityReport> {
    if m.elements.is_empty() {
        return Err(Error::param("quality of an empty hex mesh"));
    }
    m.validate()?;
    let per: Vec<f64> = (0..m.elements.len()).into_par_iter().map(|e| sj_element(&m.corners(e))).collect();
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    for &s in &per {
        let b = (((s + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
        histogram[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Ok(QualityReport {
        elements: per.len(),
        global_min: per.iter().copied().fold(f64::INFINITY, f64::min),
        per_element_min_sj: per,
        histogram,
    })
}

pub fn vtk_string(m: &HexMesh) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\npolycube hex mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", m.vertices.len());
    for p in &m.vertices {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    let _ = writeln!(out, "CELLS {} {}", m.elements.len(), 9 * m.elements.len());
    for el in &m.elements {
        let ids: Vec<String> = el.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "8 {}", ids.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {}", m.elements.len());
    for _ in &m.elements {
        out.push_str("12\n");
    }
    out
}

pub fn write_vtk(m: &HexMesh, path: &Path) -> Result<()> {
    fs::write(path, vtk_string(m)).map_err(|e| Error::io(path, e))
}

pub fn parse_vtk(text: &str) -> Result<HexMesh> {
    let fail = |m: &str| Error::format("VTK", m.to_string());
    let mut toks = text
        .lines()
        .skip_while(|l| !l.starts_with("DATASET"))
        .skip(1)
        .flat_map(|l| l.split_whitespace());
    let mut next = || toks.next().ok_or_else(|| fail("unexpected end of file"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| fail("bad integer"));
    if next()? != "POINTS" {
        return Err(fail("expected POINTS"));
    }
    let np = num(next()?)?;
    next()?;
    let mut mesh = HexMesh::default();
    for _ in 0..np {
        let mut c = [0.0; 3];
        for v in &mut c {
            *v = next()?.parse().map_err(|_| fail("bad coordinate"))?;
        }
        mesh.vertices.push(Vec3::from(c));
    }
    if next()? != "CELLS" {
        return Err(fail("expected CELLS"));
    }
    let nc = num(next()?)?;
    next()?;
    for _ in 0..nc {
        if num(next()?)? != 8 {
            return Err(fail("only 8-node cells are supported"));
        }
        let mut el = [0usize; 8];
        for v in &mut el {
            *v = num(next()?)?;
        }
        mesh.elements.push(el);
    }
    if next()? != "CELL_TYPES" || num(next()?)? != nc {
        return Err(fail("expected CELL_TYPES matching CELLS"));
    }
    for _ in 0..nc {
        if next()? != "12" {
            return Err(fail("only hexahedra (type 12) are supported"));
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn read_vtk(path: &Path) -> Result<HexMesh> {
    parse_vtk(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{labels_from_values, CellLabel};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn cubes(cells: &[usize]) -> Labels {
        let mut l = [CellLabel::NULL; CELL_COUNT];
        for &c in cells {
            l[c - 1] = PrimitiveCategory::Cube.into();
        }
        l
    }

    fn unit_hex() -> [Vec3; 8] {
        [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
        ]
    }

    fn lattice_oracle(cells: &[usize], n: usize) -> usize {
        let mut pts = HashSet::new();
        for &c in cells {
            let o = GridLayout::coords(c).unwrap();
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        pts.insert((o[0] * n + i, o[1] * n + j, o[2] * n + k));
                    }
                }
            }
        }
        pts.len()
    }

    #[test]
    fn structured_counts() {
        let m = polycube_to_hex(&cubes(&[1]), 2).unwrap();
        assert_eq!((m.vertices.len(), m.elements.len()), (27, 8));
        let m = polycube_to_hex(&cubes(&[1, 2]), 1).unwrap();
        assert_eq!((m.vertices.len(), m.elements.len()), (12, 2));
        let m = polycube_to_hex(&cubes(&[1, 2, 4]), 2).unwrap();
        assert_eq!(m.elements.len(), 24);
        assert_eq!(m.vertices.len(), lattice_oracle(&[1, 2, 4], 2));
        assert_eq!(quality(&m).unwrap().global_min, 1.0);
    }

    #[test]
    fn unsupported_and_disconnected() {
        let l = labels_from_values(&[1, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert!(matches!(polycube_to_hex(&l, 2), Err(Error::UnsupportedCell(_))));
        assert!(polycube_to_hex(&cubes(&[1]), 0).is_err());
        let apart = cubes(&[1, 3, 12]);
        assert_eq!(occupancy_components(&apart).len(), 3);
        assert_eq!(occupancy_components(&cubes(&[1, 2, 5, 11])), vec![vec![1, 2, 5, 11]]);
        assert_eq!(polycube_to_hex(&apart, 1).unwrap().elements.len(), 3);
    }

    #[test]
    fn scaled_jacobian_fixtures() {
        assert_eq!(sj_element(&unit_hex()), 1.0);
        let boxy = unit_hex().map(|p| Vec3::new(2.0 * p.x, p.y, 0.5 * p.z));
        assert!((sj_element(&boxy) - 1.0).abs() < 1e-15);
        let d = Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        let mut sheared = unit_hex();
        for (hi, lo) in [(1, 0), (2, 3), (5, 4), (6, 7)] {
            sheared[hi] = sheared[lo] + d;
        }
        assert!((sj_element(&sheared) - 0.5f64.sqrt()).abs() < 1e-9);
        let mut inverted = unit_hex();
        inverted.swap(0, 4);
        let m = HexMesh { vertices: inverted.to_vec(), elements: vec![[0, 1, 2, 3, 4, 5, 6, 7]] };
        assert!(quality(&m).unwrap().global_min < 0.0);
        let mut collapsed = unit_hex();
        collapsed[1] = collapsed[0];
        assert_eq!(sj_element(&collapsed), -1.0);
    }

    #[test]
    fn histogram_conserves_elements() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut m = HexMesh::default();
        for e in 0..1000 {
            for p in unit_hex() {
                m.vertices.push(p + Vec3::from_fn(|_, _| rng.random_range(-0.3..0.3)));
            }
            m.elements.push(std::array::from_fn(|k| 8 * e + k));
        }
        let q = quality(&m).unwrap();
        assert_eq!(q.histogram.iter().sum::<usize>(), 1000);
        let brute = (0..1000)
            .flat_map(|e| {
                let c = m.corners(e);
                CORNER_EDGES.iter().enumerate().map(move |(k, nb)| {
                    let u: Vec<Vec3> = nb.iter().map(|&j| (c[j] - c[k]).normalize()).collect();
                    u[0].dot(&u[1].cross(&u[2]))
                })
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(q.global_min, brute.clamp(-1.0, 1.0));
        assert_eq!(q.histogram_csv().lines().count(), 21);
    }

    #[test]
    fn vtk_roundtrip() {
        let m = polycube_to_hex(&cubes(&[1, 2, 4, 10]), 2).unwrap();
        let s = vtk_string(&m);
        assert!(s.contains("CELL_TYPES 32"));
        assert_eq!(parse_vtk(&s).unwrap(), m);
        assert!(parse_vtk(&s.replace("\n12\n", "\n10\n")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sj_rigid_and_scale_invariant(angle in -3.0f64..3.0, s in 0.1f64..10.0, jitter in proptest::array::uniform24(-0.2f64..0.2)) {
            let mut hex = unit_hex();
            for (k, p) in hex.iter_mut().enumerate() {
                *p += Vec3::new(jitter[3 * k], jitter[3 * k + 1], jitter[3 * k + 2]);
            }
            let r = nalgebra::Rotation3::from_euler_angles(angle, -0.3 * angle, 0.7);
            let moved = hex.map(|p| r * p * s + Vec3::new(3.0, -1.0, 2.0));
            let (a, b) = (sj_element(&hex), sj_element(&moved));
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn weld_matches_oracle(mask in 1u16..4096, n in 1usize..4) {
            let cells: Vec<usize> = (1..=12).filter(|i| mask & (1 << (i - 1)) != 0).collect();
            let m = polycube_to_hex(&cubes(&cells), n).unwrap();
            prop_assert_eq!(m.elements.len(), cells.len() * n * n * n);
            prop_assert_eq!(m.vertices.len(), lattice_oracle(&cells, n));
        }
    }
}
