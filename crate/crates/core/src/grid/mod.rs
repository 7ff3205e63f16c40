//! The 3x2x2 cell grid, its unfolded 4x3 block layout, one-hot context
//! vectors and assembly construction.

mod dataset;

pub use dataset::{
    count_occupancy_patterns, dataset_digest, dataset_items, generate_dataset, write_dataset, DatasetComponent, DatasetItem,
    DatasetManifest, DatasetSpec,
};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{
    make_primitive_mesh, Aabb, PointCloud, PrimitiveCategory, PrimitiveParams, SurfaceSampler, Vec3,
    POINTS_PER_CELL,
};

pub const GRID_DIMS: [usize; 3] = [3, 2, 2];
pub const CELL_COUNT: usize = 12;
/// Null plus the ten categories.
pub const LABEL_STATES: usize = 11;
pub const CONTEXT_BITS: usize = CELL_COUNT * LABEL_STATES;
pub const LAYOUT_ROWS: usize = 4;
pub const LAYOUT_COLS: usize = 3;

/// Cell numbering shared by every module. Cells are numbered `1..=12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout;

impl GridLayout {
    /// `(ix, iy, iz)` of cell `i`.
    pub fn coords(i: usize) -> Option<[usize; 3]> {
        (1..=CELL_COUNT)
            .contains(&i)
            .then(|| [(i - 1) % 3, ((i - 1) / 3) % 2, (i - 1) / 6])
    }

    pub fn cell_at(c: [usize; 3]) -> Option<usize> {
        (c[0] < GRID_DIMS[0] && c[1] < GRID_DIMS[1] && c[2] < GRID_DIMS[2])
            .then(|| 1 + c[0] + 3 * c[1] + 6 * c[2])
    }

    /// `(row, col)` of cell `i` in the unfolded 4x3 layout.
    pub fn block(i: usize) -> Option<(usize, usize)> {
        (1..=CELL_COUNT).contains(&i).then(|| ((i - 1) / 3, (i - 1) % 3))
    }

    pub fn cell_of_block(row: usize, col: usize) -> Option<usize> {
        (row < LAYOUT_ROWS && col < LAYOUT_COLS).then(|| 1 + 3 * row + col)
    }

    /// Unit-edge box of cell `i` in model space; the grid spans `[0,3]x[0,2]x[0,2]`.
    pub fn cell_box(i: usize) -> Option<Aabb> {
        let c = Self::coords(i)?;
        let min = Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64);
        Some(Aabb { min, max: min + Vec3::repeat(1.0) })
    }

    pub fn grid_box() -> Aabb {
        Aabb {
            min: Vec3::zeros(),
            max: Vec3::new(GRID_DIMS[0] as f64, GRID_DIMS[1] as f64, GRID_DIMS[2] as f64),
        }
    }

    /// Face-adjacent cell pairs `(a, b)` with `a < b`.
    pub fn adjacent(a: usize, b: usize) -> bool {
        match (Self::coords(a), Self::coords(b)) {
            (Some(p), Some(q)) => (0..3).map(|k| p[k].abs_diff(q[k])).sum::<usize>() == 1,
            _ => false,
        }
    }
}

/// Per-cell state: 0 is null, 1..=10 a primitive category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct CellLabel(u8);

impl CellLabel {
    pub const NULL: CellLabel = CellLabel(0);

    pub fn new(value: u8) -> Result<Self> {
        if value as usize >= LABEL_STATES {
            return Err(Error::MalformedContext(format!("label {value} outside 0..=10")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn category(self) -> Option<PrimitiveCategory> {
        PrimitiveCategory::from_index(self.0)
    }

    /// All eleven states in encoding order.
    pub fn all() -> impl Iterator<Item = CellLabel> {
        (0..LABEL_STATES as u8).map(CellLabel)
    }
}

impl From<PrimitiveCategory> for CellLabel {
    fn from(c: PrimitiveCategory) -> Self {
        CellLabel(c.index())
    }
}

impl TryFrom<u8> for CellLabel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        CellLabel::new(v)
    }
}

impl From<CellLabel> for u8 {
    fn from(l: CellLabel) -> u8 {
        l.0
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.category() {
            Some(c) => write!(f, "{c}"),
            None => f.write_str("null"),
        }
    }
}

pub type Labels = [CellLabel; CELL_COUNT];

pub fn labels_from_values(values: &[u8]) -> Result<Labels> {
    if values.len() != CELL_COUNT {
        return Err(Error::MalformedContext(format!(
            "expected {CELL_COUNT} cell labels, got {}",
            values.len()
        )));
    }
    let mut out = [CellLabel::NULL; CELL_COUNT];
    for (slot, &v) in out.iter_mut().zip(values) {
        *slot = CellLabel::new(v)?;
    }
    Ok(out)
}

/// Raw 132-entry binary context: twelve consecutive 11-entry blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextVector {
    bits: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextJson {
    cells: Vec<u8>,
}

impl ContextVector {
    /// Wraps raw bits; one-hotness is checked on decode.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.len() != CONTEXT_BITS {
            return Err(Error::MalformedContext(format!(
                "context has {} entries, expected {CONTEXT_BITS}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::MalformedContext("context entries must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn block(&self, cell: usize) -> &[u8] {
        &self.bits[(cell - 1) * LABEL_STATES..cell * LABEL_STATES]
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(Error::MalformedContext(format!("invalid bit character '{ch}'"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_bits(bits)
    }

    pub fn to_json(&self) -> Result<String> {
        let cells = decode_context(self)?.iter().map(|l| l.value()).collect();
        Ok(serde_json::to_string(&ContextJson { cells })?)
    }

    /// Accepts `{"cells": [...]}` or a JSON string holding the 132-char bitstring.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        match value {
            serde_json::Value::String(s) => Self::from_bitstring(s),
            other => {
                let parsed: ContextJson = serde_json::from_value(other.clone())
                    .map_err(|e| Error::MalformedContext(e.to_string()))?;
                Ok(encode_context(&labels_from_values(&parsed.cells)?))
            }
        }
    }

    pub fn labels(&self) -> Result<Labels> {
        decode_context(self)
    }
}

pub fn encode_context(labels: &Labels) -> ContextVector {
    let mut bits = vec![0u8; CONTEXT_BITS];
    for (j, l) in labels.iter().enumerate() {
        bits[j * LABEL_STATES + l.value() as usize] = 1;
    }
    ContextVector { bits }
}

pub fn decode_context(v: &ContextVector) -> Result<Labels> {
    let mut labels = [CellLabel::NULL; CELL_COUNT];
    for (j, slot) in labels.iter_mut().enumerate() {
        let block = v.block(j + 1);
        let ones: Vec<usize> = (0..LABEL_STATES).filter(|&m| block[m] == 1).collect();
        if ones.len() != 1 {
            return Err(Error::MalformedContext(format!(
                "cell {} block has {} set entries",
                j + 1,
                ones.len()
            )));
        }
        *slot = CellLabel(ones[0] as u8);
    }
    Ok(labels)
}

/// Number of through-hole cells, assuming holes of adjacent cells never merge.
pub fn context_genus(v: &ContextVector) -> Result<i64> {
    Ok(labels_genus(&decode_context(v)?))
}

pub fn labels_genus(labels: &Labels) -> i64 {
    labels
        .iter()
        .filter_map(|l| l.category())
        .filter(|c| c.is_thc())
        .count() as i64
}

/// A labeled assembly sampled in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub labels: Labels,
    /// One cloud per cell; empty for null cells.
    pub cell_clouds: Vec<PointCloud>,
    /// Isotropic factor applied about the model origin.
    pub scale: f64,
}

impl Assembly {
    pub fn point_count(&self) -> usize {
        self.cell_clouds.iter().map(|c| c.len()).sum()
    }

    pub fn all_points(&self) -> PointCloud {
        PointCloud::new(self.cell_clouds.iter().flat_map(|c| c.points.iter().copied()).collect())
    }
}

pub const DEFAULT_SCALE_RANGE: (f64, f64) = (0.99, 1.01);

pub fn assemble_geometry(labels: &Labels, seed: u64) -> Result<Assembly> {
    assemble_geometry_with(labels, seed, DEFAULT_SCALE_RANGE, &PrimitiveParams::default())
}

/// Samples each occupied cell's primitive into its cell box (per-cell PRNG
/// stream `j`), then applies one global isotropic scale (stream 0).
pub fn assemble_geometry_with(
    labels: &Labels,
    seed: u64,
    scale_range: (f64, f64),
    params: &PrimitiveParams,
) -> Result<Assembly> {
    if labels.iter().all(|l| l.is_null()) {
        return Err(Error::EmptyAssembly);
    }
    if !(scale_range.0 > 0.0 && scale_range.0 <= scale_range.1) {
        return Err(Error::param("scale range must satisfy 0 < low <= high"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if scale_range.0 == scale_range.1 {
        scale_range.0
    } else {
        rng.random_range(scale_range.0..scale_range.1)
    };
    let unit = PrimitiveParams { edge: 1.0, ..*params };
    let mut samplers: Vec<Option<SurfaceSampler>> = vec![None; LABEL_STATES];
    let mut cell_clouds = Vec::with_capacity(CELL_COUNT);
    for (j, label) in labels.iter().enumerate() {
        let Some(cat) = label.category() else {
            cell_clouds.push(PointCloud::default());
            continue;
        };
        let slot = &mut samplers[label.value() as usize];
        if slot.is_none() {
            *slot = Some(SurfaceSampler::from_mesh(&make_primitive_mesh(cat, &unit)?)?);
        }
        let mut cell_rng = ChaCha8Rng::seed_from_u64(seed);
        cell_rng.set_stream(j as u64 + 1);
        let origin = GridLayout::cell_box(j + 1).unwrap().min;
        let cloud = slot.as_ref().unwrap().sample(POINTS_PER_CELL, &mut cell_rng);
        cell_clouds.push(cloud.translated(origin).scaled(scale));
    }
    Ok(Assembly { labels: *labels, cell_clouds, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(cell: usize, cat: PrimitiveCategory) -> Labels {
        let mut l = [CellLabel::NULL; CELL_COUNT];
        l[cell - 1] = cat.into();
        l
    }

    #[test]
    fn layout_is_a_bijection() {
        for i in 1..=CELL_COUNT {
            let c = GridLayout::coords(i).unwrap();
            assert_eq!(GridLayout::cell_at(c), Some(i));
            let (r, col) = GridLayout::block(i).unwrap();
            assert_eq!(GridLayout::cell_of_block(r, col), Some(i));
        }
        assert_eq!(GridLayout::coords(0), None);
        assert_eq!(GridLayout::coords(13), None);
        let vol: f64 = (1..=12)
            .map(|i| {
                let b = GridLayout::cell_box(i).unwrap();
                let e = b.extent();
                e.x * e.y * e.z
            })
            .sum();
        assert_eq!(vol, 12.0);
        assert!(GridLayout::adjacent(1, 2) && GridLayout::adjacent(1, 4) && GridLayout::adjacent(1, 7));
        assert!(!GridLayout::adjacent(1, 5) && !GridLayout::adjacent(3, 4));
    }

    #[test]
    fn encode_examples() {
        let null = encode_context(&[CellLabel::NULL; CELL_COUNT]);
        assert_eq!(null.bits().iter().filter(|&&b| b == 1).count(), 12);
        assert!((0..12).all(|j| null.bits()[j * 11] == 1));
        assert_eq!(decode_context(&null).unwrap(), [CellLabel::NULL; CELL_COUNT]);
        let one = encode_context(&single(1, PrimitiveCategory::Cube));
        assert_eq!(one.bits()[1], 1);
        assert_eq!(one.bits()[0], 0);
    }

    #[test]
    fn malformed_blocks_rejected() {
        let mut bits = encode_context(&[CellLabel::NULL; CELL_COUNT]).bits().to_vec();
        bits[3] = 1;
        let v = ContextVector::from_bits(bits.clone()).unwrap();
        assert!(matches!(decode_context(&v), Err(Error::MalformedContext(_))));
        bits[0] = 0;
        bits[3] = 0;
        assert!(decode_context(&ContextVector::from_bits(bits).unwrap()).is_err());
        assert!(ContextVector::from_bits(vec![0; 131]).is_err());
        assert!(CellLabel::new(11).is_err());
    }

    #[test]
    fn json_and_bitstring_forms() {
        let labels = labels_from_values(&[1, 0, 2, 0, 0, 5, 0, 0, 0, 10, 0, 3]).unwrap();
        let v = encode_context(&labels);
        assert_eq!(v.to_json().unwrap(), r#"{"cells":[1,0,2,0,0,5,0,0,0,10,0,3]}"#);
        assert_eq!(ContextVector::from_json(&v.to_json().unwrap()).unwrap(), v);
        let s = v.to_bitstring();
        assert_eq!(s.len(), 132);
        assert_eq!(ContextVector::from_bitstring(&s).unwrap(), v);
        assert_eq!(ContextVector::from_json(&format!("\"{s}\"")).unwrap(), v);
        assert!(ContextVector::from_json(r#"{"cells":[1,2]}"#).is_err());
        assert!(ContextVector::from_json(r#"{"cells":[0,0,0,0,0,0,0,0,0,0,0,11]}"#).is_err());
    }

    #[test]
    fn genus_examples() {
        assert_eq!(context_genus(&encode_context(&[CellLabel::NULL; 12])).unwrap(), 0);
        assert_eq!(context_genus(&encode_context(&single(4, PrimitiveCategory::ThcZ))).unwrap(), 1);
        let l = labels_from_values(&[2, 3, 0, 4, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(context_genus(&encode_context(&l)).unwrap(), 3);
    }

    #[test]
    fn assembly_containment_and_determinism() {
        let labels = single(1, PrimitiveCategory::Cube);
        let a = assemble_geometry(&labels, 42).unwrap();
        assert_eq!(a.point_count(), 512);
        assert!((0.99..1.01).contains(&a.scale));
        let b = GridLayout::cell_box(1).unwrap();
        let slack = 0.01;
        let scaled = Aabb { min: b.min * a.scale, max: b.max * a.scale };
        assert!(a.cell_clouds[0].points.iter().all(|p| scaled.contains(p, slack)));
        assert_eq!(assemble_geometry(&labels, 42).unwrap(), a);
        assert_ne!(assemble_geometry(&labels, 43).unwrap(), a);
        let full = assemble_geometry(&[PrimitiveCategory::Cube.into(); 12], 7).unwrap();
        assert_eq!(full.point_count(), 6144);
        assert!(matches!(
            assemble_geometry(&[CellLabel::NULL; 12], 1),
            Err(Error::EmptyAssembly)
        ));
    }

    #[test]
    fn occupied_points_stay_in_their_cells() {
        let labels = labels_from_values(&[3, 7, 0, 0, 2, 9, 10, 0, 1, 4, 5, 6]).unwrap();
        let a = assemble_geometry(&labels, 9).unwrap();
        for j in 1..=12 {
            let b = GridLayout::cell_box(j).unwrap();
            let s = a.scale;
            let scaled = Aabb { min: b.min * s, max: b.max * s };
            assert_eq!(a.cell_clouds[j - 1].is_empty(), labels[j - 1].is_null());
            assert!(a.cell_clouds[j - 1].points.iter().all(|p| scaled.contains(p, 0.01)));
        }
    }

    fn labels_strategy() -> impl Strategy<Value = Labels> {
        proptest::array::uniform12(0u8..11).prop_map(|v| labels_from_values(&v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn encode_decode_roundtrip(labels in labels_strategy()) {
            let v = encode_context(&labels);
            prop_assert_eq!(decode_context(&v).unwrap(), labels);
            prop_assert_eq!(ContextVector::from_bitstring(&v.to_bitstring()).unwrap(), v.clone());
            prop_assert_eq!(context_genus(&v).unwrap(), labels_genus(&labels));
        }
    }
}
