use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{assemble_geometry_with, encode_context, Assembly, CellLabel, ContextVector, Labels};
use super::{CELL_COUNT, DEFAULT_SCALE_RANGE};
use crate::error::{Error, Result};
use crate::primitives::PrimitiveParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub random_count: usize,
    pub seed: u64,
    pub scale_range: (f64, f64),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { random_count: 4870, seed: 42, scale_range: DEFAULT_SCALE_RANGE }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::param(format!("scale range ({lo}, {hi}) must satisfy 0 < low <= high")));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        SINGLE_CELL_COUNT + FULL_GRID_COUNT + self.random_count
    }
}

const SINGLE_CELL_COUNT: usize = CELL_COUNT * 10;
const FULL_GRID_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetComponent {
    SingleCell,
    FullGrid,
    Random,
}

/// Labels and seed material of one sample; geometry is produced on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub index: usize,
    pub component: DatasetComponent,
    pub labels: Labels,
    pub seed: u64,
}

impl DatasetItem {
    pub fn context(&self) -> ContextVector {
        encode_context(&self.labels)
    }

    pub fn assemble(&self, spec: &DatasetSpec) -> Result<Assembly> {
        assemble_geometry_with(&self.labels, self.seed, spec.scale_range, &PrimitiveParams::default())
    }

    pub fn occupied(&self) -> usize {
        self.labels.iter().filter(|l| !l.is_null()).count()
    }
}

fn item(spec: &DatasetSpec, index: usize) -> DatasetItem {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut labels = [CellLabel::NULL; CELL_COUNT];
    let component = if index < SINGLE_CELL_COUNT {
        labels[index / 10] = CellLabel::new((index % 10) as u8 + 1).unwrap();
        DatasetComponent::SingleCell
    } else if index < SINGLE_CELL_COUNT + FULL_GRID_COUNT {
        let cat = (index - SINGLE_CELL_COUNT) as u8 + 1;
        labels = [CellLabel::new(cat).unwrap(); CELL_COUNT];
        DatasetComponent::FullGrid
    } else {
        let r = index - SINGLE_CELL_COUNT - FULL_GRID_COUNT;
        let occupied = r % 11 + 1;
        for cell in sample_indices(&mut rng, CELL_COUNT, occupied) {
            labels[cell] = CellLabel::new(rng.random_range(1..=10u8)).unwrap();
        }
        DatasetComponent::Random
    };
    let seed = rng.next_u64();
    DatasetItem { index, component, labels, seed }
}

/// Sample labels for the full dataset: every single-cell configuration, the ten
/// full-grid configurations, then stratified random assemblies whose occupied-cell
/// count cycles through 1..=11. Each item uses its own PRNG stream.
pub fn dataset_items(spec: &DatasetSpec) -> Vec<DatasetItem> {
    (0..spec.total()).into_par_iter().map(|i| item(spec, i)).collect()
}

/// Stream of `(item, assembly, context)` in index order.
pub fn generate_dataset(
    spec: &DatasetSpec,
) -> impl Iterator<Item = Result<(DatasetItem, Assembly, ContextVector)>> + '_ {
    (0..spec.total()).map(move |i| {
        let it = item(spec, i);
        let a = it.assemble(spec)?;
        let c = it.context();
        Ok((it, a, c))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub component: DatasetComponent,
    pub seed: u64,
    pub occupied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scale_range: (f64, f64),
    pub single_cell: usize,
    pub full_grid: usize,
    pub random: usize,
    pub total: usize,
    /// SHA-256 over every sample file in index order.
    pub content_sha256: String,
    pub samples: Vec<ManifestEntry>,
}

fn sample_files(item: &DatasetItem, spec: &DatasetSpec) -> Result<(String, String)> {
    let asm = item.assemble(spec)?;
    let ctx = item.context().to_json()?;
    let xyz = crate::primitives::xyz_string(&asm.all_points());
    Ok((ctx, xyz))
}

fn file_digest(ctx: &str, xyz: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(ctx.as_bytes());
    h.update(xyz.as_bytes());
    h.finalize().into()
}

fn combine_digests(digests: &[[u8; 32]]) -> String {
    let mut h = Sha256::new();
    for d in digests {
        h.update(d);
    }
    hex::encode(h.finalize())
}

/// The manifest's `content_sha256` computed without touching the filesystem.
pub fn dataset_digest(spec: &DatasetSpec) -> Result<String> {
    spec.validate()?;
    let digests: Vec<[u8; 32]> = dataset_items(spec)
        .par_iter()
        .map(|it| sample_files(it, spec).map(|(c, x)| file_digest(&c, &x)))
        .collect::<Result<_>>()?;
    Ok(combine_digests(&digests))
}

/// Writes `sample_%05d.ctx.json` and `sample_%05d.xyz` per sample plus `manifest.json`.
pub fn write_dataset(spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let items = dataset_items(spec);
    let digests: Vec<[u8; 32]> = items
        .par_iter()
        .map(|it| {
            let (ctx, xyz) = sample_files(it, spec)?;
            let stem = format!("sample_{:05}", it.index);
            let ctx_path = dir.join(format!("{stem}.ctx.json"));
            let xyz_path = dir.join(format!("{stem}.xyz"));
            fs::write(&ctx_path, &ctx).map_err(|e| Error::io(&ctx_path, e))?;
            fs::write(&xyz_path, &xyz).map_err(|e| Error::io(&xyz_path, e))?;
            Ok(file_digest(&ctx, &xyz))
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        seed: spec.seed,
        scale_range: spec.scale_range,
        single_cell: SINGLE_CELL_COUNT,
        full_grid: FULL_GRID_COUNT,
        random: spec.random_count,
        total: spec.total(),
        content_sha256: combine_digests(&digests),
        samples: items
            .iter()
            .map(|it| ManifestEntry {
                index: it.index,
                component: it.component,
                seed: it.seed,
                occupied: it.occupied(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Sum of C(12, k) for k in `min_occupied..=12`.
pub fn count_occupancy_patterns(min_occupied: usize) -> Result<u64> {
    if min_occupied > CELL_COUNT {
        return Err(Error::param(format!("minOccupied must be in 0..=12, got {min_occupied}")));
    }
    let n = CELL_COUNT as u64;
    let mut total = 0u64;
    let mut binom = 1u64;
    for k in 0..=n {
        if k as usize >= min_occupied {
            total += binom;
        }
        binom = binom * (n - k) / (k + 1);
    }
    Ok(total)
}
