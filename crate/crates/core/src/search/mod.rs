//! Genus-guided context search: constraint expansion, candidate enumeration,
//! local subregion inference and global verification, with funnel bookkeeping.

mod regions;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, Denoiser, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::grid::{decode_context, encode_context, labels_genus, CellLabel, ContextVector, GridLayout, Labels, CELL_COUNT, GRID_DIMS, LABEL_STATES};
use crate::primitives::{PointCloud, PrimitiveCategory, TemplateLibrary, TriMesh};
use crate::tensor::{tensorize, GeometryTensor};
use crate::topology::{check_closed, check_oriented, component_genera, partition_grid, voxelize, SubregionPartition, VoxelGrid};
use crate::verification::{verify_cells, FailureStage, VerificationParams, VerificationReport};

pub use regions::{region_cloud, region_triangles, slab_cell, SlabMap};

/// Upper bound on contexts produced by a single constraint expansion.
pub const EXPANSION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveCounts {
    #[serde(rename = "Number-Cube", default, skip_serializing_if = "Option::is_none")]
    pub cube: Option<usize>,
    #[serde(rename = "Number-THC", default, skip_serializing_if = "Option::is_none")]
    pub thc: Option<usize>,
    #[serde(rename = "Number-BHC", default, skip_serializing_if = "Option::is_none")]
    pub bhc: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
}

impl SplitRatios {
    pub fn as_array(&self) -> [Option<Vec<f64>>; 3] {
        [self.x.clone(), self.y.clone(), self.z.clone()]
    }
}

/// Partial user knowledge about the target assembly. An absent count leaves
/// that primitive family unconstrained; placement restricts individual cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConstraints {
    #[serde(default)]
    pub counts: PrimitiveCounts,
    #[serde(default)]
    pub placement: BTreeMap<usize, Vec<u8>>,
    #[serde(rename = "splitRatios", default, skip_serializing_if = "Option::is_none")]
    pub split_ratios: Option<SplitRatios>,
}

impl PartialConstraints {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("constraints", e.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintExpansion {
    pub contexts: Vec<ContextVector>,
    pub diagnostics: Vec<String>,
    pub truncated: bool,
}

fn family(label: CellLabel) -> Option<usize> {
    label.category().map(|c| match c {
        PrimitiveCategory::Cube => 0,
        c if c.is_thc() => 1,
        _ => 2,
    })
}

/// Expands partial constraints into every satisfying context, ordered
/// lexicographically over cells 1..12 and then label values.
pub fn parse_constraints(pc: &PartialConstraints) -> ConstraintExpansion {
    parse_constraints_limited(pc, EXPANSION_LIMIT)
}

pub fn parse_constraints_limited(pc: &PartialConstraints, limit: usize) -> ConstraintExpansion {
    let mut out = ConstraintExpansion::default();
    let counts = [pc.counts.cube, pc.counts.thc, pc.counts.bhc];
    let total: usize = counts.iter().flatten().sum();
    if total > CELL_COUNT {
        out.diagnostics.push(format!("constraint counts total {total}, which exceeds {CELL_COUNT} cells"));
        return out;
    }
    let mut allowed: Vec<Vec<CellLabel>> = vec![CellLabel::all().collect(); CELL_COUNT];
    for (&cell, values) in &pc.placement {
        if !(1..=CELL_COUNT).contains(&cell) {
            out.diagnostics.push(format!("placement cell {cell} is outside 1..{CELL_COUNT}"));
            return out;
        }
        let mut set = Vec::new();
        for &v in values {
            match CellLabel::new(v) {
                Ok(l) if !set.contains(&l) => set.push(l),
                Ok(_) => {}
                Err(_) => {
                    out.diagnostics.push(format!("placement label {v} for cell {cell} is not in 0..10"));
                    return out;
                }
            }
        }
        set.sort();
        allowed[cell - 1] = set;
    }

    struct Walk<'a> {
        allowed: &'a [Vec<CellLabel>],
        need: [Option<usize>; 3],
        labels: Labels,
        out: &'a mut ConstraintExpansion,
        limit: usize,
    }
    impl Walk<'_> {
        fn visit(&mut self, cell: usize) -> bool {
            let remaining_need: usize = self.need.iter().flatten().sum();
            if remaining_need > CELL_COUNT - cell {
                return true;
            }
            if cell == CELL_COUNT {
                if self.need.iter().flatten().any(|&n| n > 0) {
                    return true;
                }
                if self.out.contexts.len() == self.limit {
                    self.out.truncated = true;
                    return false;
                }
                self.out.contexts.push(encode_context(&self.labels));
                return true;
            }
            for &l in &self.allowed[cell] {
                let fam = family(l);
                if let Some(f) = fam {
                    match self.need[f] {
                        Some(0) => continue,
                        Some(n) => self.need[f] = Some(n - 1),
                        None => {}
                    }
                }
                self.labels[cell] = l;
                let go_on = self.visit(cell + 1);
                if let Some(f) = fam {
                    if let Some(n) = self.need[f] {
                        self.need[f] = Some(n + 1);
                    }
                }
                if !go_on {
                    return false;
                }
            }
            self.labels[cell] = CellLabel::NULL;
            true
        }
    }
    let mut walk = Walk { allowed: &allowed, need: counts, labels: [CellLabel::NULL; CELL_COUNT], out: &mut out, limit };
    walk.visit(0);
    if out.truncated {
        out.diagnostics.push(format!("expansion stopped after {limit} contexts"));
    }
    if out.contexts.is_empty() {
        out.diagnostics.push("no context satisfies the counts and placement".into());
    }
    out
}

/// True iff the context's genus (number of through-hole cells) equals `g`.
pub fn genus_consistency_check(c: &ContextVector, g: i64) -> Result<bool> {
    Ok(labels_genus(&decode_context(c)?) == g)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub labels: Vec<CellLabel>,
    pub repartition_required: bool,
}

/// Categories whose topological type matches a subregion genus.
pub fn feasible_categories(genus: i64) -> FeasibleSet {
    let labels = PrimitiveCategory::ALL
        .iter()
        .filter(|c| genus <= 1 && c.genus() == genus)
        .map(|&c| c.into())
        .collect();
    FeasibleSet { labels, repartition_required: genus >= 2 }
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub labels: Vec<Labels>,
    pub diagnostic: Option<String>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contexts(&self) -> Vec<ContextVector> {
        self.labels.iter().map(encode_context).collect()
    }
}

/// Cartesian product of per-cell feasible labels; `feasible[i]` belongs to
/// `active[i]` and all other cells are null. The first active cell varies slowest.
pub fn enumerate_candidates(active: &[usize], feasible: &[Vec<CellLabel>]) -> CandidateSet {
    let diag = |m: String| CandidateSet { labels: Vec::new(), diagnostic: Some(m) };
    if active.is_empty() {
        return diag("no active cells".into());
    }
    if active.len() != feasible.len() {
        return diag(format!("{} active cells but {} feasible sets", active.len(), feasible.len()));
    }
    if let Some(&c) = active.iter().find(|&&c| !(1..=CELL_COUNT).contains(&c)) {
        return diag(format!("active cell {c} is outside 1..{CELL_COUNT}"));
    }
    if let Some(i) = feasible.iter().position(|f| f.is_empty()) {
        return diag(format!("cell {} has an empty feasible set", active[i]));
    }
    let mut labels = vec![[CellLabel::NULL; CELL_COUNT]];
    for (&cell, set) in active.iter().zip(feasible) {
        labels = labels
            .into_iter()
            .flat_map(|base| {
                set.iter().map(move |&l| {
                    let mut next = base;
                    next[cell - 1] = l;
                    next
                })
            })
            .collect();
    }
    CandidateSet { labels, diagnostic: None }
}

/// Candidate counts at each pruning stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateFunnel {
    pub theoretical: u64,
    pub after_null_fixing: u64,
    pub after_genus: u64,
    pub after_local_verification: u64,
    #[serde(rename = "afterGlobalGOCC")]
    pub after_global_gocc: u64,
    #[serde(rename = "afterGlobalTCV")]
    pub after_global_tcv: u64,
}

impl CandidateFunnel {
    pub fn stages(&self) -> [u64; 6] {
        [
            self.theoretical,
            self.after_null_fixing,
            self.after_genus,
            self.after_local_verification,
            self.after_global_gocc,
            self.after_global_tcv,
        ]
    }

    pub fn is_monotone(&self) -> bool {
        self.stages().windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn theoretical_space() -> u64 {
    (LABEL_STATES as u64).pow(CELL_COUNT as u32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Voxels along the longest bounding-box edge.
    pub resolution: usize,
    /// Per-axis split fractions; `None` derives the slab count from the aspect ratio.
    pub splits: [Option<Vec<f64>>; 3],
    /// Global candidates sampled at most, in ranking order.
    pub max_global_trials: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { resolution: 32, splits: [None, None, None], max_global_trials: 256 }
    }
}

/// Sampler plus verifier used for every trial.
pub struct InferenceEngine<'a> {
    pub schedule: &'a DiffusionSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub library: &'a TemplateLibrary,
    pub params: VerificationParams,
    pub seed: u64,
    pub deterministic: bool,
}

impl InferenceEngine<'_> {
    /// Reverse diffusion from the input tensor under `labels`, then hierarchical verification.
    pub fn run(&self, x: &GeometryTensor, labels: &Labels) -> Result<(GeometryTensor, VerificationReport)> {
        let out = sample(x, &encode_context(labels), self.denoiser, self.schedule, self.seed, self.deterministic)?;
        let report = verify_cells(&crate::tensor::detensorize(&out), labels, self.library, &self.params)?;
        Ok((out, report))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalTrial {
    pub label: CellLabel,
    pub pass: bool,
    pub failure_stage: FailureStage,
    pub d_target: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubregionSummary {
    pub cell: usize,
    pub slab: [usize; 3],
    pub voxels: usize,
    pub genus: i64,
    pub feasible: Vec<CellLabel>,
    pub local: Vec<LocalTrial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub labels: Vec<CellLabel>,
    /// Sum of local target distances (automated mode only).
    pub local_score: Option<f64>,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiedContext {
    pub labels: Vec<CellLabel>,
    pub context: String,
    pub total_d_target: f64,
    #[serde(skip)]
    pub output: Option<GeometryTensor>,
}

impl VerifiedContext {
    pub fn context_vector(&self) -> Result<ContextVector> {
        ContextVector::from_bitstring(&self.context)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub counts: [usize; 3],
    pub ratios: [Vec<f64>; 3],
    pub offset: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Automated,
    UserGuided,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub mode: SearchMode,
    pub input_genus: Option<i64>,
    pub funnel: CandidateFunnel,
    pub verified_contexts: Vec<VerifiedContext>,
    pub per_candidate: Vec<CandidateReport>,
    pub subregions: Vec<SubregionSummary>,
    pub partitions: Vec<PartitionInfo>,
    pub diagnostics: Vec<String>,
    /// Set when nothing verified: what the caller should try next.
    pub rejection: Option<String>,
}

impl SearchResult {
    fn new(mode: SearchMode) -> Self {
        Self {
            mode,
            input_genus: None,
            funnel: CandidateFunnel { theoretical: theoretical_space(), ..Default::default() },
            verified_contexts: Vec::new(),
            per_candidate: Vec::new(),
            subregions: Vec::new(),
            partitions: Vec::new(),
            diagnostics: Vec::new(),
            rejection: None,
        }
    }

    fn record(&mut self, labels: &Labels, local_score: Option<f64>, out: GeometryTensor, report: VerificationReport) {
        if report.gocc_pass {
            self.funnel.after_global_gocc += 1;
        }
        if report.overall_pass {
            self.funnel.after_global_tcv += 1;
            self.verified_contexts.push(VerifiedContext {
                labels: labels.to_vec(),
                context: encode_context(labels).to_bitstring(),
                total_d_target: report.total_d_target(),
                output: Some(out),
            });
        }
        self.per_candidate.push(CandidateReport { labels: labels.to_vec(), local_score, report });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Genus of a closed, oriented mesh summed over its components.
pub fn mesh_genus(mesh: &TriMesh) -> Result<i64> {
    check_closed(mesh)?;
    check_oriented(mesh)?;
    Ok(component_genera(mesh)?.iter().sum())
}

fn equal_ratios(n: usize) -> Vec<f64> {
    let mut r = vec![1.0 / n as f64; n];
    r[n - 1] = 1.0 - (n - 1) as f64 / n as f64;
    r
}

fn check_split(axis: usize, ratios: &[f64]) -> Result<()> {
    if ratios.len() > GRID_DIMS[axis] {
        return Err(Error::param(format!(
            "{} split ratios on axis {axis}, but the grid has {} cells there",
            ratios.len(),
            GRID_DIMS[axis]
        )));
    }
    Ok(())
}

/// Slab ratios for automated mode: explicit splits, else one slab per
/// shortest-extent length along each axis.
fn auto_ratios(grid: &VoxelGrid, cfg: &SearchConfig) -> Result<[Vec<f64>; 3]> {
    let ext = grid.bounds.extent();
    let shortest = ext.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        out[a] = match &cfg.splits[a] {
            Some(r) => r.clone(),
            None => equal_ratios(((ext[a] / shortest).round() as usize).clamp(1, GRID_DIMS[a])),
        };
        check_split(a, &out[a])?;
    }
    Ok(out)
}

fn region_genus(part: &SubregionPartition, i: usize) -> Result<i64> {
    match &part.regions[i].boundary {
        Some(b) => Ok(component_genera(b)?.iter().sum()),
        None => Ok(0),
    }
}

fn int_product(sizes: impl IntoIterator<Item = usize>) -> u64 {
    sizes.into_iter().map(|n| n as u64).product()
}

/// Voxelized input, its partition and the topology of every occupied subregion.
#[derive(Debug, Clone)]
pub struct SubregionAnalysis {
    pub grid: VoxelGrid,
    pub partition: SubregionPartition,
    /// Indices into `partition.regions` of the occupied regions, parallel to `summaries`.
    pub active: Vec<usize>,
    pub summaries: Vec<SubregionSummary>,
}

impl SubregionAnalysis {
    /// Funnel through the genus stage.
    pub fn funnel(&self) -> CandidateFunnel {
        CandidateFunnel {
            theoretical: theoretical_space(),
            after_null_fixing: (LABEL_STATES as u64).pow(self.active.len() as u32),
            after_genus: int_product(self.summaries.iter().map(|s| s.feasible.len())),
            ..Default::default()
        }
    }
}

/// Voxelizes and partitions `mesh`, then derives each subregion's genus and
/// feasible categories. A subregion of genus two or more needs other split ratios.
pub fn analyze_subregions(mesh: &TriMesh, cfg: &SearchConfig) -> Result<SubregionAnalysis> {
    let grid = voxelize(mesh, cfg.resolution)?;
    let ratios = auto_ratios(&grid, cfg)?;
    let partition = partition_grid(&grid, &ratios)?;
    let mut active = Vec::new();
    let mut summaries = Vec::new();
    for (i, region) in partition.regions.iter().enumerate() {
        if region.is_empty() {
            continue;
        }
        let cell = slab_cell(region.slab, [0; 3]).ok_or_else(|| Error::param("slab outside the grid"))?;
        let genus = region_genus(&partition, i)?;
        let feasible = feasible_categories(genus);
        if feasible.repartition_required {
            return Err(Error::RepartitionRequired { region: cell, genus });
        }
        summaries.push(SubregionSummary {
            cell,
            slab: region.slab,
            voxels: region.voxels.len(),
            genus,
            feasible: feasible.labels,
            local: Vec::new(),
        });
        active.push(i);
    }
    if active.is_empty() {
        return Err(Error::EmptyAssembly);
    }
    Ok(SubregionAnalysis { grid, partition, active, summaries })
}

/// Automated mode: voxelize, partition, infer local labels per subregion, then
/// verify every combination of locally accepted labels on the full geometry.
pub fn auto_generate_context(mesh: &TriMesh, cfg: &SearchConfig, engine: &InferenceEngine) -> Result<SearchResult> {
    let mut res = SearchResult::new(SearchMode::Automated);
    res.input_genus = Some(mesh_genus(mesh)?);
    let analysis = analyze_subregions(mesh, cfg)?;
    res.funnel = analysis.funnel();
    let SubregionAnalysis { grid, partition: part, active, summaries } = analysis;
    res.partitions.push(PartitionInfo { counts: part.counts(), ratios: part.ratios.clone(), offset: [0; 3] });
    res.subregions = summaries;

    // Local inference: each subregion alone in cell 1 under a one-cell context.
    let jobs: Vec<(usize, CellLabel)> = res
        .subregions
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.feasible.iter().map(move |&l| (k, l)))
        .collect();
    let local_inputs: Vec<GeometryTensor> = active
        .iter()
        .map(|&i| {
            let cloud = region_cloud(mesh, &grid, &part, &part.regions[i], 1, engine.seed)?;
            let mut cells = vec![PointCloud::default(); CELL_COUNT];
            cells[0] = cloud;
            tensorize(&cells)
        })
        .collect::<Result<_>>()?;
    let trials: Vec<(usize, LocalTrial)> = jobs
        .par_iter()
        .map(|&(k, label)| {
            let mut labels = [CellLabel::NULL; CELL_COUNT];
            labels[0] = label;
            let (_, rep) = engine.run(&local_inputs[k], &labels)?;
            let d = rep.per_cell.first().map(|c| c.d_target);
            Ok((k, LocalTrial { label, pass: rep.overall_pass, failure_stage: rep.failure_stage, d_target: d }))
        })
        .collect::<Result<_>>()?;
    for (k, t) in trials {
        res.subregions[k].local.push(t);
    }

    let cells: Vec<usize> = res.subregions.iter().map(|s| s.cell).collect();
    let accepted: Vec<Vec<CellLabel>> = res
        .subregions
        .iter()
        .map(|s| s.local.iter().filter(|t| t.pass).map(|t| t.label).collect())
        .collect();
    let local_d: HashMap<(usize, CellLabel), f64> = res
        .subregions
        .iter()
        .flat_map(|s| s.local.iter().map(move |t| ((s.cell, t.label), t.d_target.unwrap_or(f64::INFINITY))))
        .collect();
    res.funnel.after_local_verification = int_product(accepted.iter().map(Vec::len));
    if res.funnel.after_local_verification == 0 {
        for s in &res.subregions {
            if !s.local.iter().any(|t| t.pass) {
                res.diagnostics.push(format!("no label passed local verification for cell {}", s.cell));
            }
        }
        res.rejection = Some("local verification rejected every label of some subregion; adjust the partition ratios".into());
        return Ok(res);
    }
    let candidates = enumerate_candidates(&cells, &accepted);
    let mut ranked: Vec<(f64, Labels)> = candidates
        .labels
        .into_iter()
        .map(|l| (cells.iter().map(|&c| local_d[&(c, l[c - 1])]).sum(), l))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    if ranked.len() > cfg.max_global_trials {
        res.diagnostics.push(format!(
            "{} candidates after local verification; sampling the best {}",
            ranked.len(),
            cfg.max_global_trials
        ));
        ranked.truncate(cfg.max_global_trials);
    }

    let mut global_cells = vec![PointCloud::default(); CELL_COUNT];
    for (&i, &cell) in active.iter().zip(&cells) {
        global_cells[cell - 1] = region_cloud(mesh, &grid, &part, &part.regions[i], cell, engine.seed)?;
    }
    let x = tensorize(&global_cells)?;
    let outcomes: Vec<_> = ranked
        .par_iter()
        .map(|(score, labels)| engine.run(&x, labels).map(|(o, r)| (*score, *labels, o, r)))
        .collect::<Result<_>>()?;
    for (score, labels, out, report) in outcomes {
        res.record(&labels, Some(score), out, report);
    }
    if res.verified_contexts.is_empty() {
        res.rejection = Some("no global candidate passed verification".into());
    }
    Ok(res)
}

/// What the user supplies in guided mode.
#[derive(Debug, Clone)]
pub enum GuidedInput {
    Contexts(Vec<ContextVector>),
    Constraints(PartialConstraints),
}

fn occupancy_range(labels: &Labels) -> Option<([usize; 3], [usize; 3])> {
    let coords: Vec<[usize; 3]> = (1..=CELL_COUNT)
        .filter(|&c| !labels[c - 1].is_null())
        .map(|c| GridLayout::coords(c).unwrap())
        .collect();
    if coords.is_empty() {
        return None;
    }
    let lo = std::array::from_fn(|a| coords.iter().map(|c| c[a]).min().unwrap());
    let hi = std::array::from_fn(|a| coords.iter().map(|c| c[a]).max().unwrap());
    Some((lo, hi))
}

/// Input tensor for a user context: the mesh bounding box is split into the
/// context's occupied cell range (equal slabs unless `splits` matches the slab
/// count) and each slab's surface is sampled into its cell.
pub fn context_input_tensor(
    mesh: &TriMesh,
    grid: &VoxelGrid,
    labels: &Labels,
    splits: &[Option<Vec<f64>>; 3],
    seed: u64,
) -> Result<(GeometryTensor, PartitionInfo, Vec<String>)> {
    let (lo, hi) = occupancy_range(labels).ok_or(Error::EmptyAssembly)?;
    let mut diags = Vec::new();
    let mut ratios: [Vec<f64>; 3] = Default::default();
    for a in 0..3 {
        let n = hi[a] - lo[a] + 1;
        ratios[a] = match &splits[a] {
            Some(r) if r.len() == n => r.clone(),
            Some(r) => {
                diags.push(format!(
                    "axis {a}: {} split ratios do not match the {n} occupied slabs; using equal splits",
                    r.len()
                ));
                equal_ratios(n)
            }
            None => equal_ratios(n),
        };
    }
    let part = partition_grid(grid, &ratios)?;
    let mut cells = vec![PointCloud::default(); CELL_COUNT];
    for region in part.regions.iter().filter(|r| !r.is_empty()) {
        let cell = slab_cell(region.slab, lo).unwrap();
        cells[cell - 1] = region_cloud(mesh, grid, &part, region, cell, seed)?;
    }
    let info = PartitionInfo { counts: part.counts(), ratios, offset: lo };
    Ok((tensorize(&cells)?, info, diags))
}

/// User-guided mode: expand and genus-filter the supplied contexts, then sample
/// and verify each survivor with the mesh mapped onto its occupied cell range.
pub fn user_guided_infer(
    input: &GuidedInput,
    mesh: &TriMesh,
    cfg: &SearchConfig,
    engine: &InferenceEngine,
) -> Result<SearchResult> {
    let mut res = SearchResult::new(SearchMode::UserGuided);
    let (contexts, splits) = match input {
        GuidedInput::Contexts(c) => (c.clone(), cfg.splits.clone()),
        GuidedInput::Constraints(pc) => {
            let exp = parse_constraints(pc);
            res.diagnostics.extend(exp.diagnostics);
            let mut splits = cfg.splits.clone();
            if let Some(sr) = &pc.split_ratios {
                for (a, r) in sr.as_array().into_iter().enumerate() {
                    if r.is_some() {
                        splits[a] = r;
                    }
                }
            }
            (exp.contexts, splits)
        }
    };
    if contexts.is_empty() && matches!(input, GuidedInput::Contexts(_)) {
        return Err(Error::param("no candidate contexts supplied"));
    }
    let candidates: Vec<Labels> = contexts.iter().map(decode_context).collect::<Result<_>>()?;
    let genus = mesh_genus(mesh)?;
    res.input_genus = Some(genus);

    let candidates: Vec<Labels> = candidates
        .into_iter()
        .filter(|l| {
            let keep = occupancy_range(l).is_some();
            if !keep {
                res.diagnostics.push("all-null context skipped".into());
            }
            keep
        })
        .collect();
    res.funnel.after_null_fixing = candidates.len() as u64;
    let survivors: Vec<Labels> = candidates.into_iter().filter(|l| labels_genus(l) == genus).collect();
    res.funnel.after_genus = survivors.len() as u64;
    res.funnel.after_local_verification = res.funnel.after_genus;
    if survivors.is_empty() {
        res.rejection = Some(format!(
            "no candidate context matches the input genus {genus}; revise the contexts or switch to automated mode"
        ));
        return Ok(res);
    }

    let grid = voxelize(mesh, cfg.resolution)?;
    let mut plans: BTreeMap<([usize; 3], [usize; 3]), GeometryTensor> = BTreeMap::new();
    for labels in &survivors {
        let key = occupancy_range(labels).unwrap();
        if plans.contains_key(&key) {
            continue;
        }
        let (x, info, diags) = context_input_tensor(mesh, &grid, labels, &splits, engine.seed)?;
        res.partitions.push(info);
        res.diagnostics.extend(diags);
        plans.insert(key, x);
    }

    let outcomes: Vec<_> = survivors
        .par_iter()
        .map(|labels| {
            let key = occupancy_range(labels).unwrap();
            engine.run(&plans[&key], labels).map(|(o, r)| (*labels, o, r))
        })
        .collect::<Result<_>>()?;
    for (labels, out, report) in outcomes {
        res.record(&labels, None, out, report);
    }
    if res.verified_contexts.is_empty() {
        res.rejection = Some("no candidate context passed verification; revise the contexts or switch to automated mode".into());
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::labels_from_values;
    use proptest::prelude::*;

    fn counts(cube: Option<usize>, thc: Option<usize>, bhc: Option<usize>) -> PartialConstraints {
        PartialConstraints { counts: PrimitiveCounts { cube, thc, bhc }, ..Default::default() }
    }

    #[test]
    fn constraint_expansion_counts() {
        let mut pc = counts(Some(1), Some(0), Some(0));
        pc.placement.insert(1, vec![1]);
        assert_eq!(parse_constraints(&pc).contexts.len(), 1);

        let e = parse_constraints(&counts(Some(0), Some(1), Some(0)));
        assert_eq!(e.contexts.len(), 36);
        let first = decode_context(&e.contexts[0]).unwrap();
        assert!(first[..11].iter().all(|l| l.value() == 0) && first[11].value() == 2);

        let e = parse_constraints(&counts(Some(13), None, None));
        assert!(e.contexts.is_empty());
        assert!(e.diagnostics[0].contains("exceeds 12 cells"));

        let e = parse_constraints(&counts(Some(0), Some(0), Some(1)));
        assert_eq!(e.contexts.len(), 72);

        let mut pc = counts(Some(1), Some(0), Some(0));
        pc.placement.insert(3, vec![2]);
        let e = parse_constraints(&pc);
        assert!(e.contexts.is_empty() && !e.diagnostics.is_empty());
    }

    #[test]
    fn expansion_is_sorted_and_limited() {
        let e = parse_constraints(&counts(Some(1), Some(1), Some(0)));
        assert_eq!(e.contexts.len(), 12 * 11 * 3);
        let keys: Vec<Vec<u8>> = e
            .contexts
            .iter()
            .map(|c| decode_context(c).unwrap().iter().map(|l| l.value()).collect())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let e = parse_constraints_limited(&counts(None, None, None), 100);
        assert!(e.truncated && e.contexts.len() == 100);
    }

    #[test]
    fn constraints_json_fields() {
        let pc = PartialConstraints::from_json(
            r#"{"counts":{"Number-Cube":1,"Number-THC":0,"Number-BHC":0},"placement":{"1":[1]},"splitRatios":{"x":[0.5,0.5]}}"#,
        )
        .unwrap();
        assert_eq!(pc.counts.cube, Some(1));
        assert_eq!(pc.placement[&1], vec![1]);
        assert!(PartialConstraints::from_json(r#"{"count":{}}"#).is_err());
    }

    #[test]
    fn genus_checks() {
        let null = encode_context(&[CellLabel::NULL; CELL_COUNT]);
        assert!(genus_consistency_check(&null, 0).unwrap());
        let one = encode_context(&labels_from_values(&[2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap());
        assert!(!genus_consistency_check(&one, 0).unwrap());
        let three = encode_context(&labels_from_values(&[2, 3, 0, 4, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap());
        assert!(genus_consistency_check(&three, 3).unwrap());
    }

    #[test]
    fn feasible_sets() {
        let g1 = feasible_categories(1);
        assert_eq!(g1.labels.iter().map(|l| l.value()).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(feasible_categories(0).labels.len(), 7);
        let g2 = feasible_categories(2);
        assert!(g2.labels.is_empty() && g2.repartition_required);
    }

    #[test]
    fn candidate_products() {
        let thc = feasible_categories(1).labels;
        let zero = feasible_categories(0).labels;
        let c = enumerate_candidates(&[1, 2, 4, 5], &[thc.clone(), thc.clone(), thc, zero]);
        assert_eq!(c.len(), 189);
        let all: Vec<CellLabel> = PrimitiveCategory::ALL.iter().map(|&c| c.into()).collect();
        assert_eq!(enumerate_candidates(&[7], &[all]).len(), 10);
        let any: Vec<CellLabel> = CellLabel::all().collect();
        assert_eq!(enumerate_candidates(&[1, 2, 4, 5], &vec![any; 4]).len(), 14_641);
        assert!(enumerate_candidates(&[1], &[vec![]]).diagnostic.is_some());
    }

    fn brute_force(feasible: &[Vec<CellLabel>]) -> usize {
        let total = LABEL_STATES.pow(feasible.len() as u32);
        (0..total)
            .filter(|&code| {
                let mut rest = code;
                feasible.iter().all(|f| {
                    let v = (rest % LABEL_STATES) as u8;
                    rest /= LABEL_STATES;
                    f.iter().any(|l| l.value() == v)
                })
            })
            .count()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn product_matches_brute_force(
            cells in proptest::sample::subsequence((1..=CELL_COUNT).collect::<Vec<_>>(), 1..=5),
            masks in proptest::collection::vec(1u16..(1 << LABEL_STATES), 5),
        ) {
            let feasible: Vec<Vec<CellLabel>> = cells
                .iter()
                .zip(&masks)
                .map(|(_, m)| CellLabel::all().filter(|l| m & (1 << l.value()) != 0).collect())
                .collect();
            let c = enumerate_candidates(&cells, &feasible);
            prop_assert_eq!(c.len(), brute_force(&feasible));
            prop_assert_eq!(c.len() as u64, int_product(feasible.iter().map(Vec::len)));
            for l in &c.labels {
                for cell in 1..=CELL_COUNT {
                    match cells.iter().position(|&a| a == cell) {
                        Some(i) => prop_assert!(feasible[i].contains(&l[cell - 1])),
                        None => prop_assert!(l[cell - 1].is_null()),
                    }
                }
            }
        }

        #[test]
        fn genus_check_tautology(values in proptest::collection::vec(0u8..=10, CELL_COUNT)) {
            let c = encode_context(&labels_from_values(&values).unwrap());
            let g = crate::grid::context_genus(&c).unwrap();
            prop_assert!(genus_consistency_check(&c, g).unwrap());
        }
    }
}
