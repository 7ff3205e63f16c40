//! Penalty Chamfer distance, grid occupancy consistency check (GOCC), template
//! competition verification (TCV) and the combined report.

mod nn;

pub use nn::PointGrid;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{decode_context, CellLabel, ContextVector};
use crate::primitives::{PointCloud, PrimitiveCategory, TemplateLibrary, Vec3};
use crate::tensor::{detensorize, GeometryTensor, PLACEHOLDER_NORM};

/// Minimum non-placeholder points for an occupied cell.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationParams {
    pub tau_active: f64,
    pub tau_cd: f64,
    pub p: f64,
}

impl Default for VerificationParams {
    fn default() -> Self {
        Self { tau_active: 0.2, tau_cd: 0.05, p: 2.0 }
    }
}

impl VerificationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_active", self.tau_active), ("tau_cd", self.tau_cd), ("p", self.p)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn penalty(d: f64, tau_cd: f64, p: f64) -> f64 {
    if d <= tau_cd {
        d
    } else {
        d * (1.0 + (d / tau_cd).powf(p))
    }
}

/// Below this many pairs the brute-force scan is used.
const ACCEL_PAIRS: usize = 1 << 22;

fn directed_brute(x: &[Vec3], y: &[Vec3], tau: f64, p: f64) -> f64 {
    let terms: Vec<f64> = x
        .par_iter()
        .map(|a| {
            let d = y.iter().map(|b| (a - b).norm_squared()).fold(f64::INFINITY, f64::min);
            penalty(d, tau, p)
        })
        .collect();
    terms.iter().sum::<f64>() / x.len() as f64
}

fn directed_grid(x: &[Vec3], y: &[Vec3], tau: f64, p: f64) -> f64 {
    let g = PointGrid::new(y);
    let terms: Vec<f64> = x.par_iter().map(|a| penalty(g.nearest_sq(a), tau, p)).collect();
    terms.iter().sum::<f64>() / x.len() as f64
}

fn check_nonempty(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::param("penalty Chamfer distance needs two nonempty clouds"));
    }
    Ok(())
}

/// Symmetric penalized Chamfer distance over squared nearest-neighbour distances.
pub fn pcd(x: &PointCloud, y: &PointCloud, tau_cd: f64, p: f64) -> Result<f64> {
    check_nonempty(x, y)?;
    if x.len() * y.len() > ACCEL_PAIRS {
        return pcd_accelerated(x, y, tau_cd, p);
    }
    Ok(0.5 * (directed_brute(&x.points, &y.points, tau_cd, p) + directed_brute(&y.points, &x.points, tau_cd, p)))
}

pub fn pcd_brute(x: &PointCloud, y: &PointCloud, tau_cd: f64, p: f64) -> Result<f64> {
    check_nonempty(x, y)?;
    Ok(0.5 * (directed_brute(&x.points, &y.points, tau_cd, p) + directed_brute(&y.points, &x.points, tau_cd, p)))
}

pub fn pcd_accelerated(x: &PointCloud, y: &PointCloud, tau_cd: f64, p: f64) -> Result<f64> {
    check_nonempty(x, y)?;
    Ok(0.5 * (directed_grid(&x.points, &y.points, tau_cd, p) + directed_grid(&y.points, &x.points, tau_cd, p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveCell {
    pub cell: usize,
    pub points: PointCloud,
    pub label: PrimitiveCategory,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveCellSet {
    pub entries: Vec<ActiveCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoccCellStatus {
    pub cell: usize,
    pub label: CellLabel,
    pub points: usize,
    pub extent: f64,
    pub ok: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoccOutcome {
    pub pass: bool,
    /// Empty unless `pass`.
    pub active: ActiveCellSet,
    /// Status of every cell; the verdict itself stops at the first violation.
    pub cells: Vec<GoccCellStatus>,
}

fn axis_extent(c: &PointCloud) -> f64 {
    c.bbox().map(|b| b.extent().max()).unwrap_or(0.0)
}

/// Global occupancy check of a tensor against a context.
pub fn gocc(t: &GeometryTensor, c: &ContextVector, params: &VerificationParams) -> Result<GoccOutcome> {
    let labels = decode_context(c)?;
    gocc_cells(&detensorize(t), &labels, params)
}

pub(crate) fn gocc_cells(
    clouds: &[PointCloud],
    labels: &[CellLabel],
    params: &VerificationParams,
) -> Result<GoccOutcome> {
    let mut cells = Vec::with_capacity(labels.len());
    let mut active = ActiveCellSet::default();
    let mut pass = true;
    for (j, (pts, &label)) in clouds.iter().zip(labels).enumerate() {
        debug_assert!(pts.points.iter().all(|p| p.norm() > PLACEHOLDER_NORM));
        let n = pts.len();
        let extent = axis_extent(pts);
        let reason = match label.category() {
            Some(_) if n < MIN_POINTS => Some(format!("occupied cell has {n} < {MIN_POINTS} points")),
            Some(_) if extent < params.tau_active => {
                Some(format!("occupied cell extent {extent:.4} < tau_active {}", params.tau_active))
            }
            None if n >= MIN_POINTS => Some(format!("null cell holds {n} >= {MIN_POINTS} points")),
            _ => None,
        };
        let ok = reason.is_none();
        if !ok {
            pass = false;
        }
        if let (true, Some(cat)) = (pass, label.category()) {
            active.entries.push(ActiveCell { cell: j + 1, points: pts.clone(), label: cat });
        }
        cells.push(GoccCellStatus { cell: j + 1, label, points: n, extent, ok, reason });
    }
    if !pass {
        active.entries.clear();
    }
    Ok(GoccOutcome { pass, active, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcvOutcome {
    pub pass: bool,
    pub d_target: f64,
    pub k_star: CellLabel,
    /// PCD to every template in category order.
    pub distances: Vec<f64>,
}

/// Template competition for one cell: nearest template must be the claimed one
/// and close enough. Ties go to the lowest category index.
pub fn tcv(
    pj: &PointCloud,
    cj: CellLabel,
    lib: &TemplateLibrary,
    params: &VerificationParams,
) -> Result<TcvOutcome> {
    let target = cj
        .category()
        .ok_or_else(|| Error::param("TCV needs a non-null target label"))?;
    if pj.is_empty() {
        return Err(Error::param("TCV needs a nonempty point set"));
    }
    let centered = pj.centered();
    let distances = lib
        .iter()
        .map(|(_, tpl)| pcd(&centered, tpl, params.tau_cd, params.p))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (k, &d) in distances.iter().enumerate() {
        if d < distances[best] {
            best = k;
        }
    }
    let k_star = CellLabel::from(PrimitiveCategory::ALL[best]);
    let d_target = distances[target.index() as usize - 1];
    Ok(TcvOutcome {
        pass: k_star == cj && d_target <= params.tau_cd,
        d_target,
        k_star,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    None,
    Gocc,
    Tcv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub cell: usize,
    pub label: CellLabel,
    pub tcv_pass: bool,
    pub d_target: f64,
    pub k_star: CellLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub labels: Vec<CellLabel>,
    pub gocc_pass: bool,
    pub gocc_cells: Vec<GoccCellStatus>,
    pub per_cell: Vec<CellVerdict>,
    pub overall_pass: bool,
    pub failure_stage: FailureStage,
}

impl VerificationReport {
    /// Sum of per-cell target distances, used to rank candidates.
    pub fn total_d_target(&self) -> f64 {
        self.per_cell.iter().map(|c| c.d_target).sum()
    }
}

/// GOCC, then TCV on each active cell.
pub fn verify(
    t: &GeometryTensor,
    c: &ContextVector,
    lib: &TemplateLibrary,
    params: &VerificationParams,
) -> Result<VerificationReport> {
    let labels = decode_context(c)?;
    verify_cells(&detensorize(t), &labels, lib, params)
}

pub(crate) fn verify_cells(
    clouds: &[PointCloud],
    labels: &[CellLabel],
    lib: &TemplateLibrary,
    params: &VerificationParams,
) -> Result<VerificationReport> {
    params.validate()?;
    let g = gocc_cells(clouds, labels, params)?;
    let per_cell = if g.pass {
        g.active
            .entries
            .par_iter()
            .map(|a| {
                let o = tcv(&a.points, a.label.into(), lib, params)?;
                Ok(CellVerdict {
                    cell: a.cell,
                    label: a.label.into(),
                    tcv_pass: o.pass,
                    d_target: o.d_target,
                    k_star: o.k_star,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let tcv_ok = per_cell.iter().all(|c| c.tcv_pass);
    let failure_stage = match (g.pass, tcv_ok) {
        (false, _) => FailureStage::Gocc,
        (true, false) => FailureStage::Tcv,
        _ => FailureStage::None,
    };
    Ok(VerificationReport {
        labels: labels.to_vec(),
        gocc_pass: g.pass,
        gocc_cells: g.cells,
        per_cell,
        overall_pass: failure_stage == FailureStage::None,
        failure_stage,
    })
}
