use rayon::prelude::*;

use super::{noise_toward, DiffusionSchedule, Denoiser};
use crate::error::Result;
use crate::grid::{decode_context, CELL_COUNT};
use crate::primitives::{make_primitive_mesh, Aabb, PrimitiveCategory, PrimitiveParams, Vec3};
use crate::tensor::{frame_cell_box, GeometryTensor, FRAME_CELL_EDGE, PLACEHOLDER_NORM};

/// Closest point to `p` on triangle `(a, b, c)`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn box_dist_sq(b: &Aabb, p: &Vec3) -> f64 {
    (0..3)
        .map(|k| {
            let d = (b.min[k] - p[k]).max(p[k] - b.max[k]).max(0.0);
            d * d
        })
        .sum()
}

struct Surface {
    tris: Vec<[Vec3; 3]>,
    boxes: Vec<Aabb>,
}

impl Surface {
    fn nearest(&self, p: &Vec3, radius_sq: f64) -> Option<Vec3> {
        let mut best = radius_sq;
        let mut hit = None;
        for (t, b) in self.tris.iter().zip(&self.boxes) {
            if box_dist_sq(b, p) > best {
                continue;
            }
            let q = closest_point_on_triangle(p, &t[0], &t[1], &t[2]);
            let d = (q - p).norm_squared();
            if d <= best {
                best = d;
                hit = Some(q);
            }
        }
        hit
    }
}

/// Network-free denoiser: its clean estimate is the current state (rescaled to
/// undo the deterministic chain's shrinkage) with every point of an occupied
/// cell snapped onto the labelled primitive's surface when it lies within the
/// capture radius. Null cells and placeholders are left in place.
pub struct TemplateProjectionDenoiser {
    schedule: DiffusionSchedule,
    surfaces: Vec<Surface>,
    capture_radius: f64,
    /// `x_t = kappa_t g + mu_t q` along the deterministic chain with identity projection.
    kappa: Vec<f64>,
    mu: Vec<f64>,
}

pub const DEFAULT_CAPTURE_RADIUS: f64 = 0.1;

impl TemplateProjectionDenoiser {
    pub fn new(schedule: &DiffusionSchedule) -> Result<Self> {
        Self::with_params(schedule, &PrimitiveParams::with_edge(FRAME_CELL_EDGE), DEFAULT_CAPTURE_RADIUS)
    }

    pub fn with_params(schedule: &DiffusionSchedule, params: &PrimitiveParams, capture_radius: f64) -> Result<Self> {
        let surfaces = PrimitiveCategory::ALL
            .iter()
            .map(|&cat| {
                let mesh = make_primitive_mesh(cat, params)?;
                let tris: Vec<[Vec3; 3]> = mesh.triangles().collect();
                let boxes = tris.iter().map(|t| Aabb::from_points(t.iter().copied()).unwrap()).collect();
                Ok(Surface { tris, boxes })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = schedule.steps();
        let mut kappa = vec![0.0; n + 1];
        let mut mu = vec![0.0; n + 1];
        kappa[n] = 1.0;
        for t in (1..=n).rev() {
            let (a, b, ab) = (schedule.alpha(t), schedule.beta(t), schedule.alpha_bar(t));
            let keep = 1.0 - b / (1.0 - ab);
            kappa[t - 1] = (kappa[t] * keep + b * ab.sqrt() / (1.0 - ab)) / a.sqrt();
            mu[t - 1] = (mu[t] * keep + b * schedule.drift_coefficient(t) / (1.0 - ab)) / a.sqrt();
        }
        Ok(Self { schedule: schedule.clone(), surfaces, capture_radius, kappa, mu })
    }

    /// Clean-tensor estimate at step `t`.
    pub fn estimate(&self, xt: &GeometryTensor, t: usize, labels: &[crate::grid::CellLabel]) -> GeometryTensor {
        let q = self.schedule.q();
        let y = xt.add_channels(&q, -self.mu[t]).map(|v| v / self.kappa[t]);
        let r2 = self.capture_radius * self.capture_radius;
        let blocks: Vec<(usize, Vec<Vec3>)> = (1..=CELL_COUNT)
            .into_par_iter()
            .filter_map(|cell| {
                let cat = labels[cell - 1].category()?;
                let origin = frame_cell_box(cell).unwrap().min;
                let surf = &self.surfaces[cat.index() as usize - 1];
                let pts = y
                    .block_points(cell)
                    .into_iter()
                    .map(|p| {
                        if p.norm() <= PLACEHOLDER_NORM {
                            return p;
                        }
                        match surf.nearest(&(p - origin), r2) {
                            Some(hit) => hit + origin,
                            None => p,
                        }
                    })
                    .collect();
                Some((cell, pts))
            })
            .collect();
        let mut out = y;
        for (cell, pts) in blocks {
            out.set_block(cell, &pts);
        }
        out
    }
}

impl Denoiser for TemplateProjectionDenoiser {
    fn predict(&self, xt: &GeometryTensor, t: usize, c: &crate::grid::ContextVector) -> Result<GeometryTensor> {
        self.schedule.check(t)?;
        let labels = decode_context(c)?;
        let x0_hat = self.estimate(xt, t, &labels);
        Ok(noise_toward(xt, t, &x0_hat, &self.schedule))
    }
}
