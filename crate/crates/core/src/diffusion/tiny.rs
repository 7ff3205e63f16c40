use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward_closed, standard_normal_tensor, DiffusionSchedule, Denoiser};
use crate::error::{Error, Result};
use crate::grid::{decode_context, CellLabel, ContextVector, CELL_COUNT, LABEL_STATES};
use crate::primitives::{Vec3, POINTS_PER_CELL};
use crate::tensor::{GeometryTensor, TENSOR_LEN};

const TIME_FEATURES: usize = 16;

/// Offsets of each parameter group inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    h: usize,
    w1: usize,
    b1: usize,
    wt: usize,
    ec: usize,
    w2: usize,
    b2: usize,
    gain: usize,
    bias: usize,
    tgain: usize,
    len: usize,
}

impl Layout {
    fn new(h: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + 3 * h;
        let wt = b1 + h;
        let ec = wt + TIME_FEATURES * h;
        let w2 = ec + LABEL_STATES * h;
        let b2 = w2 + 3 * h;
        let gain = b2 + 3;
        let bias = gain + CELL_COUNT * 3;
        let tgain = bias + CELL_COUNT * 3;
        let len = tgain + 3 * TIME_FEATURES;
        Self { h, w1, b1, wt, ec, w2, b2, gain, bias, tgain, len }
    }
}

/// Pointwise network shared across blocks: hidden `tanh` layer fed by the
/// coordinates plus timestep and per-cell label embeddings, a linear read-out,
/// and a per-block affine skip term whose gain is also modulated by the timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    hidden: usize,
    steps: usize,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TinyMeta {
    kind: String,
    hidden: usize,
    steps: usize,
    time_features: usize,
    param_count: usize,
}

fn time_features(t: usize, steps: usize) -> [f64; TIME_FEATURES] {
    let mut f = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let w = std::f64::consts::PI * (1u64 << k) as f64 / steps as f64;
        f[2 * k] = (w * t as f64).sin();
        f[2 * k + 1] = (w * t as f64).cos();
    }
    f
}

impl TinyDenoiser {
    pub fn new(hidden: usize, steps: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || steps == 0 {
            return Err(Error::param("hidden width and step count must be positive"));
        }
        let l = Layout::new(hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; l.len];
        let mut fill = |range: std::ops::Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            for v in &mut params[range] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        fill(l.w1..l.b1, 1.0, &mut rng);
        fill(l.wt..l.ec, 0.5 / (TIME_FEATURES as f64).sqrt(), &mut rng);
        fill(l.ec..l.w2, 0.1, &mut rng);
        fill(l.w2..l.b2, 0.1 / (hidden as f64).sqrt(), &mut rng);
        Ok(Self { hidden, steps, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(self.hidden)
    }

    /// Hidden-layer offset shared by every point of a block.
    fn block_offset(&self, l: &Layout, phi: &[f64; TIME_FEATURES], label: CellLabel) -> Vec<f64> {
        let p = &self.params;
        let m = label.value() as usize;
        (0..l.h)
            .map(|i| {
                let mut a = p[l.b1 + i] + p[l.ec + m * l.h + i];
                for (k, f) in phi.iter().enumerate() {
                    a += p[l.wt + i * TIME_FEATURES + k] * f;
                }
                a
            })
            .collect()
    }

    fn time_gain(&self, l: &Layout, phi: &[f64; TIME_FEATURES]) -> Vec3 {
        let p = &self.params;
        Vec3::from_fn(|o, _| (0..TIME_FEATURES).map(|k| p[l.tgain + o * TIME_FEATURES + k] * phi[k]).sum())
    }

    fn point_forward(&self, l: &Layout, base: &[f64], tg: &Vec3, cell: usize, x: &Vec3, h: &mut [f64]) -> Vec3 {
        let p = &self.params;
        for i in 0..l.h {
            let w = &p[l.w1 + 3 * i..l.w1 + 3 * i + 3];
            h[i] = (base[i] + w[0] * x.x + w[1] * x.y + w[2] * x.z).tanh();
        }
        Vec3::from_fn(|o, _| {
            let w2 = &p[l.w2 + o * l.h..l.w2 + (o + 1) * l.h];
            let lin: f64 = w2.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
            let g = p[l.gain + 3 * (cell - 1) + o] + tg[o];
            let c = p[l.bias + 3 * (cell - 1) + o];
            lin + p[l.b2 + o] + g * x[o] + c
        })
    }

    pub fn forward(&self, xt: &GeometryTensor, t: usize, labels: &[CellLabel]) -> GeometryTensor {
        let l = self.layout();
        let phi = time_features(t, self.steps);
        let blocks: Vec<Vec<Vec3>> = (1..=CELL_COUNT)
            .into_par_iter()
            .map(|cell| {
                let base = self.block_offset(&l, &phi, labels[cell - 1]);
                let tg = self.time_gain(&l, &phi);
                let mut h = vec![0.0; l.h];
                xt.block_points(cell)
                    .iter()
                    .map(|x| self.point_forward(&l, &base, &tg, cell, x, &mut h))
                    .collect()
            })
            .collect();
        let mut out = GeometryTensor::zeros();
        for (j, pts) in blocks.iter().enumerate() {
            out.set_block(j + 1, pts);
        }
        out
    }

    /// Noise MSE against `z` and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        xt: &GeometryTensor,
        t: usize,
        labels: &[CellLabel],
        z: &GeometryTensor,
    ) -> (f64, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let phi = time_features(t, self.steps);
        let scale = 2.0 / TENSOR_LEN as f64;
        let partials: Vec<(f64, Vec<f64>)> = (1..=CELL_COUNT)
            .into_par_iter()
            .map(|cell| {
                let mut g = vec![0.0; l.len];
                let mut loss = 0.0;
                let m = labels[cell - 1].value() as usize;
                let base = self.block_offset(&l, &phi, labels[cell - 1]);
                let tg = self.time_gain(&l, &phi);
                let mut dtg = Vec3::zeros();
                let xs = xt.block_points(cell);
                let zs = z.block_points(cell);
                let mut h = vec![0.0; l.h];
                let mut da_sum = vec![0.0; l.h];
                for k in 0..POINTS_PER_CELL {
                    let x = &xs[k];
                    let out = self.point_forward(&l, &base, &tg, cell, x, &mut h);
                    let r = out - zs[k];
                    loss += r.norm_squared();
                    let dout = r * scale;
                    for o in 0..3 {
                        g[l.b2 + o] += dout[o];
                        g[l.gain + 3 * (cell - 1) + o] += dout[o] * x[o];
                        dtg[o] += dout[o] * x[o];
                        g[l.bias + 3 * (cell - 1) + o] += dout[o];
                    }
                    for i in 0..l.h {
                        let mut dh = 0.0;
                        for o in 0..3 {
                            g[l.w2 + o * l.h + i] += dout[o] * h[i];
                            dh += p[l.w2 + o * l.h + i] * dout[o];
                        }
                        let da = dh * (1.0 - h[i] * h[i]);
                        g[l.w1 + 3 * i] += da * x.x;
                        g[l.w1 + 3 * i + 1] += da * x.y;
                        g[l.w1 + 3 * i + 2] += da * x.z;
                        da_sum[i] += da;
                    }
                }
                for o in 0..3 {
                    for (k, v) in phi.iter().enumerate() {
                        g[l.tgain + o * TIME_FEATURES + k] += dtg[o] * v;
                    }
                }
                for i in 0..l.h {
                    g[l.b1 + i] += da_sum[i];
                    g[l.ec + m * l.h + i] += da_sum[i];
                    for (f, v) in phi.iter().enumerate() {
                        g[l.wt + i * TIME_FEATURES + f] += da_sum[i] * v;
                    }
                }
                (loss, g)
            })
            .collect();
        let mut grad = vec![0.0; l.len];
        let mut loss = 0.0;
        for (pl, pg) in partials {
            loss += pl;
            for (a, b) in grad.iter_mut().zip(pg) {
                *a += b;
            }
        }
        (loss / TENSOR_LEN as f64, grad)
    }

    pub fn to_blob(&self) -> Vec<u8> {
        self.params.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TinyMeta {
            kind: "tiny".into(),
            hidden: self.hidden,
            steps: self.steps,
            time_features: TIME_FEATURES,
            param_count: self.params.len(),
        })?)
    }

    pub fn from_parts(meta_json: &str, blob: &[u8]) -> Result<Self> {
        let meta: TinyMeta = serde_json::from_str(meta_json)?;
        if meta.kind != "tiny" || meta.time_features != TIME_FEATURES {
            return Err(Error::format("denoiser metadata", "unsupported denoiser kind or feature size"));
        }
        let l = Layout::new(meta.hidden);
        if meta.param_count != l.len || blob.len() != 4 * l.len {
            return Err(Error::format("denoiser weights", "parameter count does not match the layout"));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { hidden: meta.hidden, steps: meta.steps, params })
    }

    pub fn save(&self, json_path: &Path, blob_path: &Path) -> Result<()> {
        fs::write(json_path, self.meta_json()?).map_err(|e| Error::io(json_path, e))?;
        fs::write(blob_path, self.to_blob()).map_err(|e| Error::io(blob_path, e))
    }

    pub fn load(json_path: &Path, blob_path: &Path) -> Result<Self> {
        let meta = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::from_parts(&meta, &blob)
    }
}

impl Denoiser for TinyDenoiser {
    fn predict(&self, xt: &GeometryTensor, t: usize, c: &ContextVector) -> Result<GeometryTensor> {
        Ok(self.forward(xt, t, &decode_context(c)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eta0: f64,
    pub batch: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, eta0: 1e-3, batch: 4, hidden: 256, seed: 0 }
    }
}

/// Linearly decayed rate `eta0 (1 - k / K)` for epoch `k` of `K`.
pub fn lr_at_epoch(eta0: f64, k: usize, epochs: usize) -> f64 {
    eta0 * (1.0 - k as f64 / epochs as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub step_losses: Vec<f64>,
    pub epoch_lr: Vec<f64>,
}

impl TrainingCurve {
    /// Trailing moving average of the step losses.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.step_losses.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.step_losses[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }
}

/// Adam on the noise-prediction loss with a per-epoch linear learning-rate decay.
pub fn train_denoiser(
    dataset: &[(GeometryTensor, ContextVector)],
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<(TinyDenoiser, TrainingCurve)> {
    if dataset.is_empty() {
        return Err(Error::param("training needs a nonempty dataset"));
    }
    if config.epochs == 0 || config.batch == 0 || !(config.eta0 > 0.0) {
        return Err(Error::param("epochs, batch and eta0 must be positive"));
    }
    let labels: Vec<Vec<CellLabel>> = dataset
        .iter()
        .map(|(_, c)| decode_context(c).map(|l| l.to_vec()))
        .collect::<Result<_>>()?;
    let mut model = TinyDenoiser::new(config.hidden, schedule.steps(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let n = model.param_count();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut curve = TrainingCurve::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0i32;
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config.eta0, epoch, config.epochs);
        curve.epoch_lr.push(lr);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let mut grad = vec![0.0; n];
            let mut loss = 0.0;
            for &i in chunk {
                let t = rng.random_range(1..=schedule.steps());
                let z = standard_normal_tensor(&mut rng);
                let xt = forward_closed(&dataset[i].0, t, &z, schedule)?;
                let (l, g) = model.loss_and_grad(&xt, t, &labels[i], &z);
                loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let k = chunk.len() as f64;
            step += 1;
            let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
            for (j, p) in model.params.iter_mut().enumerate() {
                let g = grad[j] / k;
                m1[j] = b1 * m1[j] + (1.0 - b1) * g;
                m2[j] = b2 * m2[j] + (1.0 - b2) * g * g;
                *p -= lr * (m1[j] / c1) / ((m2[j] / c2).sqrt() + eps);
            }
            curve.step_losses.push(loss / k);
        }
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::grid::labels_from_values;

    #[test]
    fn gradient_matches_finite_differences() {
        let s = make_schedule(100, 1e-4, 0.02, Vec3::zeros()).unwrap();
        let model = TinyDenoiser::new(8, 100, 1).unwrap();
        let labels = labels_from_values(&[1, 0, 2, 0, 0, 5, 0, 0, 0, 10, 0, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = standard_normal_tensor(&mut rng).map(|v| 0.3 * v);
        let z = standard_normal_tensor(&mut rng);
        let xt = forward_closed(&x0, 37, &z, &s).unwrap();
        let (_, g) = model.loss_and_grad(&xt, 37, &labels, &z);
        let l = model.layout();
        for idx in [l.w1 + 4, l.wt + 3, l.ec + 2 * 8 + 1, l.w2 + 5, l.gain + 7, l.bias + 2, l.b1 + 3, l.tgain + 20] {
            let h = 1e-4;
            let mut plus = model.clone();
            plus.params[idx] += h;
            let mut minus = model.clone();
            minus.params[idx] -= h;
            let fd = (plus.loss_and_grad(&xt, 37, &labels, &z).0 - minus.loss_and_grad(&xt, 37, &labels, &z).0) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-3 * g[idx].abs().max(1e-8), "param {idx}: fd {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn default_size_and_serialization() {
        let m = TinyDenoiser::new(256, 500, 0).unwrap();
        assert!((5_000..20_000).contains(&m.param_count()));
        let back = TinyDenoiser::from_parts(&m.meta_json().unwrap(), &m.to_blob()).unwrap();
        assert_eq!(back.param_count(), m.param_count());
        assert!(back.params.iter().zip(&m.params).all(|(a, b)| (a - b).abs() < 1e-6));
        assert!(TinyDenoiser::from_parts(&m.meta_json().unwrap(), &m.to_blob()[..40]).is_err());
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at_epoch(1e-3, 5, 10), 5e-4);
        assert_eq!(lr_at_epoch(1e-3, 0, 10), 1e-3);
        assert!(train_denoiser(&[], &make_schedule(10, 1e-4, 0.02, Vec3::zeros()).unwrap(), &TrainConfig::default()).is_err());
    }
}
