//! Nonzero-mean diffusion: schedule, forward process, reverse sampler,
//! training loss and the denoiser contract.

mod projection;
mod tiny;

pub use projection::{closest_point_on_triangle, TemplateProjectionDenoiser, DEFAULT_CAPTURE_RADIUS};
pub use tiny::{lr_at_epoch, train_denoiser, TinyDenoiser, TrainConfig, TrainingCurve};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ContextVector;
use crate::primitives::Vec3;
use crate::tensor::{GeometryTensor, TENSOR_LEN};

/// Schedule parameters as stored in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta1: f64,
    pub beta_t: f64,
    pub q: [f64; 3],
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 500, beta1: 1e-4, beta_t: 0.02, q: [0.0; 3] }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta1, self.beta_t, Vec3::from(self.q))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// `Q_t = drift[t] * q`, with `drift[0] = 0`.
    drift: Vec<f64>,
    q: Vec3,
}

/// Linear beta schedule from `beta1` to `beta_t` over `steps` timesteps.
pub fn make_schedule(steps: usize, beta1: f64, beta_t: f64, q: Vec3) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::param("schedule needs at least one timestep"));
    }
    if !(beta1 > 0.0 && beta1 <= beta_t && beta_t < 1.0) {
        return Err(Error::param(format!("need 0 < beta1 <= betaT < 1, got {beta1}, {beta_t}")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("mean field must be finite"));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta1
            } else {
                beta1 + (beta_t - beta1) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let mut drift = vec![0.0];
    for t in 1..=steps {
        drift.push(alpha[t - 1].sqrt() * drift[t - 1] + (1.0 - alpha[t - 1]).sqrt());
    }
    Ok(DiffusionSchedule {
        config: ScheduleConfig { steps, beta1, beta_t, q: [q.x, q.y, q.z] },
        beta,
        alpha,
        alpha_bar,
        drift,
        q,
    })
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::param(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.beta(t).sqrt()
    }

    pub fn q(&self) -> Vec3 {
        self.q
    }

    /// Scalar `c_t` with `Q_t = c_t q`.
    pub fn drift_coefficient(&self, t: usize) -> f64 {
        self.drift[t]
    }

    /// `Q_t` via the recurrence.
    pub fn q_t(&self, t: usize) -> Vec3 {
        self.q * self.drift[t]
    }

    /// `Q_t` via the explicit sum over `k = 1..=t`.
    pub fn q_t_closed(&self, t: usize) -> Vec3 {
        let mut sum = 0.0;
        for k in 1..=t {
            let tail: f64 = (k + 1..=t).map(|i| self.alpha(i)).product();
            sum += ((1.0 - self.alpha(k)) * tail).sqrt();
        }
        self.q * sum
    }

    pub fn q_prime(&self, t: usize) -> Vec3 {
        self.q * ((1.0 - self.alpha_bar(t)).sqrt() / (1.0 - self.alpha(t)).sqrt())
    }
}

/// Noise predictor `z'(x_t, t, c)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, xt: &GeometryTensor, t: usize, c: &ContextVector) -> Result<GeometryTensor>;
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) zbar + Q_t`.
pub fn forward_closed(
    x0: &GeometryTensor,
    t: usize,
    zbar: &GeometryTensor,
    s: &DiffusionSchedule,
) -> Result<GeometryTensor> {
    s.check(t)?;
    let ab = s.alpha_bar(t);
    Ok(x0.lincomb(ab.sqrt(), zbar, (1.0 - ab).sqrt()).add_channels(&s.q_t(t), 1.0))
}

/// One forward step `sqrt(alpha_t) x + sqrt(1 - alpha_t) (z + q)`.
pub fn forward_step(
    xprev: &GeometryTensor,
    t: usize,
    z: &GeometryTensor,
    s: &DiffusionSchedule,
) -> Result<GeometryTensor> {
    s.check(t)?;
    let a = s.alpha(t);
    let zq = z.add_channels(&s.q, 1.0);
    Ok(xprev.lincomb(a.sqrt(), &zq, (1.0 - a).sqrt()))
}

/// One reverse step. `z` must be zero at `t = 1`.
pub fn reverse_step(
    xt: &GeometryTensor,
    t: usize,
    c: &ContextVector,
    d: &dyn Denoiser,
    z: &GeometryTensor,
    s: &DiffusionSchedule,
) -> Result<GeometryTensor> {
    s.check(t)?;
    if t == 1 && z.max_abs() != 0.0 {
        return Err(Error::ContractViolation("noise must be zero at t = 1".into()));
    }
    let pred = d.predict(xt, t, c)?;
    Ok(reverse_update(xt, t, &pred, z, s))
}

fn reverse_update(
    xt: &GeometryTensor,
    t: usize,
    pred: &GeometryTensor,
    z: &GeometryTensor,
    s: &DiffusionSchedule,
) -> GeometryTensor {
    let (a, b, ab) = (s.alpha(t), s.beta(t), s.alpha_bar(t));
    let eps = pred.add_channels(&s.q_prime(t), 1.0);
    let k = b / (1.0 - ab).sqrt();
    let inv = 1.0 / a.sqrt();
    let mean = xt.lincomb(1.0, &eps, -k).map(|v| inv * v);
    mean.lincomb(1.0, z, s.sigma(t))
}

pub fn standard_normal_tensor<R: Rng + ?Sized>(rng: &mut R) -> GeometryTensor {
    GeometryTensor::from_vec((0..TENSOR_LEN).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Runs the reverse chain from `x_T` down to `x_0`.
pub fn sample(
    x_t: &GeometryTensor,
    c: &ContextVector,
    d: &dyn Denoiser,
    s: &DiffusionSchedule,
    seed: u64,
    deterministic: bool,
) -> Result<GeometryTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = GeometryTensor::zeros();
    let mut x = x_t.clone();
    for t in (1..=s.steps()).rev() {
        let z = if deterministic || t == 1 { zero.clone() } else { standard_normal_tensor(&mut rng) };
        x = reverse_step(&x, t, c, d, &z, s)?;
    }
    Ok(x)
}

/// Draws `t` and `z`, noises `x0` in closed form and returns the noise MSE.
pub fn training_loss(
    x0: &GeometryTensor,
    c: &ContextVector,
    d: &dyn Denoiser,
    s: &DiffusionSchedule,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(1..=s.steps());
    let z = standard_normal_tensor(&mut rng);
    let xt = forward_closed(x0, t, &z, s)?;
    let pred = d.predict(&xt, t, c)?;
    Ok(mse(&z, &pred))
}

pub fn mse(a: &GeometryTensor, b: &GeometryTensor) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / TENSOR_LEN as f64
}

/// Noise estimate that steers `x_t` toward the clean target `x0_hat`.
pub fn noise_toward(xt: &GeometryTensor, t: usize, x0_hat: &GeometryTensor, s: &DiffusionSchedule) -> GeometryTensor {
    let ab = s.alpha_bar(t);
    let inv = 1.0 / (1.0 - ab).sqrt();
    xt.lincomb(1.0, x0_hat, -ab.sqrt())
        .add_channels(&s.q_t(t), -1.0)
        .map(|v| v * inv)
        .add_channels(&s.q_prime(t), -1.0)
}

/// Test denoiser that knows the clean tensor.
pub struct OracleDenoiser {
    pub x0: GeometryTensor,
    pub schedule: DiffusionSchedule,
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, xt: &GeometryTensor, t: usize, _c: &ContextVector) -> Result<GeometryTensor> {
        self.schedule.check(t)?;
        Ok(noise_toward(xt, t, &self.x0, &self.schedule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_geometry, encode_context, CellLabel};
    use crate::tensor::assembly_tensor;

    struct Constant(GeometryTensor);
    impl Denoiser for Constant {
        fn predict(&self, _: &GeometryTensor, _: usize, _: &ContextVector) -> Result<GeometryTensor> {
            Ok(self.0.clone())
        }
    }

    fn null_ctx() -> ContextVector {
        encode_context(&[CellLabel::NULL; 12])
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(500, 1e-4, 0.02, Vec3::zeros()).unwrap();
        assert!((1..=500).all(|t| s.q_t(t) == Vec3::zeros()));
        assert!((2..=500).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)));
        let one = make_schedule(1, 0.5, 0.5, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((one.q_t(1) - Vec3::new(0.5f64.sqrt(), 0.0, 0.0)).norm() < 1e-15);
        assert!(make_schedule(0, 1e-4, 0.02, Vec3::zeros()).is_err());
        assert!(make_schedule(10, 0.3, 0.2, Vec3::zeros()).is_err());
        assert!(make_schedule(10, 0.1, 1.0, Vec3::zeros()).is_err());
    }

    #[test]
    fn drift_closed_form_matches_recurrence() {
        let s = make_schedule(500, 1e-4, 0.02, Vec3::new(0.3, -1.0, 2.0)).unwrap();
        for t in 1..=500 {
            let (a, b) = (s.q_t(t), s.q_t_closed(t));
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn forward_identities() {
        let s = make_schedule(50, 1e-4, 0.05, Vec3::new(0.1, 0.2, -0.3)).unwrap();
        let mut l = [CellLabel::NULL; 12];
        l[2] = CellLabel::new(4).unwrap();
        let x0 = assembly_tensor(&assemble_geometry(&l, 5).unwrap()).unwrap();
        let zero = GeometryTensor::zeros();
        let mut x = x0.clone();
        for t in 1..=50 {
            x = forward_step(&x, t, &zero, &s).unwrap();
            let closed = forward_closed(&x0, t, &zero, &s).unwrap();
            assert!(x.max_abs_diff(&closed) < 1e-10);
        }
        let plain = make_schedule(50, 1e-4, 0.05, Vec3::zeros()).unwrap();
        let y = forward_closed(&x0, 10, &zero, &plain).unwrap();
        assert!(y.max_abs_diff(&x0.map(|v| v * plain.alpha_bar(10).sqrt())) < 1e-15);
        assert!(forward_closed(&x0, 0, &zero, &s).is_err());
        assert!(forward_step(&x0, 51, &zero, &s).is_err());
    }

    #[test]
    fn reverse_contract() {
        let s = make_schedule(10, 1e-3, 0.02, Vec3::zeros()).unwrap();
        let d = Constant(GeometryTensor::zeros());
        let zero = GeometryTensor::zeros();
        let out = reverse_step(&zero, 1, &null_ctx(), &d, &zero, &s).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        let ones = zero.map(|_| 1.0);
        assert!(matches!(
            reverse_step(&zero, 1, &null_ctx(), &d, &ones, &s),
            Err(Error::ContractViolation(_))
        ));
        assert!(reverse_step(&zero, 2, &null_ctx(), &d, &ones, &s).is_ok());
    }

    #[test]
    fn oracle_roundtrip_and_determinism() {
        let s = make_schedule(500, 1e-4, 0.02, Vec3::zeros()).unwrap();
        let mut l = [CellLabel::NULL; 12];
        l[0] = CellLabel::new(1).unwrap();
        l[7] = CellLabel::new(6).unwrap();
        let x0 = assembly_tensor(&assemble_geometry(&l, 11).unwrap()).unwrap();
        let xt = forward_closed(&x0, 500, &GeometryTensor::zeros(), &s).unwrap();
        let d = OracleDenoiser { x0: x0.clone(), schedule: s.clone() };
        let c = encode_context(&l);
        let out = sample(&xt, &c, &d, &s, 0, true).unwrap();
        assert!(out.max_abs_diff(&x0) <= 1e-3);
        let a = sample(&xt, &c, &d, &s, 9, false).unwrap();
        let b = sample(&xt, &c, &d, &s, 9, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_stubs() {
        let s = make_schedule(20, 1e-4, 0.02, Vec3::zeros()).unwrap();
        struct Echo(u64, DiffusionSchedule, f64);
        impl Denoiser for Echo {
            fn predict(&self, _: &GeometryTensor, _: usize, _: &ContextVector) -> Result<GeometryTensor> {
                let mut rng = ChaCha8Rng::seed_from_u64(self.0);
                let _t = rng.random_range(1..=self.1.steps());
                Ok(standard_normal_tensor(&mut rng).map(|v| v + self.2))
            }
        }
        let x0 = GeometryTensor::zeros();
        let loss = training_loss(&x0, &null_ctx(), &Echo(3, s.clone(), 0.0), &s, 3).unwrap();
        assert_eq!(loss, 0.0);
        let loss = training_loss(&x0, &null_ctx(), &Echo(3, s.clone(), 1.0), &s, 3).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }
}
