//! DP-FedAvg round math: self-sampling, clipping, distributed Gaussian noise,
//! the moments accountant, and a least-squares toy trainer.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{expand, Digest32};

/// Highest moment order scanned by the accountant.
pub const MAX_ORDER: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("invalid DP configuration: {0}")]
    Config(String),
    #[error("accountant precondition violated: {0}")]
    Domain(String),
    #[error("no moment order in [1, {MAX_ORDER}] satisfies the preconditions")]
    NoFeasibleOrder,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    /// sampling probability
    pub q: f64,
    /// noise multiplier
    pub z: f64,
    /// L2 clipping bound
    pub clip_s: f64,
    /// population size
    pub w: u64,
    pub delta_target: f64,
    pub epsilon_budget: f64,
}

impl DpConfig {
    pub fn sigma(&self) -> f64 {
        self.z * self.clip_s
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(DpError::Config(format!("q={} outside (0, 1]", self.q)));
        }
        if !(self.z > 0.0 && self.clip_s > 0.0) {
            return Err(DpError::Config("z and clip_s must be positive".into()));
        }
        if self.w == 0 {
            return Err(DpError::Config("w must be positive".into()));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0 / self.w as f64) {
            return Err(DpError::Config(format!(
                "delta_target={} must lie in (0, 1/W)",
                self.delta_target
            )));
        }
        if !(self.epsilon_budget > 0.0) {
            return Err(DpError::Config("epsilon_budget must be positive".into()));
        }
        Ok(())
    }
}

/// PRG(pk ‖ beacon): the first 8 bytes as a little-endian integer, divided by
/// 2^64 − 1, compared against `q`.
pub fn is_sampled(device_pk: &[u8; 32], beacon: &Digest32, q: f64) -> bool {
    if q >= 1.0 {
        return true;
    }
    let bytes = expand(&[device_pk.as_slice(), beacon].concat(), 8);
    let x = u64::from_le_bytes(bytes.try_into().unwrap());
    (x as f64 / u64::MAX as f64) < q
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `u · min(1, S/‖u‖₂)`.
pub fn clip(update: &[f64], s: f64) -> Vec<f64> {
    let norm = l2_norm(update);
    if norm <= s {
        return update.to_vec();
    }
    let mut out: Vec<f64> = update.iter().map(|x| x * (s / norm)).collect();
    // guard against the product rounding just above S
    while l2_norm(&out) > s {
        out.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub c: usize,
    pub a: usize,
    /// members allowed to go offline
    pub b_off: usize,
}

impl NoisePlan {
    pub fn new(c: usize, a: usize, b_off: usize) -> Result<Self, DpError> {
        if a + b_off >= c {
            return Err(DpError::Config(format!("C−A−B_off must be ≥ 1 (C={c}, A={a}, B_off={b_off})")));
        }
        Ok(Self { c, a, b_off })
    }

    /// Members guaranteed to contribute honestly.
    pub fn honest_min(&self) -> usize {
        self.c - self.a - self.b_off
    }
}

/// `σ / sqrt(C − A − B_off)`: the honest minimum alone adds variance σ².
pub fn noise_share_std(plan: &NoisePlan, sigma: f64) -> f64 {
    sigma / (plan.honest_min() as f64).sqrt()
}

pub fn sample_noise_share<R: RngCore + ?Sized>(std: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; dim];
    }
    let n = Normal::new(0.0, std).expect("finite std");
    (0..dim).map(|_| n.sample(rng)).collect()
}

/// `q²λ(λ+1) / ((1−q)σ²)`, the leading term of the sampled-Gaussian moment
/// bound; the `O(q³λ³/σ³)` remainder is dropped.
pub fn moments_alpha(q: f64, sigma_rel: f64, order: u32) -> Result<f64, DpError> {
    if !(q >= 0.0 && q < 1.0 && sigma_rel > 0.0) {
        return Err(DpError::Domain(format!("q={q}, sigma={sigma_rel}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q > 1.0 / (16.0 * sigma_rel) {
        return Err(DpError::Domain(format!("q={q} exceeds 1/(16σ)")));
    }
    let lam = order as f64;
    if order == 0 || lam > sigma_rel * sigma_rel * (1.0 / (q * sigma_rel)).ln() {
        return Err(DpError::Domain(format!("order {order} exceeds σ²ln(1/(qσ))")));
    }
    Ok(q * q * lam * (lam + 1.0) / ((1.0 - q) * sigma_rel * sigma_rel))
}

/// `min_λ (T·α(λ) + ln(1/δ)) / λ` over feasible integer λ in `[1, 64]`.
pub fn epsilon_for(rounds: u64, q: f64, z: f64, delta_target: f64) -> Result<f64, DpError> {
    let mut acc = AccountantState::new(delta_target)?;
    for _ in 0..rounds {
        acc.history.push(RoundPrivacy { q, z });
    }
    acc.recompute()?;
    Ok(acc.epsilon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPrivacy {
    pub q: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    pub history: Vec<RoundPrivacy>,
    pub delta: f64,
    pub epsilon: f64,
}

impl AccountantState {
    pub fn new(delta: f64) -> Result<Self, DpError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::Config(format!("delta={delta} outside (0, 1)")));
        }
        let mut s = Self {
            history: Vec::new(),
            delta,
            epsilon: 0.0,
        };
        s.recompute()?;
        Ok(s)
    }

    pub fn rounds_done(&self) -> u64 {
        self.history.len() as u64
    }

    /// Moments add across rounds; orders infeasible for any round are skipped.
    pub fn epsilon_after(history: &[RoundPrivacy], delta: f64) -> Result<f64, DpError> {
        let log_inv_delta = (1.0 / delta).ln();
        let mut best: Option<f64> = None;
        'orders: for order in 1..=MAX_ORDER {
            let mut total = 0.0;
            for r in history {
                match moments_alpha(r.q, r.z, order) {
                    Ok(a) => total += a,
                    Err(_) => continue 'orders,
                }
            }
            let eps = (total + log_inv_delta) / order as f64;
            best = Some(best.map_or(eps, |b: f64| b.min(eps)));
        }
        best.ok_or(DpError::NoFeasibleOrder)
    }

    pub fn recompute(&mut self) -> Result<(), DpError> {
        self.epsilon = Self::epsilon_after(&self.history, self.delta)?;
        Ok(())
    }

    /// ε if one more round with `(q, z)` ran.
    pub fn preview(&self, q: f64, z: f64) -> Result<f64, DpError> {
        let mut h = self.history.clone();
        h.push(RoundPrivacy { q, z });
        Self::epsilon_after(&h, self.delta)
    }

    pub fn record_round(&mut self, q: f64, z: f64) -> Result<f64, DpError> {
        let eps = self.preview(q, z)?;
        self.history.push(RoundPrivacy { q, z });
        self.epsilon = eps;
        Ok(eps)
    }
}

/// Least-squares samples `(x, y)` for the toy trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Dataset {
    /// `y = x·θ* + noise` with standard-normal features.
    pub fn synthetic<R: RngCore + ?Sized>(true_model: &[f64], n: usize, noise: f64, rng: &mut R) -> Self {
        let std = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..true_model.len()).map(|_| std.sample(rng)).collect();
            let y = dot(&x, true_model) + noise * std.sample(rng);
            xs.push(x);
            ys.push(y);
        }
        Self { xs, ys }
    }

    pub fn dim(&self) -> Option<usize> {
        self.xs.first().map(Vec::len)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_shapes(model: &[f64], data: &Dataset) -> Result<(), DpError> {
    if data.xs.len() != data.ys.len() {
        return Err(DpError::Shape {
            expected: data.xs.len(),
            got: data.ys.len(),
        });
    }
    for x in &data.xs {
        if x.len() != model.len() {
            return Err(DpError::Shape {
                expected: model.len(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// `½·mean((x·θ − y)²)`.
pub fn loss(model: &[f64], data: &Dataset) -> Result<f64, DpError> {
    check_shapes(model, data)?;
    if data.xs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = data
        .xs
        .iter()
        .zip(&data.ys)
        .map(|(x, y)| (dot(x, model) - y).powi(2))
        .sum();
    Ok(0.5 * total / data.xs.len() as f64)
}

pub fn gradient(model: &[f64], data: &Dataset) -> Result<Vec<f64>, DpError> {
    check_shapes(model, data)?;
    let mut g = vec![0.0; model.len()];
    if data.xs.is_empty() {
        return Ok(g);
    }
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let r = dot(x, model) - y;
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi += r * xi;
        }
    }
    let n = data.xs.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Full-batch gradient descent for `epochs` steps, returning the clipped delta.
pub fn local_update(model: &[f64], data: &Dataset, epochs: usize, lr: f64, s: f64) -> Result<Vec<f64>, DpError> {
    let mut theta = model.to_vec();
    for _ in 0..epochs {
        let g = gradient(&theta, data)?;
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= lr * gi;
        }
    }
    check_shapes(model, data)?;
    let delta: Vec<f64> = theta.iter().zip(model).map(|(a, b)| a - b).collect();
    Ok(clip(&delta, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sampling_extremes_and_rate() {
        let b = [3u8; 32];
        let mut hits = 0;
        for i in 0..100_000u64 {
            let mut pk = [0u8; 32];
            pk[..8].copy_from_slice(&i.to_le_bytes());
            assert!(is_sampled(&pk, &b, 1.0));
            assert!(!is_sampled(&pk, &b, 0.0));
            hits += is_sampled(&pk, &b, 0.01) as u32;
        }
        // binomial(1e5, 0.01): sd ≈ 31.5
        assert!((hits as f64 - 1000.0).abs() < 5.0 * 31.5);
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip(&[0.1, 0.2], 1.0), vec![0.1, 0.2]);
        let c = clip(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-12 && (c[1] - 0.8).abs() < 1e-12);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let s = rng.gen_range(0.01..10.0);
            assert!(l2_norm(&clip(&v, s)) <= s);
        }
    }

    #[test]
    fn noise_plan_std() {
        let p = NoisePlan::new(1, 0, 0).unwrap();
        assert_eq!(noise_share_std(&p, 2.5), 2.5);
        let p = NoisePlan::new(280, 40, 0).unwrap();
        assert!((noise_share_std(&p, 1.0) - 1.0 / 240f64.sqrt()).abs() < 1e-15);
        assert!(NoisePlan::new(10, 5, 5).is_err());
        assert_eq!(sample_noise_share(0.0, 4, &mut ChaCha20Rng::seed_from_u64(0)), vec![0.0; 4]);
    }

    #[test]
    fn alpha_scaling_and_limits() {
        assert_eq!(moments_alpha(0.0, 4.0, 3).unwrap(), 0.0);
        let a = moments_alpha(0.001, 4.0, 8).unwrap();
        let b = moments_alpha(0.001, 8.0, 8).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(moments_alpha(0.1, 4.0, 1).is_err());
        assert!(moments_alpha(0.01, 1.1, 64).is_err());
    }

    #[test]
    fn epsilon_zero_rounds() {
        let d: f64 = 1e-5;
        let e = epsilon_for(0, 0.001, 10.0, d).unwrap();
        assert!((e - (1.0 / d).ln() / 64.0).abs() < 1e-12);
        assert!(epsilon_for(200, 0.01, 1.1, d).unwrap() >= epsilon_for(100, 0.01, 1.1, d).unwrap());
        assert!(epsilon_for(1, 0.5, 1.0, d).is_err());
    }

    #[test]
    fn accountant_record_matches_closed_form() {
        let mut acc = AccountantState::new(1e-5).unwrap();
        for t in 1..=50 {
            let e = acc.record_round(0.01, 1.5).unwrap();
            assert_eq!(e, epsilon_for(t, 0.01, 1.5, 1e-5).unwrap());
        }
        assert_eq!(acc.rounds_done(), 50);
    }

    #[test]
    fn trainer_fixed_point_and_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let truth = vec![0.5, -1.0, 2.0];
        let exact = Dataset::synthetic(&truth, 50, 0.0, &mut rng);
        let d = local_update(&truth, &exact, 5, 0.1, 1.0).unwrap();
        assert!(l2_norm(&d) < 1e-12);

        let noisy = Dataset::synthetic(&truth, 50, 0.3, &mut rng);
        let theta = vec![0.0; 3];
        let g = gradient(&theta, &noisy).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (loss(&plus, &noisy).unwrap() - loss(&minus, &noisy).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-8));
        }
        assert!(l2_norm(&local_update(&theta, &noisy, 3, 0.5, 0.2).unwrap()) <= 0.2);
        assert!(local_update(&[0.0; 2], &noisy, 1, 0.1, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DpConfig {
            q: 0.05,
            z: 1.1,
            clip_s: 1.0,
            w: 2000,
            delta_target: 1e-5,
            epsilon_budget: 10.0,
        };
        assert!(c.validate().is_ok());
        assert!((c.sigma() - 1.1).abs() < 1e-15);
        c.delta_target = 1e-3;
        assert!(c.validate().is_err());
    }
}
