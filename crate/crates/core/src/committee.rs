//! Committee sizing from the Chernoff tail bound, and beacon-seeded sortition.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256_parts, Digest32};

pub type DeviceId = [u8; 32];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommitteeError {
    #[error("bound requires 0 < f <= t_frac < 1 (f={f}, t_frac={t_frac})")]
    Domain { f: f64, t_frac: f64 },
    #[error("target probability {0} is outside (0, 1]")]
    Target(f64),
    #[error("no committee size up to {0} reaches the target")]
    Unreachable(usize),
    #[error("committee of {c} cannot be drawn from {available} devices")]
    TooLarge { c: usize, available: usize },
    #[error("invalid committee: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum CommitteeRole {
    Master,
    DpNoise,
    Decryption(u8),
}

impl CommitteeRole {
    pub fn salt(&self) -> Vec<u8> {
        match self {
            Self::Master => b"master".to_vec(),
            Self::DpNoise => b"dp-noise".to_vec(),
            Self::Decryption(k) => [b"decryption-".as_slice(), &[*k]].concat(),
        }
    }
}

impl fmt::Display for CommitteeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Master => write!(f, "master"),
            Self::DpNoise => write!(f, "dp_noise"),
            Self::Decryption(k) => write!(f, "decryption_{k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSpec {
    pub role: CommitteeRole,
    pub c: usize,
    pub a: usize,
    /// malicious fraction of the population
    pub f: f64,
}

impl CommitteeSpec {
    pub fn new(role: CommitteeRole, c: usize, a: usize, f: f64) -> Result<Self, CommitteeError> {
        if a == 0 || a >= c {
            return Err(CommitteeError::Invalid(format!("need 0 < A < C, got A={a} C={c}")));
        }
        let spec = Self { role, c, a, f };
        spec.failure_bound()?;
        Ok(spec)
    }

    pub fn t_frac(&self) -> f64 {
        self.a as f64 / self.c as f64
    }

    pub fn failure_bound(&self) -> Result<f64, CommitteeError> {
        failure_prob(self.f, self.t_frac(), self.c)
    }
}

/// Natural log of `e^{−fC}·(e·f/t)^{tC}`.
pub fn ln_failure_prob(f: f64, t_frac: f64, c: usize) -> Result<f64, CommitteeError> {
    if !(f > 0.0 && f <= t_frac && t_frac < 1.0) {
        return Err(CommitteeError::Domain { f, t_frac });
    }
    let c = c as f64;
    Ok(-f * c + t_frac * c * (1.0 + f.ln() - t_frac.ln()))
}

/// Upper bound on the probability that a committee of `c` uniformly drawn
/// devices holds more than `t_frac·c` malicious members.
pub fn failure_prob(f: f64, t_frac: f64, c: usize) -> Result<f64, CommitteeError> {
    Ok(ln_failure_prob(f, t_frac, c)?.exp())
}

const PLAN_LIMIT: usize = 1 << 24;

/// Smallest C whose bound is at most `p_target`.
pub fn plan_size(f: f64, t_frac: f64, p_target: f64) -> Result<usize, CommitteeError> {
    if !(p_target > 0.0 && p_target <= 1.0) {
        return Err(CommitteeError::Target(p_target));
    }
    if f >= t_frac {
        return Err(CommitteeError::Domain { f, t_frac });
    }
    let ln_target = p_target.ln();
    let ok = |c: usize| ln_failure_prob(f, t_frac, c).map(|l| l <= ln_target);
    // exponential probe then bisection; the bound decreases in C when f < t_frac
    let mut hi = 1usize;
    while !ok(hi)? {
        hi *= 2;
        if hi > PLAN_LIMIT {
            return Err(CommitteeError::Unreachable(PLAN_LIMIT));
        }
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Ok(1);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Union bound over several committees.
pub fn union_failure(specs: &[CommitteeSpec]) -> Result<f64, CommitteeError> {
    specs
        .iter()
        .map(CommitteeSpec::failure_bound)
        .sum::<Result<f64, _>>()
        .map(|p| p.min(1.0))
}

fn rank(beacon: &Digest32, salt: &[u8], id: &DeviceId) -> Digest32 {
    sha256_parts(&[beacon, salt, id])
}

/// The `c` devices with the smallest `H(beacon ‖ salt ‖ id)`, in rank order.
pub fn sortition(
    population: &[DeviceId],
    beacon: &Digest32,
    c: usize,
    salt: &[u8],
) -> Result<Vec<DeviceId>, CommitteeError> {
    if c > population.len() {
        return Err(CommitteeError::TooLarge {
            c,
            available: population.len(),
        });
    }
    let mut ranked: Vec<(Digest32, DeviceId)> =
        population.iter().map(|id| (rank(beacon, salt, id), *id)).collect();
    ranked.sort_unstable();
    Ok(ranked.into_iter().take(c).map(|(_, id)| id).collect())
}

/// Draws each committee in order from the devices not yet chosen, so the
/// committees of one round are pairwise disjoint.
pub fn select_disjoint(
    population: &[DeviceId],
    beacon: &Digest32,
    specs: &[CommitteeSpec],
) -> Result<Vec<Vec<DeviceId>>, CommitteeError> {
    let total: usize = specs.iter().map(|s| s.c).sum();
    if total > population.len() {
        return Err(CommitteeError::TooLarge {
            c: total,
            available: population.len(),
        });
    }
    let mut taken = BTreeSet::new();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let remaining: Vec<DeviceId> = population.iter().filter(|d| !taken.contains(*d)).copied().collect();
        let members = sortition(&remaining, beacon, spec.c, &spec.role.salt())?;
        taken.extend(members.iter().copied());
        out.push(members);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn pop(n: usize) -> Vec<DeviceId> {
        (0..n as u64)
            .map(|i| {
                let mut id = [0u8; 32];
                id[..8].copy_from_slice(&i.to_le_bytes());
                id
            })
            .collect()
    }

    #[test]
    fn published_bounds() {
        assert!(rel(failure_prob(0.03, 1.0 / 7.0, 280).unwrap(), 4.1e-14) < 0.1);
        assert!(rel(failure_prob(0.05, 1.0 / 8.0, 350).unwrap(), 9.78e-7) < 0.1);
        assert!(rel(failure_prob(0.10, 1.0 / 5.0, 350).unwrap(), 1.34e-6) < 0.1);
        assert!(failure_prob(0.2, 0.1, 10).is_err());
    }

    #[test]
    fn plan_size_definition() {
        assert!(plan_size(0.03, 1.0 / 7.0, 4.1e-14).unwrap() <= 280);
        assert_eq!(plan_size(0.03, 0.4, 1.0).unwrap(), 1);
        for &(f, t, p) in &[(0.03, 0.4, 1e-6), (0.05, 0.125, 1e-9), (0.1, 0.2, 1e-3)] {
            let c = plan_size(f, t, p).unwrap();
            assert!(failure_prob(f, t, c).unwrap() <= p);
            assert!(failure_prob(f, t, c - 1).unwrap() > p);
        }
        assert!(plan_size(0.2, 0.2, 0.5).is_err());
        assert!(plan_size(0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn sortition_determinism_and_salt() {
        let p = pop(10_000);
        let b = [7u8; 32];
        let a = sortition(&p, &b, 45, b"master").unwrap();
        assert_eq!(a, sortition(&p, &b, 45, b"master").unwrap());
        assert_ne!(a, sortition(&p, &b, 45, b"dp-noise").unwrap());
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 45);
        assert!(sortition(&p[..10], &b, 11, b"x").is_err());
    }

    #[test]
    fn disjoint_committees() {
        let p = pop(1000);
        let specs: Vec<CommitteeSpec> = [CommitteeRole::Master, CommitteeRole::DpNoise]
            .into_iter()
            .chain((0..10).map(CommitteeRole::Decryption))
            .map(|r| CommitteeSpec::new(r, 45, 18, 0.03).unwrap())
            .collect();
        let cs = select_disjoint(&p, &[1; 32], &specs).unwrap();
        let all: BTreeSet<_> = cs.iter().flatten().collect();
        assert_eq!(all.len(), 12 * 45);
        assert!(select_disjoint(&p[..500], &[1; 32], &specs).is_err());
        assert!(union_failure(&specs).unwrap() > specs[0].failure_bound().unwrap());
    }
}
