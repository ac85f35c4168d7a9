use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adversary::AdversaryScript;
use crate::aggproto::{trees_needed, LeafBounds};
use crate::ahe::{AheParams, DEFAULT_PLAIN_MODULUS, DEFAULT_SCALE};
use crate::committee::{union_failure, CommitteeRole, CommitteeSpec};
use crate::dpcore::{noise_share_std, DpConfig, NoisePlan};
use crate::ring::{RingParams, Q120, Q61};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("config field `{path}`: {msg}")]
    Field { path: String, msg: String },
}

fn field(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.to_string(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub rounds: u64,
    pub population: PopulationConfig,
    pub dp: DpSection,
    pub committees: CommitteeSection,
    pub ahe: AheSection,
    pub model: ModelSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub adversary: AdversaryScript,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub w: u64,
    /// upper bound on the population known to verifiers; defaults to `w`
    #[serde(default)]
    pub w_max: Option<u64>,
    pub malicious_fraction: f64,
    /// devices that skip the round entirely
    #[serde(default)]
    pub offline_fraction: f64,
    /// contributors that commit but never reveal
    #[serde(default)]
    pub reveal_dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    pub q: f64,
    pub z: f64,
    pub clip_s: f64,
    pub delta_target: f64,
    pub epsilon_budget: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitteeSize {
    pub c: usize,
    pub a: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCommitteeSize {
    pub c: usize,
    pub a: usize,
    #[serde(default)]
    pub b_off: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitteeSection {
    pub master: CommitteeSize,
    pub dp_noise: NoiseCommitteeSize,
    pub decryption: CommitteeSize,
    #[serde(default = "ten")]
    pub num_decryption_committees: usize,
    #[serde(default = "default_failure_target")]
    pub failure_target: f64,
    /// refuse to run when the union bound over all committees exceeds the target
    #[serde(default = "yes")]
    pub enforce_union_bound: bool,
}

fn ten() -> usize {
    10
}
fn default_failure_target() -> f64 {
    1e-6
}
fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulusChoice {
    Q120,
    Q61,
}

impl ModulusChoice {
    pub fn value(&self) -> u128 {
        match self {
            Self::Q120 => Q120,
            Self::Q61 => Q61,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AheSection {
    pub degree: usize,
    #[serde(default = "q120")]
    pub modulus: ModulusChoice,
    #[serde(default = "default_t")]
    pub plain_modulus: u64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_lambda")]
    pub smudge_lambda: u32,
}

fn q120() -> ModulusChoice {
    ModulusChoice::Q120
}
fn default_t() -> u64 {
    DEFAULT_PLAIN_MODULUS
}
fn default_scale() -> f64 {
    DEFAULT_SCALE
}
fn default_lambda() -> u32 {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    #[serde(default = "default_samples")]
    pub samples_per_device: usize,
    #[serde(default = "one_usize")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_data_noise")]
    pub data_noise: f64,
}

fn default_samples() -> usize {
    8
}
fn one_usize() -> usize {
    1
}
fn default_lr() -> f64 {
    0.05
}
fn default_data_noise() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// leaves per window, also the number of non-leaf checks
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default = "yes")]
    pub pit: bool,
    /// per-tree selection probability; `M'/W` when absent
    #[serde(default)]
    pub select_prob: Option<f64>,
    /// slack factor on `q·W_max` in `M_max`
    #[serde(default = "default_k_max")]
    pub k_max: f64,
}

fn default_s() -> usize {
    6
}
fn default_k_max() -> f64 {
    1.5
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            s: default_s(),
            pit: true,
            select_prob: None,
            k_max: default_k_max(),
        }
    }
}

/// Everything computed once from a validated config.
#[derive(Clone, Debug)]
pub struct Derived {
    pub params: AheParams,
    pub dp: DpConfig,
    pub noise_plan: NoisePlan,
    pub noise_std: f64,
    /// bound in the DP-noise members' statements
    pub noise_bound: f64,
    pub ell: usize,
    pub m_max: usize,
    pub w_max: u64,
    pub specs: Vec<CommitteeSpec>,
    pub union_failure: f64,
}

impl Derived {
    pub fn master_spec(&self) -> &CommitteeSpec {
        &self.specs[0]
    }
    pub fn noise_spec(&self) -> &CommitteeSpec {
        &self.specs[1]
    }
    pub fn decryption_specs(&self) -> &[CommitteeSpec] {
        &self.specs[2..]
    }
}

impl WorldConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(&path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Validates every section and derives the round parameters.
    pub fn derive(&self) -> Result<Derived, ConfigError> {
        let pop = &self.population;
        if pop.w == 0 {
            return Err(field("population.w", "must be positive"));
        }
        let w_max = pop.w_max.unwrap_or(pop.w);
        if w_max < pop.w {
            return Err(field("population.w_max", "must be at least w"));
        }
        for (name, v) in [
            ("population.malicious_fraction", pop.malicious_fraction),
            ("population.offline_fraction", pop.offline_fraction),
            ("population.reveal_dropout", pop.reveal_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(field(name, format!("{v} outside [0, 1)")));
            }
        }
        if self.rounds == 0 {
            return Err(field("rounds", "must be positive"));
        }

        let dp = DpConfig {
            q: self.dp.q,
            z: self.dp.z,
            clip_s: self.dp.clip_s,
            w: pop.w,
            delta_target: self.dp.delta_target,
            epsilon_budget: self.dp.epsilon_budget,
        };
        if let Err(e) = dp.validate() {
            let path = match () {
                _ if !(dp.q > 0.0 && dp.q <= 1.0) => "dp.q",
                _ if !(dp.z > 0.0) => "dp.z",
                _ if !(dp.clip_s > 0.0) => "dp.clip_s",
                _ if !(dp.epsilon_budget > 0.0) => "dp.epsilon_budget",
                _ => "dp.delta_target",
            };
            return Err(field(path, e.to_string()));
        }

        let cs = &self.committees;
        if cs.num_decryption_committees == 0 || cs.num_decryption_committees > 255 {
            return Err(field("committees.num_decryption_committees", "must be in 1..=255"));
        }
        if !(cs.failure_target > 0.0 && cs.failure_target <= 1.0) {
            return Err(field("committees.failure_target", "must be in (0, 1]"));
        }
        // the bound needs f > 0; an honest-only population is bounded by a tiny f
        let f = pop.malicious_fraction.max(1e-12);
        let mk = |path: &str, role, c, a| CommitteeSpec::new(role, c, a, f).map_err(|e| field(path, e.to_string()));
        let mut specs = vec![
            mk("committees.master", CommitteeRole::Master, cs.master.c, cs.master.a)?,
            mk("committees.dp_noise", CommitteeRole::DpNoise, cs.dp_noise.c, cs.dp_noise.a)?,
        ];
        for k in 0..cs.num_decryption_committees {
            specs.push(mk(
                "committees.decryption",
                CommitteeRole::Decryption(k as u8),
                cs.decryption.c,
                cs.decryption.a,
            )?);
        }
        let total: usize = specs.iter().map(|s| s.c).sum();
        if total as u64 > pop.w {
            return Err(field(
                "committees",
                format!("{total} committee seats exceed the population of {}", pop.w),
            ));
        }
        let union = union_failure(&specs).map_err(|e| field("committees", e.to_string()))?;
        if cs.enforce_union_bound && union > cs.failure_target {
            return Err(field(
                "committees",
                format!("union failure bound {union:.3e} exceeds target {:.3e}", cs.failure_target),
            ));
        }
        let noise_plan = NoisePlan::new(cs.dp_noise.c, cs.dp_noise.a, cs.dp_noise.b_off)
            .map_err(|e| field("committees.dp_noise.b_off", e.to_string()))?;

        let v = &self.verify;
        if v.s == 0 {
            return Err(field("verify.s", "must be positive"));
        }
        if let Some(p) = v.select_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(field("verify.select_prob", "must be in (0, 1]"));
            }
        }
        if !(v.k_max >= 1.0 && v.k_max.is_finite()) {
            return Err(field("verify.k_max", "must be at least 1"));
        }
        let m_max = LeafBounds::m_max(dp.q * v.k_max, w_max, cs.dp_noise.c);

        let a = &self.ahe;
        let ring = RingParams::new(a.degree, a.modulus.value()).map_err(|e| field("ahe.degree", e.to_string()))?;
        let params = AheParams::new(ring, a.plain_modulus, a.smudge_lambda, m_max as u64, a.scale)
            .map_err(|e| field("ahe", e.to_string()))?;
        for spec in &specs {
            params
                .smudging_for_committee(spec.c)
                .map_err(|e| field("ahe.smudge_lambda", e.to_string()))?;
        }

        if self.model.dim == 0 {
            return Err(field("model.dim", "must be positive"));
        }
        if self.model.samples_per_device == 0 {
            return Err(field("model.samples_per_device", "must be positive"));
        }
        if !(self.model.lr > 0.0) {
            return Err(field("model.lr", "must be positive"));
        }
        let ell = trees_needed(self.model.dim, params.slots());
        let noise_std = noise_share_std(&noise_plan, dp.sigma());
        let noise_bound = noise_std * ((self.model.dim as f64).sqrt() + 8.0);

        // every encoded entry must stay below t/(2K)
        let limit = params.plain_modulus() as f64 / (2.0 * m_max as f64) / params.scale();
        if dp.clip_s >= limit {
            return Err(field(
                "ahe.plain_modulus",
                format!("clip_s={} does not fit the per-entry limit {limit:.3}", dp.clip_s),
            ));
        }
        if 8.0 * noise_std >= limit {
            return Err(field(
                "ahe.plain_modulus",
                format!("noise std {noise_std:.3} leaves no 8-sigma room below {limit:.3}"),
            ));
        }

        Ok(Derived {
            params,
            dp,
            noise_plan,
            noise_std,
            noise_bound,
            ell,
            m_max,
            w_max,
            specs,
            union_failure: union,
        })
    }

    /// The bundled demo world: 2000 devices, 3% malicious, 45/18 committees.
    pub fn desk() -> Self {
        Self::from_json(DESK_CONFIG).expect("bundled config parses")
    }
}

pub const DESK_CONFIG: &str = include_str!("../../configs/desk.json");
