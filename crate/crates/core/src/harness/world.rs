use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Derived, WorldConfig};
use super::ledger::CostLedger;
use super::HarnessError;
use crate::ahe::{Ciphertext, PublicKey, SecretKey};
use crate::attest::{AttestAuthority, Attestation};
use crate::committee::DeviceId;
use crate::dpcore::{AccountantState, Dataset};
use crate::hash::{sha256_parts, Digest32};
use crate::sharing::{DlogGroup, ShareSet};
use crate::sig::Keypair;

#[derive(Clone, Debug)]
pub struct Device {
    pub id: DeviceId,
    pub key: Keypair,
    pub malicious: bool,
}

/// The master committee's view of the key after the last setup phase.
#[derive(Clone, Debug)]
pub struct KeyState {
    pub pk: PublicKey,
    pub master: Vec<DeviceId>,
    pub shares: ShareSet,
}

/// Simulated population and everything that persists across rounds.
pub struct World {
    pub cfg: WorldConfig,
    pub derived: Derived,
    pub group: DlogGroup,
    pub devices: Vec<Device>,
    pub ids: Vec<DeviceId>,
    index: BTreeMap<DeviceId, usize>,
    pub board: crate::board::Board,
    pub authority: AttestAuthority,
    pub aggregator: Keypair,
    pub beacon_key: Keypair,
    pub true_model: Vec<f64>,
    pub model: Vec<f64>,
    eval_data: Dataset,
    pub accountant: AccountantState,
    pub keys: Option<KeyState>,
    /// rounds completed or aborted so far
    pub round: u64,
    /// one published input of the previous round, per tree
    pub(crate) replay_stock: Option<Vec<(Ciphertext, Attestation)>>,
    pub ledger: CostLedger,
    /// kept only so tests can compare against central decryption
    pub(crate) secret: Option<SecretKey>,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, HarnessError> {
        let derived = cfg.derive()?;
        let group = DlogGroup::for_modulus(derived.params.ring().q())?;
        let seed = cfg.seed;
        let key = |label: &[u8], i: u64| Keypair::from_seed(&derive_seed(seed, &[label, &i.to_le_bytes()]));

        let w = cfg.population.w as usize;
        let mut devices: Vec<Device> = (0..w)
            .map(|i| {
                let k = key(b"device", i as u64);
                Device {
                    id: k.public(),
                    key: k,
                    malicious: false,
                }
            })
            .collect();
        let bad = (cfg.population.malicious_fraction * w as f64).floor() as usize;
        let mut order: Vec<usize> = (0..w).collect();
        order.shuffle(&mut rng_from(seed, &[b"malicious"]));
        for &i in &order[..bad] {
            devices[i].malicious = true;
        }
        let ids: Vec<DeviceId> = devices.iter().map(|d| d.id).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();

        let dim = cfg.model.dim;
        let n = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite std");
        let mut mrng = rng_from(seed, &[b"true-model"]);
        let true_model: Vec<f64> = (0..dim).map(|_| n.sample(&mut mrng)).collect();
        let eval_data = Dataset::synthetic(&true_model, 64, cfg.model.data_noise, &mut rng_from(seed, &[b"eval"]));
        let accountant = AccountantState::new(cfg.dp.delta_target)?;

        Ok(Self {
            authority: AttestAuthority::new(&derive_seed(seed, &[b"authority"])),
            aggregator: key(b"aggregator", 0),
            beacon_key: key(b"beacon", 0),
            derived,
            group,
            devices,
            ids,
            index,
            board: crate::board::Board::new(),
            model: vec![0.0; dim],
            true_model,
            eval_data,
            accountant,
            keys: None,
            round: 0,
            replay_stock: None,
            ledger: CostLedger::default(),
            secret: None,
            cfg,
        })
    }

    pub fn device_index(&self, id: &DeviceId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn device(&self, id: &DeviceId) -> &Device {
        &self.devices[self.index[id]]
    }

    pub fn is_malicious(&self, id: &DeviceId) -> bool {
        self.index.get(id).is_some_and(|&i| self.devices[i].malicious)
    }

    /// Deterministic stream for one purpose, e.g. `[b"verify", round, id]`.
    pub fn rng(&self, parts: &[&[u8]]) -> ChaCha20Rng {
        rng_from(self.cfg.seed, parts)
    }

    pub fn dataset(&self, id: &DeviceId) -> Dataset {
        Dataset::synthetic(
            &self.true_model,
            self.cfg.model.samples_per_device,
            self.cfg.model.data_noise,
            &mut self.rng(&[b"data", id]),
        )
    }

    pub fn eval_loss(&self) -> f64 {
        crate::dpcore::loss(&self.model, &self.eval_data).unwrap_or(f64::NAN)
    }

    pub fn secret_key(&self) -> Option<&SecretKey> {
        self.secret.as_ref()
    }
}

pub(crate) fn derive_seed(seed: u64, parts: &[&[u8]]) -> Digest32 {
    let s = seed.to_le_bytes();
    let mut all: Vec<&[u8]> = vec![b"dpagg", &s];
    all.extend_from_slice(parts);
    sha256_parts(&all)
}

pub(crate) fn rng_from(seed: u64, parts: &[&[u8]]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_seed(seed, parts))
}
