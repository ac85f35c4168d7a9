use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::adversary::{AdversaryScript, Behavior};
use super::ledger::{CostLedger, Role};
use super::verify::{verifier_fanout, DetectionReport, Detections};
use super::world::{KeyState, World};
use super::HarnessError;
use crate::aggproto::{
    check_own_leaf, commitment_digest, make_commitment, build_commit_tree, CommitTree, LeafRecord, Nonce,
    SummationTree, TreeAudit, VertexValue, Violation, ViolationKind, VerifyContext,
};
use crate::ahe::{
    combine_partials, ct_scalar_mul, encode, encrypt, keygen, partial_decrypt, Ciphertext, Plaintext, PublicKey,
};
use crate::attest::{self, Attestation, Statement};
use crate::board::{DpCertificate, EntryKind, QuorumRule};
use crate::committee::{select_disjoint, DeviceId};
use crate::dpcore::{is_sampled, l2_norm, local_update, sample_noise_share};
use crate::hash::{hex, sha256, sha256_parts, Digest32};
use crate::sharing::{beacon_commit, lagrange_coeff, reshare, share, RandBeaconSession, ShareSet, ELEMENT_BYTES};
use crate::sig::{PublicKeyBytes, SignatureBytes};

/// Committees as posted on the board.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rosters {
    pub master: Vec<DeviceId>,
    pub dp_noise: Vec<DeviceId>,
    pub decryption: Vec<Vec<DeviceId>>,
}

impl Rosters {
    fn from_vec(mut v: Vec<Vec<DeviceId>>) -> Self {
        let decryption = v.split_off(2);
        let dp_noise = v.pop().unwrap();
        let master = v.pop().unwrap();
        Self {
            master,
            dp_noise,
            decryption,
        }
    }

    fn all(&self) -> Vec<&Vec<DeviceId>> {
        let mut v = vec![&self.master, &self.dp_noise];
        v.extend(self.decryption.iter());
        v
    }

    fn payload(&self) -> Vec<u8> {
        let names = |m: &Vec<DeviceId>| m.iter().map(|d| hex(d)).collect::<Vec<_>>();
        let mut map = BTreeMap::new();
        map.insert("master".to_string(), names(&self.master));
        map.insert("dp_noise".to_string(), names(&self.dp_noise));
        for (k, d) in self.decryption.iter().enumerate() {
            map.insert(format!("decryption_{k:03}"), names(d));
        }
        serde_json::to_vec(&map).expect("roster serializes")
    }

    pub fn seats(&self) -> usize {
        self.all().iter().map(|m| m.len()).sum()
    }
}

/// One device's encrypted input for every tree.
#[derive(Clone, Debug)]
pub struct Contribution {
    pub device: DeviceId,
    pub noise: bool,
    pub malicious: bool,
    /// the real-valued vector before encoding
    pub values: Vec<f64>,
    pub pts: Vec<Plaintext>,
    pub cts: Vec<Ciphertext>,
    pub atts: Vec<Attestation>,
    pub nonces: Vec<Nonce>,
    pub commits: Vec<Digest32>,
    pub reveals: bool,
    /// taken in by a colluding aggregator without being sampled
    pub forced: bool,
}

impl Contribution {
    pub fn record(&self, j: usize) -> LeafRecord {
        LeafRecord::Present {
            pk: self.device,
            ct: self.cts[j].clone(),
            nonce: self.nonces[j],
            att: self.atts[j].clone(),
        }
    }
}

/// Commit entries and accepted leaves of one tree, before the tree is built.
#[derive(Clone, Debug)]
pub struct TreeInputs {
    pub entries: Vec<(DeviceId, Digest32)>,
    pub leaves: Vec<LeafRecord>,
}

/// State after setup and generation; the input of the add phase.
pub struct Prepared {
    pub t: u64,
    pub beacon: Digest32,
    pub rosters: Rosters,
    pub pk: PublicKey,
    pub ctx: VerifyContext,
    pub contributions: Vec<Contribution>,
    pub inputs: Vec<TreeInputs>,
    pub sampled: usize,
    pub detections: Detections,
    pub ledger: CostLedger,
}

impl Prepared {
    pub fn colluders(&self) -> Vec<usize> {
        (0..self.contributions.len())
            .filter(|&i| self.contributions[i].malicious && !self.contributions[i].noise)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// decrypted plaintext equals the sum of the included encodings mod t
    pub exact_match: bool,
    /// largest per-entry gap to the real-valued sum of included inputs
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub l2_norm: f64,
    pub round_slot_ok: bool,
    pub head: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub budget: f64,
    pub rounds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardReport {
    pub entries: usize,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_t: u64,
    pub aborted: Option<String>,
    pub beacon: String,
    pub committee_sizes: BTreeMap<String, usize>,
    pub union_failure_bound: f64,
    pub sampled: usize,
    pub noise_members: usize,
    pub contributors: usize,
    pub bottom_leaves: usize,
    pub trees: usize,
    pub leaf_counts: Vec<usize>,
    pub m_max: usize,
    pub pit: bool,
    pub pit_point: Option<String>,
    pub ms_roots: Vec<String>,
    pub adversary: Vec<String>,
    pub expected_violations: Vec<String>,
    pub detections: Vec<DetectionReport>,
    /// active behaviors whose expected violation nobody reported
    pub undetected: Vec<String>,
    pub aggregate: Option<AggregateReport>,
    pub privacy: PrivacyReport,
    pub model_loss: f64,
    pub ledger: CostLedger,
    pub board: BoardReport,
}

impl RoundReport {
    pub fn detected_kinds(&self) -> BTreeSet<String> {
        self.detections.iter().map(|d| d.kind.clone()).collect()
    }
}

enum Setup {
    Ready(Prepared),
    Aborted(Box<RoundReport>),
}

fn quorum_sigs(world: &World, members: &[DeviceId], a: usize, msg: &[u8]) -> Vec<(PublicKeyBytes, SignatureBytes)> {
    members[..a + 1]
        .iter()
        .map(|id| (*id, world.device(id).key.sign(msg)))
        .collect()
}

fn post(
    world: &mut World,
    t: u64,
    kind: EntryKind,
    payload: Vec<u8>,
    signers: Signers<'_>,
) -> Result<(), HarnessError> {
    let msg = crate::board::signing_message(t, kind, &payload);
    let sigs = match signers {
        Signers::Aggregator => vec![(world.aggregator.public(), world.aggregator.sign(&msg))],
        Signers::Beacon => vec![(world.beacon_key.public(), world.beacon_key.sign(&msg))],
        Signers::Committee(members, a) => quorum_sigs(world, members, a, &msg),
    };
    world.board.append(t, kind, payload, sigs)?;
    Ok(())
}

enum Signers<'a> {
    Aggregator,
    Beacon,
    Committee(&'a [DeviceId], usize),
}

fn share_traffic(ledger: &mut CostLedger, from: Role, to: Role, dealers: usize, set: &ShareSet) {
    let n = set.secret_len();
    let commitments = set.commitment_bytes();
    // each dealer sends one subshare vector per member and broadcasts its commitments
    ledger.up(from, dealers * (set.count * n * ELEMENT_BYTES + commitments));
    ledger.down(to, set.count * dealers * (n * ELEMENT_BYTES + commitments));
    ledger.role(from).exp += (dealers * n * (set.threshold + 1)) as u64;
    ledger.role(to).exp += (set.count * n * (set.threshold + 2)) as u64;
}

/// Beacon, committees, privacy certificate and key material for round `world.round + 1`.
fn setup(world: &mut World, active: &[Behavior]) -> Result<Setup, HarnessError> {
    let t = world.round + 1;
    let tb = t.to_le_bytes();
    let mut ledger = CostLedger::default();
    let mut detections = Detections::default();
    let params = world.derived.params.clone();
    let seed = world.cfg.seed.to_le_bytes();

    let beacon = sha256_parts(&[b"beacon", &seed, &tb, &world.board.digest()]);
    world.board.set_rule(EntryKind::Beacon, QuorumRule::single(world.beacon_key.public()));
    for kind in [
        EntryKind::CommitteeRoster,
        EntryKind::CommitRoot,
        EntryKind::MsRoot,
        EntryKind::RootCiphertext,
    ] {
        world.board.set_rule(kind, QuorumRule::single(world.aggregator.public()));
    }
    post(world, t, EntryKind::Beacon, beacon.to_vec(), Signers::Beacon)?;

    let honest = Rosters::from_vec(select_disjoint(&world.ids, &beacon, &world.derived.specs)?);
    let mut rosters = honest.clone();
    if active.contains(&Behavior::BiasedCommitteePick) {
        let seated: BTreeSet<DeviceId> = honest.all().iter().flat_map(|m| m.iter().copied()).collect();
        let mut rng = world.rng(&[b"biased-roster", &tb]);
        let mut pool: Vec<DeviceId> = world
            .devices
            .iter()
            .filter(|d| d.malicious && !seated.contains(&d.id))
            .map(|d| d.id)
            .collect();
        if pool.is_empty() {
            pool = world.ids.iter().filter(|d| !seated.contains(*d)).copied().collect();
        }
        let k = rng.gen_range(0..rosters.decryption.len());
        let seat = rng.gen_range(0..rosters.decryption[k].len());
        rosters.decryption[k][seat] = *pool.choose(&mut rng).ok_or_else(|| {
            HarnessError::Protocol("no device left to bias the roster with".into())
        })?;
    }
    post(world, t, EntryKind::CommitteeRoster, rosters.payload(), Signers::Aggregator)?;
    // every honest device recomputes sortition from the beacon
    for (k, (posted, want)) in rosters.all().iter().zip(honest.all()).enumerate() {
        if *posted != want {
            let honest_ids: Vec<&DeviceId> = world.devices.iter().filter(|d| !d.malicious).map(|d| &d.id).collect();
            if let Some(first) = honest_ids.first() {
                detections.record_many(
                    Violation {
                        kind: ViolationKind::RosterMismatch,
                        tree: 0,
                        level: 0,
                        index: k,
                    },
                    honest_ids.len() as u64,
                    first,
                );
            }
        }
    }

    let master_a = world.cfg.committees.master.a;
    let master = rosters.master.clone();
    world
        .board
        .set_rule(EntryKind::DpCertificate, QuorumRule::committee(&master, master_a));
    world
        .board
        .set_rule(EntryKind::KeyCertificate, QuorumRule::committee(&master, master_a));
    world.board.set_rule(EntryKind::PitPoint, QuorumRule::committee(&master, master_a));

    let dp = world.derived.dp.clone();
    let eps = world.accountant.preview(dp.q, dp.z)?;
    if eps > dp.epsilon_budget {
        let reason = format!("privacy budget exhausted: epsilon would reach {eps:.4} > {}", dp.epsilon_budget);
        return Ok(Setup::Aborted(Box::new(abort_report(world, t, &beacon, reason, ledger))));
    }
    let theta: Vec<u8> = world.model.iter().flat_map(|x| x.to_le_bytes()).collect();
    let cert = DpCertificate {
        theta_digest: hex(&sha256(&theta)),
        q: dp.q,
        z: dp.z,
        clip_s: dp.clip_s,
        epsilon: eps,
        delta: dp.delta_target,
    };
    post(world, t, EntryKind::DpCertificate, cert.payload(), Signers::Committee(&master, master_a))?;
    ledger.up(Role::Master, 64 * (master_a + 1));

    let mut rng = world.rng(&[b"keys", &tb]);
    let (c_m, a_m) = (world.cfg.committees.master.c, master_a);
    let keys = match world.keys.take() {
        None => {
            let (pk, sk) = keygen(&params, &mut rng);
            let shares = share(sk.s.coeffs(), c_m, a_m, &world.group, &mut rng)?;
            share_traffic(&mut ledger, Role::Master, Role::Master, 1, &shares);
            ledger.role(Role::Master).ring_mul += 1;
            world.secret = Some(sk);
            KeyState { pk, master, shares }
        }
        Some(old) => {
            let quorum: Vec<u32> = (1..=old.shares.threshold as u32 + 1).collect();
            let shares = reshare(&old.shares, &quorum, c_m, a_m, &world.group, &mut rng)?;
            share_traffic(&mut ledger, Role::Master, Role::Master, quorum.len(), &shares);
            KeyState {
                pk: old.pk,
                master,
                shares,
            }
        }
    };
    let feldman: Vec<u8> = keys
        .shares
        .feldman
        .iter()
        .flat_map(|c| c.iter().flat_map(|x| x.to_le_bytes()))
        .collect();
    let payload = [keys.pk.digest(&params).as_slice(), &params.digest(), &sha256(&feldman)].concat();
    post(world, t, EntryKind::KeyCertificate, payload, Signers::Committee(&keys.master, master_a))?;
    let pk = keys.pk.clone();
    world.keys = Some(keys);

    let noise_members: BTreeSet<DeviceId> = rosters.dp_noise.iter().copied().collect();
    let ctx = VerifyContext {
        round_t: t,
        update_stmt: Statement::new(t, &pk, dp.clip_s, &params),
        noise_stmt: Statement::new(t, &pk, world.derived.noise_bound, &params),
        noise_members,
        authority: world.authority.public(),
        m_max: world.derived.m_max,
    };
    Ok(Setup::Ready(Prepared {
        t,
        beacon,
        rosters,
        pk,
        ctx,
        contributions: Vec::new(),
        inputs: Vec::new(),
        sampled: 0,
        detections,
        ledger,
    }))
}

fn encrypt_contribution(
    world: &World,
    prep: &Prepared,
    device: DeviceId,
    noise: bool,
    values: Vec<f64>,
    rng: &mut ChaCha20Rng,
) -> Result<Contribution, HarnessError> {
    let params = &world.derived.params;
    let slots = params.slots();
    let stmt = if noise { &prep.ctx.noise_stmt } else { &prep.ctx.update_stmt };
    let ell = world.derived.ell;
    let mut c = Contribution {
        device,
        noise,
        malicious: world.is_malicious(&device),
        values,
        pts: Vec::with_capacity(ell),
        cts: Vec::with_capacity(ell),
        atts: Vec::with_capacity(ell),
        nonces: Vec::with_capacity(ell),
        commits: Vec::with_capacity(ell),
        reveals: true,
        forced: false,
    };
    for j in 0..ell {
        let lo = (j * slots).min(c.values.len());
        let hi = ((j + 1) * slots).min(c.values.len());
        let pt = encode(prep.t, &c.values[lo..hi], params)?;
        let (ct, rnd) = encrypt(&prep.pk, &pt, params, rng)?;
        let att = world.authority.prove(stmt, &ct, &pt, &rnd, &prep.pk, params);
        let (nonce, d) = make_commitment(&device, &ct, params, rng);
        c.pts.push(pt);
        c.cts.push(ct);
        c.atts.push(att);
        c.nonces.push(nonce);
        c.commits.push(d);
    }
    Ok(c)
}

fn needs_colluder(active: &[Behavior]) -> bool {
    active.iter().any(|b| {
        matches!(
            b,
            Behavior::ModifyLeafCt | Behavior::DuplicateInput | Behavior::ScalarMultiplyLeaf | Behavior::ReplayPrevRound
        )
    })
}

/// Sampling, local training, noise shares, encryption, attestation and the
/// aggregator's check of each revealed input.
fn generate(world: &World, prep: &mut Prepared, force_colluder: bool) -> Result<(), HarnessError> {
    let tb = prep.t.to_le_bytes();
    let params = &world.derived.params;
    let ell = world.derived.ell;
    let cfg = &world.cfg;
    let q = world.derived.dp.q;
    let mut contributions = Vec::new();

    for dev in &world.devices {
        if prep.ctx.noise_members.contains(&dev.id) {
            continue;
        }
        let mut rng = world.rng(&[b"device-round", &tb, &dev.id]);
        if cfg.population.offline_fraction > 0.0 && rng.gen_bool(cfg.population.offline_fraction) {
            continue;
        }
        if !is_sampled(&dev.id, &prep.beacon, q) {
            continue;
        }
        let update = local_update(
            &world.model,
            &world.dataset(&dev.id),
            cfg.model.epochs,
            cfg.model.lr,
            world.derived.dp.clip_s,
        )?;
        contributions.push(encrypt_contribution(world, prep, dev.id, false, update, &mut rng)?);
    }
    prep.sampled = contributions.len();

    if force_colluder && !contributions.iter().any(|c| c.malicious) {
        let seated: BTreeSet<DeviceId> = prep.rosters.all().iter().flat_map(|m| m.iter().copied()).collect();
        let taken: BTreeSet<DeviceId> = contributions.iter().map(|c| c.device).collect();
        if let Some(dev) = world
            .devices
            .iter()
            .find(|d| d.malicious && !seated.contains(&d.id) && !taken.contains(&d.id))
        {
            let mut rng = world.rng(&[b"device-round", &tb, &dev.id]);
            let update = local_update(
                &world.model,
                &world.dataset(&dev.id),
                cfg.model.epochs,
                cfg.model.lr,
                world.derived.dp.clip_s,
            )?;
            let mut c = encrypt_contribution(world, prep, dev.id, false, update, &mut rng)?;
            c.forced = true;
            contributions.push(c);
        }
    }

    for id in prep.rosters.dp_noise.clone() {
        let mut rng = world.rng(&[b"noise-share", &tb, &id]);
        let values = if world.is_malicious(&id) {
            vec![0.0; cfg.model.dim]
        } else {
            sample_noise_share(world.derived.noise_std, cfg.model.dim, &mut rng)
        };
        contributions.push(encrypt_contribution(world, prep, id, true, values, &mut rng)?);
    }

    let dropout = cfg.population.reveal_dropout;
    if dropout > 0.0 {
        for c in &mut contributions {
            let mut rng = world.rng(&[b"reveal", &tb, &c.device]);
            c.reveals = !rng.gen_bool(dropout);
        }
    }

    let ct_bytes = Ciphertext::serialized_len(params);
    for c in &contributions {
        let role = if c.noise { Role::DpNoise } else { Role::Generator };
        let r = prep.ledger.role(role);
        r.ring_mul += 2 * ell as u64;
        r.hash += ell as u64;
        r.bytes_up += (32 + 32 * ell) as u64;
        if c.reveals {
            r.bytes_up += (ell * (ct_bytes + 16 + attest::ATTESTATION_BYTES)) as u64;
        }
    }

    // the aggregator keeps a revealed input only if its attestation and commitment check out
    let mut inputs: Vec<TreeInputs> = (0..ell)
        .map(|_| TreeInputs {
            entries: Vec::with_capacity(contributions.len()),
            leaves: Vec::with_capacity(contributions.len()),
        })
        .collect();
    for c in &contributions {
        let stmt = prep.ctx.statement_for(&c.device);
        for (j, inp) in inputs.iter_mut().enumerate() {
            inp.entries.push((c.device, c.commits[j]));
            let ok = c.reveals
                && attest::verify(stmt, &c.cts[j], &c.atts[j], &prep.ctx.authority, params)
                && commitment_digest(&c.nonces[j], &c.cts[j], &c.device, params) == c.commits[j];
            if c.reveals {
                let a = prep.ledger.role(Role::Aggregator);
                a.verify += 1;
                a.hash += 2;
            }
            inp.leaves.push(if ok { c.record(j) } else { LeafRecord::Bottom { pk: c.device } });
        }
    }
    prep.contributions = contributions;
    prep.inputs = inputs;
    Ok(())
}

fn tweak(ct: &Ciphertext, world: &World) -> Result<Ciphertext, HarnessError> {
    let ring = world.derived.params.ring();
    let mut c = ct.c2.coeffs().to_vec();
    c[1] = ring.modulus().add(c[1], 1);
    let mut out = ct.clone();
    out.c2 = ring.poly(c)?;
    Ok(out)
}

fn replace_leaf(leaves: &mut [LeafRecord], rec: LeafRecord) {
    if let Some(slot) = leaves.iter_mut().find(|l| l.pk() == rec.pk()) {
        *slot = rec;
    }
}

fn replace_entry(entries: &mut [(DeviceId, Digest32)], pk: &DeviceId, d: Digest32) {
    if let Some(e) = entries.iter_mut().find(|e| e.0 == *pk) {
        e.1 = d;
    }
}

/// Applies an input-level deviation to tree `j`; returns false when the
/// behavior does not act on inputs.
pub fn tamper_inputs(
    world: &World,
    prep: &Prepared,
    b: Behavior,
    j: usize,
    inp: &mut TreeInputs,
    rng: &mut dyn RngCore,
) -> Result<bool, HarnessError> {
    let params = &world.derived.params;
    let mut colluder = || -> Result<&Contribution, HarnessError> {
        let pool = prep.colluders();
        let i = *pool
            .choose(rng_ref(rng))
            .ok_or_else(|| HarnessError::Protocol(format!("{b} needs a colluding contributor")))?;
        Ok(&prep.contributions[i])
    };
    match b {
        Behavior::ScalarMultiplyLeaf => {
            let c = colluder()?;
            let ct = ct_scalar_mul(&c.cts[j], 3, params);
            replace_entry(&mut inp.entries, &c.device, commitment_digest(&c.nonces[j], &ct, &c.device, params));
            replace_leaf(
                &mut inp.leaves,
                LeafRecord::Present {
                    pk: c.device,
                    ct,
                    nonce: c.nonces[j],
                    att: c.atts[j].clone(),
                },
            );
        }
        Behavior::ReplayPrevRound => {
            let c = colluder()?;
            let stock = world
                .replay_stock
                .as_ref()
                .ok_or_else(|| HarnessError::Protocol("no previous round to replay".into()))?;
            let (ct, att) = stock[j].clone();
            replace_entry(&mut inp.entries, &c.device, commitment_digest(&c.nonces[j], &ct, &c.device, params));
            replace_leaf(
                &mut inp.leaves,
                LeafRecord::Present {
                    pk: c.device,
                    ct,
                    nonce: c.nonces[j],
                    att,
                },
            );
        }
        Behavior::ModifyLeafCt => {
            let c = colluder()?;
            let rec = LeafRecord::Present {
                pk: c.device,
                ct: tweak(&c.cts[j], world)?,
                nonce: c.nonces[j],
                att: c.atts[j].clone(),
            };
            replace_leaf(&mut inp.leaves, rec);
        }
        Behavior::DuplicateInput => {
            let c = colluder()?.device;
            let honest: Vec<&Contribution> = prep
                .contributions
                .iter()
                .filter(|h| !h.malicious && !h.noise && h.reveals)
                .collect();
            let h = *honest
                .choose(rng_ref(rng))
                .ok_or_else(|| HarnessError::Protocol("no honest input to duplicate".into()))?;
            replace_leaf(
                &mut inp.leaves,
                LeafRecord::Present {
                    pk: c,
                    ct: h.cts[j].clone(),
                    nonce: h.nonces[j],
                    att: h.atts[j].clone(),
                },
            );
        }
        Behavior::OmitNoiseLeaf => {
            let pool: Vec<DeviceId> = prep
                .contributions
                .iter()
                .filter(|c| c.noise && !c.malicious && c.reveals)
                .map(|c| c.device)
                .collect();
            let pk = *pool
                .choose(rng_ref(rng))
                .ok_or_else(|| HarnessError::Protocol("no honest noise leaf to omit".into()))?;
            replace_leaf(&mut inp.leaves, LeafRecord::Bottom { pk });
        }
        Behavior::SybilInflate => {
            let mut k = 0u64;
            while inp.leaves.len() <= prep.ctx.m_max {
                let pk = sha256_parts(&[b"sybil", &prep.t.to_le_bytes(), &k.to_le_bytes()]);
                inp.leaves.push(LeafRecord::Bottom { pk });
                k += 1;
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn rng_ref(rng: &mut dyn RngCore) -> &mut dyn RngCore {
    rng
}

/// Applies a vertex-level deviation after tree construction.
pub fn tamper_tree(world: &World, b: Behavior, tree: &mut SummationTree, rng: &mut dyn RngCore) -> Result<bool, HarnessError> {
    let params = &world.derived.params;
    match b {
        Behavior::CorruptNonleafEval => {
            let root = tree.root_vertex();
            let candidates: Vec<(usize, usize)> = (1..=tree.nonleaf.len())
                .flat_map(|l| (0..tree.nonleaf[l - 1].len()).map(move |i| (l, i)))
                .filter(|&v| Some(v) != root)
                .collect();
            let &(l, i) = candidates
                .choose(rng_ref(rng))
                .or(root.as_ref())
                .ok_or_else(|| HarnessError::Protocol("tree has no non-leaf vertex".into()))?;
            let m = params.ring().modulus();
            let v = &mut tree.nonleaf[l - 1][i];
            *v = match v {
                VertexValue::Eval(a, b) => VertexValue::Eval(m.add(*a, 1), *b),
                VertexValue::Full(ct) => VertexValue::Full(tweak(ct, world)?),
            };
            tree.seal(params);
        }
        Behavior::CorruptRoot => {
            tree.root = tweak(&tree.root, world)?;
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// PIT point drawn by the master committee after the commitment roots are posted.
fn draw_pit_point(world: &mut World, prep: &mut Prepared) -> Result<Option<u128>, HarnessError> {
    if !world.cfg.verify.pit {
        return Ok(None);
    }
    let t = prep.t;
    let field = world.derived.params.ring().modulus().clone();
    let members = prep.rosters.master.clone();
    let mut session = RandBeaconSession::new(members.len());
    let mut reveals = Vec::with_capacity(members.len());
    for (k, id) in members.iter().enumerate() {
        let mut rng = world.rng(&[b"pit", &t.to_le_bytes(), id]);
        let v = rng.gen_range(0..field.value());
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        session.commit(k, beacon_commit(v, &nonce))?;
        reveals.push((v, nonce));
    }
    for (k, (v, nonce)) in reveals.into_iter().enumerate() {
        session.reveal(k, v, nonce)?;
    }
    let out = session.finalize(&field)?;
    let m = prep.ledger.role(Role::Master);
    m.bytes_up += (members.len() * (32 + 16 + 32)) as u64;
    m.bytes_down += (members.len() * members.len() * (32 + 16 + 32)) as u64;
    m.hash += (members.len() * (members.len() + 1)) as u64;
    let a = world.cfg.committees.master.a;
    post(world, t, EntryKind::PitPoint, out.value.to_le_bytes().to_vec(), Signers::Committee(&members, a))?;
    Ok(Some(out.value))
}

/// Honest aggregators refuse to exceed `M_max`; only a Sybil script builds such a tree.
pub fn build_tree(
    world: &World,
    j: usize,
    leaves: Vec<LeafRecord>,
    pit: Option<u128>,
    t: u64,
    allow_overflow: bool,
) -> Result<Result<SummationTree, String>, HarnessError> {
    let m_max = world.derived.m_max;
    if leaves.len() > m_max && !allow_overflow {
        return Ok(Err(format!("tree {j} would hold {} leaves, above M_max = {m_max}", leaves.len())));
    }
    Ok(Ok(SummationTree::build(j, leaves, pit, t, &world.derived.params)?))
}

fn owner_checks(world: &World, prep: &Prepared, forest: &[SummationTree], ledger: &mut CostLedger, det: &mut Detections) {
    let params = &world.derived.params;
    for c in prep.contributions.iter().filter(|c| !c.malicious && c.reveals) {
        let role = if c.noise { Role::DpNoise } else { Role::Generator };
        for (j, tree) in forest.iter().enumerate() {
            ledger.down(role, 8 + 32 * crate::merkle::depth(tree.vertex_count()));
            if let Err(v) = check_own_leaf(tree, &c.record(j), params) {
                det.record(v, &c.device);
            }
        }
    }
}

/// Sum of the encodings of every present leaf that an honest input produced,
/// plus the real-valued sum of the same inputs.
fn oracle(world: &World, prep: &Prepared, forest: &[SummationTree]) -> (Vec<Vec<u64>>, Vec<f64>, usize) {
    let t_plain = world.derived.params.plain_modulus();
    let n = world.derived.params.ring().degree();
    let by_id: BTreeMap<DeviceId, &Contribution> = prep.contributions.iter().map(|c| (c.device, c)).collect();
    let mut exact = vec![vec![0u64; n]; forest.len()];
    let mut real = vec![0.0; world.cfg.model.dim];
    let mut max_k = 0;
    for (j, tree) in forest.iter().enumerate() {
        let mut k = 0;
        for leaf in &tree.leaves {
            let LeafRecord::Present { pk, .. } = leaf else { continue };
            let Some(c) = by_id.get(pk) else { continue };
            k += 1;
            for (acc, v) in exact[j].iter_mut().zip(c.pts[j].coeffs()) {
                *acc = (*acc + v) % t_plain;
            }
        }
        max_k = max_k.max(k);
    }
    // the real-valued sum uses inputs present in tree 0, the common case of
    // every contributor having all trees
    if let Some(tree) = forest.first() {
        for leaf in &tree.leaves {
            if let LeafRecord::Present { pk, .. } = leaf {
                if let Some(c) = by_id.get(pk) {
                    for (a, v) in real.iter_mut().zip(&c.values) {
                        *a += v;
                    }
                }
            }
        }
    }
    (exact, real, max_k)
}

/// Threshold decryption of each root by its decryption committee.
fn release(
    world: &mut World,
    prep: &mut Prepared,
    roots: &[Ciphertext],
) -> Result<Vec<Plaintext>, HarnessError> {
    let params = world.derived.params.clone();
    let ring = params.ring().clone();
    let n_dec = world.cfg.committees.num_decryption_committees;
    let (c_d, a_d) = (world.cfg.committees.decryption.c, world.cfg.committees.decryption.a);
    let bound = params.smudging_for_committee(c_d)?;
    let keys = world.keys.as_ref().expect("keys exist after setup");
    let tb = prep.t.to_le_bytes();
    let mut committee_shares: BTreeMap<usize, ShareSet> = BTreeMap::new();
    let mut out = Vec::with_capacity(roots.len());
    for (j, root) in roots.iter().enumerate() {
        let k = j % n_dec;
        if !committee_shares.contains_key(&k) {
            let mut rng = world.rng(&[b"dec-share", &tb, &(k as u64).to_le_bytes()]);
            let quorum: Vec<u32> = (1..=keys.shares.threshold as u32 + 1).collect();
            let set = reshare(&keys.shares, &quorum, c_d, a_d, &world.group, &mut rng)?;
            share_traffic(&mut prep.ledger, Role::Master, Role::Decryption, quorum.len(), &set);
            committee_shares.insert(k, set);
        }
        let set = &committee_shares[&k];
        let quorum: Vec<u32> = (1..=a_d as u32 + 1).collect();
        let mut partials = Vec::with_capacity(quorum.len());
        for &i in &quorum {
            let member = prep.rosters.decryption[k][i as usize - 1];
            let mut rng = world.rng(&[b"partial", &tb, &(j as u64).to_le_bytes(), &member]);
            let lambda = lagrange_coeff(&quorum, i, ring.modulus())?;
            let s_i = ring.poly(set.member_shares(i)?.to_vec())?;
            partials.push(partial_decrypt(&s_i, lambda, &root.c1, bound, &params, &mut rng)?);
            let d = prep.ledger.role(Role::Decryption);
            d.ring_mul += 1;
            d.bytes_down += Ciphertext::serialized_len(&params) as u64;
            d.bytes_up += ring.serialized_len() as u64;
        }
        out.push(combine_partials(&root.c2, &partials, quorum.len(), &params)?);
    }
    Ok(out)
}

fn abort_report(world: &mut World, t: u64, beacon: &Digest32, reason: String, ledger: CostLedger) -> RoundReport {
    world.round = t;
    world.ledger.merge(&ledger);
    RoundReport {
        round_t: t,
        aborted: Some(reason),
        beacon: hex(beacon),
        committee_sizes: BTreeMap::new(),
        union_failure_bound: world.derived.union_failure,
        sampled: 0,
        noise_members: 0,
        contributors: 0,
        bottom_leaves: 0,
        trees: world.derived.ell,
        leaf_counts: Vec::new(),
        m_max: world.derived.m_max,
        pit: world.cfg.verify.pit,
        pit_point: None,
        ms_roots: Vec::new(),
        adversary: Vec::new(),
        expected_violations: Vec::new(),
        detections: Vec::new(),
        undetected: Vec::new(),
        aggregate: None,
        privacy: privacy_report(world),
        model_loss: world.eval_loss(),
        ledger,
        board: BoardReport {
            entries: world.board.len(),
            digest: hex(&world.board.digest()),
        },
    }
}

fn privacy_report(world: &World) -> PrivacyReport {
    PrivacyReport {
        epsilon: world.accountant.epsilon,
        delta: world.accountant.delta,
        budget: world.derived.dp.epsilon_budget,
        rounds: world.accountant.rounds_done(),
    }
}

/// Setup and generation for the next round, without the add phase.
pub fn prepare_round(world: &mut World, active: &[Behavior], force_colluder: bool) -> Result<Option<Prepared>, HarnessError> {
    match setup(world, active)? {
        Setup::Aborted(_) => Ok(None),
        Setup::Ready(mut prep) => {
            generate(world, &mut prep, force_colluder || needs_colluder(active))?;
            Ok(Some(prep))
        }
    }
}

/// Posts the commitment roots and draws the PIT point.
pub fn commit_phase(world: &mut World, prep: &mut Prepared, commits: &[CommitTree]) -> Result<Option<u128>, HarnessError> {
    for (j, mc) in commits.iter().enumerate() {
        let payload = [(j as u64).to_le_bytes().as_slice(), &mc.root()].concat();
        post(world, prep.t, EntryKind::CommitRoot, payload, Signers::Aggregator)?;
    }
    draw_pit_point(world, prep)
}

/// Runs one full round: setup, generate, add (commit, build, verify) and release.
pub fn run_round(world: &mut World, script: &AdversaryScript) -> Result<RoundReport, HarnessError> {
    let t = world.round + 1;
    let tb = t.to_le_bytes();
    let active = script.active_behaviors(t);
    let mut prep = match setup(world, &active)? {
        Setup::Aborted(r) => return Ok(*r),
        Setup::Ready(p) => p,
    };
    generate(world, &mut prep, needs_colluder(&active))?;
    let params = world.derived.params.clone();
    let ell = world.derived.ell;

    let mut adv_rng = world.rng(&[b"adversary", &tb]);
    let mut inputs = std::mem::take(&mut prep.inputs);
    for &b in &active {
        let j = adv_rng.gen_range(0..ell);
        tamper_inputs(world, &prep, b, j, &mut inputs[j], &mut adv_rng)?;
    }
    let commits: Vec<CommitTree> = inputs
        .iter()
        .map(|inp| build_commit_tree(&inp.entries))
        .collect::<Result<_, _>>()?;
    prep.ledger.role(Role::Aggregator).hash += inputs.iter().map(|i| 2 * i.entries.len() as u64).sum::<u64>();
    let pit = commit_phase(world, &mut prep, &commits)?;

    let allow_overflow = active.contains(&Behavior::SybilInflate);
    let mut forest = Vec::with_capacity(ell);
    for (j, inp) in inputs.into_iter().enumerate() {
        match build_tree(world, j, inp.leaves, pit, t, allow_overflow)? {
            Ok(tree) => forest.push(tree),
            Err(reason) => {
                let beacon = prep.beacon;
                return Ok(abort_report(world, t, &beacon, reason, prep.ledger));
            }
        }
    }
    for &b in &active {
        let j = adv_rng.gen_range(0..ell);
        tamper_tree(world, b, &mut forest[j], &mut adv_rng)?;
    }
    {
        let a = prep.ledger.role(Role::Aggregator);
        for tree in &forest {
            a.hash += 2 * tree.vertex_count() as u64;
            if pit.is_some() {
                a.ring_mul += tree.leaf_count() as u64;
            }
        }
    }
    for tree in &forest {
        let ms = [
            (tree.index as u64).to_le_bytes().as_slice(),
            &tree.ms_root(),
            &(tree.leaf_count() as u64).to_le_bytes(),
        ]
        .concat();
        post(world, t, EntryKind::MsRoot, ms, Signers::Aggregator)?;
        let root = [(tree.index as u64).to_le_bytes().as_slice(), &tree.root.to_bytes(&params)].concat();
        post(world, t, EntryKind::RootCiphertext, root, Signers::Aggregator)?;
    }

    let mut detections = std::mem::take(&mut prep.detections);
    let mut ledger = std::mem::take(&mut prep.ledger);
    owner_checks(world, &prep, &forest, &mut ledger, &mut detections);
    {
        let mut audits: Vec<TreeAudit> = forest.iter().zip(&commits).map(|(tr, mc)| TreeAudit::new(tr, mc)).collect();
        verifier_fanout(world, t, 0, &mut audits, &prep.ctx, &mut ledger, &mut detections);
    }
    prep.ledger = ledger;

    let roots: Vec<Ciphertext> = forest.iter().map(|tr| tr.root.clone()).collect();
    let plains = release(world, &mut prep, &roots)?;
    let (exact, real, max_k) = oracle(world, &prep, &forest);
    let t_plain = params.plain_modulus();
    let mut aggregate = Vec::with_capacity(ell * params.slots());
    let mut exact_match = true;
    let mut round_slot_ok = true;
    for (j, pt) in plains.iter().enumerate() {
        exact_match &= pt.coeffs() == exact[j];
        let present = forest[j].leaves.iter().filter(|l| !l.is_bottom()).count() as u64;
        round_slot_ok &= pt.round_t == (t % t_plain) * present % t_plain;
        aggregate.extend(pt.decode(t_plain));
    }
    aggregate.truncate(world.cfg.model.dim);
    let max_abs_error = aggregate
        .iter()
        .zip(&real)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tolerance = 2.0 * max_k.max(1) as f64 / params.scale();

    let dp = world.derived.dp.clone();
    world.accountant.record_round(dp.q, dp.z)?;
    let denom = dp.q * world.cfg.population.w as f64;
    for (m, a) in world.model.iter_mut().zip(&aggregate) {
        *m += a / denom;
    }
    if let Some(c) = prep.contributions.iter().find(|c| !c.malicious && !c.noise && c.reveals) {
        world.replay_stock = Some(c.cts.iter().cloned().zip(c.atts.iter().cloned()).collect());
    }
    world.round = t;
    world.ledger.merge(&prep.ledger);

    let expected: Vec<ViolationKind> = active.iter().map(|b| b.expected_violation()).collect();
    let undetected = active
        .iter()
        .filter(|b| !detections.has_kind(b.expected_violation()))
        .map(|b| b.name().to_string())
        .collect();
    let mut committee_sizes = BTreeMap::new();
    committee_sizes.insert("master".to_string(), prep.rosters.master.len());
    committee_sizes.insert("dp_noise".to_string(), prep.rosters.dp_noise.len());
    committee_sizes.insert("decryption_each".to_string(), world.cfg.committees.decryption.c);
    committee_sizes.insert("decryption_committees".to_string(), prep.rosters.decryption.len());

    Ok(RoundReport {
        round_t: t,
        aborted: None,
        beacon: hex(&prep.beacon),
        committee_sizes,
        union_failure_bound: world.derived.union_failure,
        sampled: prep.sampled,
        noise_members: prep.rosters.dp_noise.len(),
        contributors: prep.contributions.len(),
        bottom_leaves: forest.iter().map(|tr| tr.leaves.iter().filter(|l| l.is_bottom()).count()).sum(),
        trees: ell,
        leaf_counts: forest.iter().map(SummationTree::leaf_count).collect(),
        m_max: world.derived.m_max,
        pit: pit.is_some(),
        pit_point: pit.map(|r| r.to_string()),
        ms_roots: forest.iter().map(|tr| hex(&tr.ms_root())).collect(),
        adversary: active.iter().map(|b| b.name().to_string()).collect(),
        expected_violations: expected.iter().map(|k| k.name().to_string()).collect(),
        detections: detections.to_report(),
        undetected,
        aggregate: Some(AggregateReport {
            exact_match,
            max_abs_error,
            tolerance,
            l2_norm: l2_norm(&aggregate),
            round_slot_ok,
            head: aggregate.iter().take(8).copied().collect(),
        }),
        privacy: privacy_report(world),
        model_loss: world.eval_loss(),
        ledger: prep.ledger,
        board: BoardReport {
            entries: world.board.len(),
            digest: hex(&world.board.digest()),
        },
    })
}
