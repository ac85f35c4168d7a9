use std::collections::BTreeMap;

use rand::Rng;

use super::ledger::{CostLedger, Role};
use super::world::World;
use crate::aggproto::{pick_nonleaves, window, LeafRecord, TreeAudit, Violation, ViolationKind, VerifyContext};
use crate::committee::DeviceId;
use crate::hash::hex;
use crate::merkle::depth;

/// Distinct violations with the number of honest parties reporting each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Detections {
    found: BTreeMap<Violation, (u64, DeviceId)>,
}

impl Detections {
    pub fn record(&mut self, v: Violation, reporter: &DeviceId) {
        let e = self.found.entry(v).or_insert((0, *reporter));
        e.0 += 1;
    }

    pub fn record_many(&mut self, v: Violation, reporters: u64, first: &DeviceId) {
        if reporters == 0 {
            return;
        }
        let e = self.found.entry(v).or_insert((0, *first));
        e.0 += reporters;
    }

    pub fn is_empty(&self) -> bool {
        self.found.is_empty()
    }

    pub fn len(&self) -> usize {
        self.found.len()
    }

    pub fn has_kind(&self, kind: ViolationKind) -> bool {
        self.found.keys().any(|v| v.kind == kind)
    }

    pub fn kinds(&self) -> Vec<ViolationKind> {
        let mut k: Vec<_> = self.found.keys().map(|v| v.kind).collect();
        k.dedup();
        k
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Violation, u64, &DeviceId)> {
        self.found.iter().map(|(v, (n, d))| (v, *n, d))
    }

    pub fn merge(&mut self, other: &Detections) {
        for (v, n, d) in other.iter() {
            self.record_many(*v, n, d);
        }
    }

    pub fn to_report(&self) -> Vec<DetectionReport> {
        self.iter()
            .map(|(v, n, d)| DetectionReport {
                kind: v.kind.name().to_string(),
                tree: v.tree,
                level: v.level,
                index: v.index,
                reporters: n,
                first_reporter: hex(&d[..8]),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DetectionReport {
    pub kind: String,
    pub tree: usize,
    pub level: usize,
    pub index: usize,
    pub reporters: u64,
    pub first_reporter: String,
}

fn path_bytes(leaves: usize) -> usize {
    8 + 32 * depth(leaves)
}

/// Probability that a verifier inspects a given tree.
pub fn selection_probability(world: &World, leaf_count: usize) -> f64 {
    match world.cfg.verify.select_prob {
        Some(p) => p,
        None => (leaf_count as f64 / world.cfg.population.w as f64).min(1.0),
    }
}

/// Every honest device runs the leaf-count check on all trees and the spot
/// checks on the trees it selects. `salt` separates repeated trials.
pub fn verifier_fanout(
    world: &World,
    round_t: u64,
    salt: u64,
    audits: &mut [TreeAudit<'_>],
    ctx: &VerifyContext,
    ledger: &mut CostLedger,
    det: &mut Detections,
) {
    let params = &world.derived.params;
    let s = world.cfg.verify.s;
    let ell = audits.len();
    let probs: Vec<f64> = audits
        .iter()
        .map(|a| selection_probability(world, a.tree.leaf_count()))
        .collect();
    let t = round_t.to_le_bytes();
    let salt = salt.to_le_bytes();
    for dev in world.devices.iter().filter(|d| !d.malicious) {
        let mut rng = world.rng(&[b"verify", &t, &salt, &dev.id]);
        ledger.down(Role::Verifier, 8 * ell);
        for (j, audit) in audits.iter_mut().enumerate() {
            let tree = audit.tree;
            let m = tree.leaf_count();
            if m > ctx.m_max {
                det.record(
                    Violation {
                        kind: ViolationKind::CountExceeded,
                        tree: tree.index,
                        level: 0,
                        index: m,
                    },
                    &dev.id,
                );
                continue;
            }
            if m == 0 || !rng.gen_bool(probs[j]) {
                continue;
            }
            let v_init = rng.gen_range(0..m);
            let win = window(v_init, s, m);
            let picks = pick_nonleaves(&tree.level_sizes(), &win, s, &mut rng);
            book_check(world, audit, &win, &picks, ledger);
            if let Err(v) = audit.leaves(v_init, s, ctx, params) {
                det.record(v, &dev.id);
            }
            if let Err(v) = audit.nonleaves(&picks, params) {
                det.record(v, &dev.id);
            }
        }
    }
}

fn book_check(world: &World, audit: &TreeAudit<'_>, win: &[usize], picks: &[(usize, usize)], ledger: &mut CostLedger) {
    let params = &world.derived.params;
    let tree = audit.tree;
    let ms = path_bytes(tree.vertex_count());
    let mc = path_bytes(audit.commit.len());
    let mut down = 0usize;
    let (mut verify, mut hash) = (0u64, 0u64);
    for &i in win {
        let leaf = &tree.leaves[i];
        down += leaf.byte_len(params) + ms + 32;
        hash += 1 + depth(tree.vertex_count()) as u64;
        if let LeafRecord::Present { .. } = leaf {
            down += 32 + mc;
            verify += 1;
            hash += 2 + depth(audit.commit.len()) as u64;
        }
    }
    let mut nonleaf_bytes = 0usize;
    for &(level, index) in picks {
        let own = tree.nonleaf[level - 1][index].byte_len(params);
        nonleaf_bytes += own;
        down += own + ms;
        for (l, i) in tree.children(level, index) {
            if l == 0 {
                if !win.contains(&i) {
                    down += tree.leaves[i].byte_len(params) + ms;
                }
            } else {
                down += tree.nonleaf[l - 1][i].byte_len(params) + ms;
            }
        }
        hash += 3 * (1 + depth(tree.vertex_count()) as u64);
        if tree.root_vertex() == Some((level, index)) {
            down += crate::ahe::Ciphertext::serialized_len(params);
        }
    }
    let c = ledger.role(Role::Verifier);
    c.bytes_down += down as u64;
    c.verify += verify;
    c.hash += hash;
    ledger.item("verifier.trees_checked", 1);
    ledger.item("verifier.nonleaf_vertices", picks.len() as u64);
    ledger.item("verifier.nonleaf_bytes", nonleaf_bytes as u64);
}
