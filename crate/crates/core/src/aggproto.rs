//! Commit-add-verify aggregation: input commitments and their Merkle trees,
//! per-ciphertext summation trees with Merkle mirrors, and the checks a
//! verifying device runs on them.

use std::collections::BTreeSet;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ahe::{ct_add, AheError, AheParams, Ciphertext};
use crate::attest::{verify_digest, Attestation, Statement, ATTESTATION_BYTES};
use crate::committee::DeviceId;
use crate::hash::{sha256_parts, Digest32};
use crate::merkle::{verify_path, MerklePath, MerkleTree};
use crate::ring::{eval_unchecked, RingParams};
use crate::sig::PublicKeyBytes;

pub type Nonce = [u8; 16];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggError {
    #[error("device appears twice in tree input")]
    DuplicateDevice(DeviceId),
    #[error("tree {tree} has {m} leaves, above M_max = {max}")]
    CountExceeded { tree: usize, m: usize, max: usize },
    #[error("PIT point {0} is not a field element")]
    BadPoint(u128),
    #[error(transparent)]
    Ahe(#[from] AheError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    SortOrder,
    CommitmentMismatch,
    CommitmentAbsent,
    AttestationInvalid,
    MembershipInvalid,
    CountExceeded,
    SumMismatch,
    RootEvalMismatch,
    RosterMismatch,
}

impl ViolationKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SortOrder => "sort-order",
            Self::CommitmentMismatch => "commitment-mismatch",
            Self::CommitmentAbsent => "commitment-absent",
            Self::AttestationInvalid => "attestation-invalid",
            Self::MembershipInvalid => "membership-invalid",
            Self::CountExceeded => "count-exceeded",
            Self::SumMismatch => "sum-mismatch",
            Self::RootEvalMismatch => "root-eval-mismatch",
            Self::RosterMismatch => "roster-mismatch",
        }
    }
}

/// A failed check, located at `(level, index)` of tree `tree` (level 0 = leaves).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub tree: usize,
    pub level: usize,
    pub index: usize,
}

pub type VerifyResult = Result<(), Violation>;

/// `H(nonce ‖ ct ‖ pk)`.
pub fn commitment_digest(nonce: &Nonce, ct: &Ciphertext, pk: &DeviceId, params: &AheParams) -> Digest32 {
    sha256_parts(&[nonce, &ct.to_bytes(params), pk])
}

pub fn make_commitment<R: RngCore + ?Sized>(
    pk: &DeviceId,
    ct: &Ciphertext,
    params: &AheParams,
    rng: &mut R,
) -> (Nonce, Digest32) {
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);
    let d = commitment_digest(&nonce, ct, pk, params);
    (nonce, d)
}

/// What a device sends in the commit step: one digest per ciphertext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputCommit {
    pub pk: DeviceId,
    pub digests: Vec<Digest32>,
}

fn commit_leaf(pk: &DeviceId, t: &Digest32) -> Digest32 {
    sha256_parts(&[b"mc", pk, t])
}

/// Merkle tree over `(π, t)` pairs sorted by π.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitTree {
    entries: Vec<(DeviceId, Digest32)>,
    merkle: MerkleTree,
}

pub fn build_commit_tree(entries: &[(DeviceId, Digest32)]) -> Result<CommitTree, AggError> {
    let mut sorted = entries.to_vec();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(AggError::DuplicateDevice(w[0].0));
        }
    }
    let merkle = MerkleTree::new(sorted.iter().map(|(pk, t)| commit_leaf(pk, t)).collect());
    Ok(CommitTree {
        entries: sorted,
        merkle,
    })
}

impl CommitTree {
    pub fn root(&self) -> Digest32 {
        self.merkle.root()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(DeviceId, Digest32)] {
        &self.entries
    }

    /// The committed digest for `pk` and its path, as the aggregator would serve them.
    pub fn lookup(&self, pk: &DeviceId) -> Option<(Digest32, MerklePath)> {
        let i = self.entries.binary_search_by(|(p, _)| p.cmp(pk)).ok()?;
        Some((self.entries[i].1, self.merkle.path(i)?))
    }

    pub fn verify_entry(&self, pk: &DeviceId, t: &Digest32, path: &MerklePath) -> bool {
        verify_path(&commit_leaf(pk, t), path, &self.root(), self.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeafRecord {
    Present {
        pk: DeviceId,
        ct: Ciphertext,
        nonce: Nonce,
        att: Attestation,
    },
    Bottom {
        pk: DeviceId,
    },
}

impl LeafRecord {
    pub fn pk(&self) -> &DeviceId {
        match self {
            Self::Present { pk, .. } | Self::Bottom { pk } => pk,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Self::Bottom { .. })
    }

    pub fn byte_len(&self, params: &AheParams) -> usize {
        match self {
            Self::Present { .. } => 32 + 1 + Ciphertext::serialized_len(params) + 16 + ATTESTATION_BYTES,
            Self::Bottom { .. } => 32 + 1,
        }
    }

    fn digest(&self, params: &AheParams) -> Digest32 {
        match self {
            Self::Present { pk, ct, nonce, att } => sha256_parts(&[
                pk,
                &[1],
                &ct.digest(params),
                nonce,
                &att.to_bytes(),
            ]),
            Self::Bottom { pk } => sha256_parts(&[pk, &[0]]),
        }
    }

    /// The value this leaf contributes at its parent; ⊥ contributes zero.
    pub fn value(&self, pit_point: Option<u128>, params: &AheParams) -> VertexValue {
        match (self, pit_point) {
            (Self::Present { ct, .. }, Some(r)) => eval_ct(ct, r, params.ring()),
            (Self::Bottom { .. }, Some(_)) => VertexValue::Eval(0, 0),
            (Self::Present { ct, .. }, None) => VertexValue::Full(ct.clone()),
            (Self::Bottom { .. }, None) => VertexValue::Full(Ciphertext::zero(params, 0)),
        }
    }
}

/// Non-leaf content: an evaluation pair under PIT, the full ciphertext otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VertexValue {
    Eval(u128, u128),
    Full(Ciphertext),
}

/// Bytes of an evaluation pair.
pub const EVAL_PAIR_BYTES: usize = 32;

impl VertexValue {
    pub fn byte_len(&self, params: &AheParams) -> usize {
        match self {
            Self::Eval(..) => EVAL_PAIR_BYTES,
            Self::Full(_) => Ciphertext::serialized_len(params),
        }
    }

    fn bytes(&self, params: &AheParams) -> Vec<u8> {
        match self {
            Self::Eval(a, b) => [a.to_le_bytes(), b.to_le_bytes()].concat(),
            Self::Full(ct) => ct.to_bytes(params),
        }
    }

    fn add(&self, other: &Self, params: &AheParams) -> Option<Self> {
        let m = params.ring().modulus();
        match (self, other) {
            (Self::Eval(a1, a2), Self::Eval(b1, b2)) => Some(Self::Eval(m.add(*a1, *b1), m.add(*a2, *b2))),
            (Self::Full(x), Self::Full(y)) => ct_add(x, y, params).ok().map(Self::Full),
            _ => None,
        }
    }

    /// Equality of the polynomial content; ciphertext metadata is not summed by verifiers.
    fn same_content(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Eval(a1, a2), Self::Eval(b1, b2)) => a1 == b1 && a2 == b2,
            (Self::Full(x), Self::Full(y)) => x.c1 == y.c1 && x.c2 == y.c2,
            _ => false,
        }
    }
}

pub fn eval_ct(ct: &Ciphertext, r: u128, ring: &RingParams) -> VertexValue {
    let m = ring.modulus();
    VertexValue::Eval(eval_unchecked(&ct.c1, r, m), eval_unchecked(&ct.c2, r, m))
}

/// Level sizes from the leaves up. Level k+1 node i has children 2i and 2i+1;
/// a last node without a partner has a single child and equal value. A tree
/// always has at least one non-leaf level when it has leaves.
pub fn level_sizes(leaves: usize) -> Vec<usize> {
    let mut sizes = vec![leaves];
    if leaves == 0 {
        return sizes;
    }
    let mut n = leaves;
    loop {
        n = n.div_ceil(2);
        sizes.push(n);
        if n == 1 {
            break;
        }
    }
    sizes
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummationTree {
    pub index: usize,
    pub leaves: Vec<LeafRecord>,
    /// `nonleaf[k]` holds level k+1
    pub nonleaf: Vec<Vec<VertexValue>>,
    pub root: Ciphertext,
    pub pit_point: Option<u128>,
    ms: MerkleTree,
}

impl SummationTree {
    /// Honest construction: sort leaves by π, sum upward, seal the Merkle mirror.
    pub fn build(
        index: usize,
        mut leaves: Vec<LeafRecord>,
        pit_point: Option<u128>,
        round_t: u64,
        params: &AheParams,
    ) -> Result<Self, AggError> {
        if let Some(r) = pit_point {
            if r >= params.ring().q() {
                return Err(AggError::BadPoint(r));
            }
        }
        leaves.sort_by(|a, b| a.pk().cmp(b.pk()));
        for w in leaves.windows(2) {
            if w[0].pk() == w[1].pk() {
                return Err(AggError::DuplicateDevice(*w[0].pk()));
            }
        }
        let mut root = Ciphertext::zero(params, round_t);
        let mut present = 0u64;
        for l in &leaves {
            if let LeafRecord::Present { ct, .. } = l {
                root = if present == 0 { ct.clone() } else { ct_add(&root, ct, params)? };
                present += 1;
            }
        }
        let mut nonleaf: Vec<Vec<VertexValue>> = Vec::new();
        let mut below: Vec<VertexValue> = leaves.iter().map(|l| l.value(pit_point, params)).collect();
        for _ in 1..level_sizes(leaves.len()).len() {
            let level: Vec<VertexValue> = below
                .chunks(2)
                .map(|c| match c {
                    [a, b] => a.add(b, params).expect("uniform vertex kinds"),
                    [a] => a.clone(),
                    _ => unreachable!(),
                })
                .collect();
            nonleaf.push(level.clone());
            below = level;
        }
        let mut tree = Self {
            index,
            leaves,
            nonleaf,
            root,
            pit_point,
            ms: MerkleTree::new(vec![]),
        };
        tree.seal(params);
        Ok(tree)
    }

    /// Recomputes the Merkle mirror over the current vertex contents.
    pub fn seal(&mut self, params: &AheParams) {
        let mut digests = Vec::with_capacity(self.vertex_count());
        for i in 0..self.leaves.len() {
            digests.push(self.vertex_digest(0, i, params));
        }
        for level in 1..=self.nonleaf.len() {
            for i in 0..self.nonleaf[level - 1].len() {
                digests.push(self.vertex_digest(level, i, params));
            }
        }
        self.ms = MerkleTree::new(digests);
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        std::iter::once(self.leaves.len())
            .chain(self.nonleaf.iter().map(Vec::len))
            .collect()
    }

    pub fn nonleaf_count(&self) -> usize {
        self.nonleaf.iter().map(Vec::len).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.leaves.len() + self.nonleaf_count()
    }

    /// `(level, 0)` of the top vertex, if any.
    pub fn root_vertex(&self) -> Option<(usize, usize)> {
        (!self.nonleaf.is_empty()).then(|| (self.nonleaf.len(), 0))
    }

    pub fn ms_root(&self) -> Digest32 {
        self.ms.root()
    }

    fn position(&self, level: usize, index: usize) -> usize {
        if level == 0 {
            return index;
        }
        self.leaves.len() + self.nonleaf[..level - 1].iter().map(Vec::len).sum::<usize>() + index
    }

    /// MS leaf content; binds the tree index and position so vertices cannot be spliced.
    pub fn vertex_digest(&self, level: usize, index: usize, params: &AheParams) -> Digest32 {
        let j = (self.index as u64).to_le_bytes();
        let i = (index as u64).to_le_bytes();
        if level == 0 {
            sha256_parts(&[b"ms-leaf", &j, &i, &self.leaves[index].digest(params)])
        } else {
            let l = (level as u64).to_le_bytes();
            sha256_parts(&[b"ms-node", &j, &l, &i, &self.nonleaf[level - 1][index].bytes(params)])
        }
    }

    pub fn ms_path(&self, level: usize, index: usize) -> Option<MerklePath> {
        self.ms.path(self.position(level, index))
    }

    /// Checks a vertex against the published MS root.
    pub fn vertex_in_ms(&self, level: usize, index: usize, params: &AheParams) -> bool {
        match self.ms_path(level, index) {
            Some(p) => verify_path(&self.vertex_digest(level, index, params), &p, &self.ms_root(), self.vertex_count()),
            None => false,
        }
    }

    /// Children of a non-leaf vertex as `(level, index)` pairs.
    pub fn children(&self, level: usize, index: usize) -> Vec<(usize, usize)> {
        let below = if level == 1 { self.leaves.len() } else { self.nonleaf[level - 2].len() };
        [2 * index, 2 * index + 1]
            .into_iter()
            .filter(|&c| c < below)
            .map(|c| (level - 1, c))
            .collect()
    }

    /// Value of a vertex as a verifier sees it; leaves are evaluated locally.
    pub fn value_at(&self, level: usize, index: usize, params: &AheParams) -> VertexValue {
        if level == 0 {
            self.leaves[index].value(self.pit_point, params)
        } else {
            self.nonleaf[level - 1][index].clone()
        }
    }

    pub fn find_leaf(&self, pk: &DeviceId) -> Option<usize> {
        self.leaves.binary_search_by(|l| l.pk().cmp(pk)).ok()
    }
}

/// Builds every tree and enforces `M' ≤ M_max` on the aggregator side.
pub fn build_summation_forest(
    leaf_records: Vec<Vec<LeafRecord>>,
    pit_point: Option<u128>,
    round_t: u64,
    m_max: usize,
    params: &AheParams,
) -> Result<Vec<SummationTree>, AggError> {
    leaf_records
        .into_iter()
        .enumerate()
        .map(|(j, leaves)| {
            if leaves.len() > m_max {
                return Err(AggError::CountExceeded {
                    tree: j,
                    m: leaves.len(),
                    max: m_max,
                });
            }
            SummationTree::build(j, leaves, pit_point, round_t, params)
        })
        .collect()
}

/// Each tree index independently with probability `q`.
pub fn select_trees<R: RngCore + ?Sized>(q: f64, ell: usize, rng: &mut R) -> Vec<usize> {
    let q = q.clamp(0.0, 1.0);
    (0..ell).filter(|_| rng.gen_bool(q)).collect()
}

/// Public inputs of the verifier checks for one round.
#[derive(Clone, Debug)]
pub struct VerifyContext {
    pub round_t: u64,
    pub update_stmt: Statement,
    pub noise_stmt: Statement,
    pub noise_members: BTreeSet<DeviceId>,
    pub authority: PublicKeyBytes,
    pub m_max: usize,
}

impl VerifyContext {
    pub fn statement_for(&self, pk: &DeviceId) -> &Statement {
        if self.noise_members.contains(pk) {
            &self.noise_stmt
        } else {
            &self.update_stmt
        }
    }
}

fn violation(kind: ViolationKind, tree: &SummationTree, level: usize, index: usize) -> Violation {
    Violation {
        kind,
        tree: tree.index,
        level,
        index,
    }
}

/// All leaf-level checks for leaf `i`: sort order, commitment, attestation, MS membership.
pub fn check_leaf(
    tree: &SummationTree,
    commit: &CommitTree,
    i: usize,
    ctx: &VerifyContext,
    params: &AheParams,
) -> VerifyResult {
    let v = |k| violation(k, tree, 0, i);
    let leaf = &tree.leaves[i];
    if let Some(next) = tree.leaves.get(i + 1) {
        if leaf.pk() >= next.pk() {
            return Err(v(ViolationKind::SortOrder));
        }
    }
    if let LeafRecord::Present { pk, ct, nonce, att } = leaf {
        let ct_digest = ct.digest(params);
        let t = commitment_digest(nonce, ct, pk, params);
        match commit.lookup(pk) {
            Some((published, path)) if commit.verify_entry(pk, &published, &path) => {
                if published != t {
                    return Err(v(ViolationKind::CommitmentMismatch));
                }
            }
            _ => return Err(v(ViolationKind::CommitmentAbsent)),
        }
        if !verify_digest(ctx.statement_for(pk), &ct_digest, att, &ctx.authority) {
            return Err(v(ViolationKind::AttestationInvalid));
        }
    }
    if !tree.vertex_in_ms(0, i, params) {
        return Err(v(ViolationKind::MembershipInvalid));
    }
    Ok(())
}

/// Leaf window `[v_init, v_init + s) mod M'`, after the `M' ≤ M_max` check.
pub fn check_leaves(
    tree: &SummationTree,
    commit: &CommitTree,
    v_init: usize,
    s: usize,
    ctx: &VerifyContext,
    params: &AheParams,
) -> VerifyResult {
    let m = tree.leaf_count();
    if m > ctx.m_max {
        return Err(violation(ViolationKind::CountExceeded, tree, 0, m));
    }
    for i in window(v_init, s, m) {
        check_leaf(tree, commit, i, ctx, params)?;
    }
    Ok(())
}

/// Leaf indices covered by a window; never repeats a leaf.
pub fn window(v_init: usize, s: usize, m: usize) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    (0..s.min(m)).map(|k| (v_init + k) % m).collect()
}

/// Checks that a non-leaf equals the sum of its children, that all three are
/// in MS, and at the root that the published root ciphertext matches.
pub fn check_nonleaf(tree: &SummationTree, level: usize, index: usize, params: &AheParams) -> VerifyResult {
    let v = |k| violation(k, tree, level, index);
    let parent = &tree.nonleaf[level - 1][index];
    let kids = tree.children(level, index);
    let mut sum = tree.value_at(kids[0].0, kids[0].1, params);
    for &(l, i) in &kids[1..] {
        sum = sum
            .add(&tree.value_at(l, i, params), params)
            .ok_or_else(|| v(ViolationKind::SumMismatch))?;
    }
    if !sum.same_content(parent) {
        return Err(v(ViolationKind::SumMismatch));
    }
    if !tree.vertex_in_ms(level, index, params) || !kids.iter().all(|&(l, i)| tree.vertex_in_ms(l, i, params)) {
        return Err(v(ViolationKind::MembershipInvalid));
    }
    if tree.root_vertex() == Some((level, index)) {
        let expected = match tree.pit_point {
            Some(r) => eval_ct(&tree.root, r, params.ring()),
            None => VertexValue::Full(tree.root.clone()),
        };
        if !expected.same_content(parent) {
            return Err(v(ViolationKind::RootEvalMismatch));
        }
    }
    Ok(())
}

pub fn check_nonleaves(tree: &SummationTree, picks: &[(usize, usize)], params: &AheParams) -> VerifyResult {
    for &(level, index) in picks {
        check_nonleaf(tree, level, index, params)?;
    }
    Ok(())
}

/// `s` distinct non-leaf vertices: the parents of the leaf window (at most
/// `s/2`), the root, then uniform picks among the rest.
pub fn pick_nonleaves<R: RngCore + ?Sized>(
    sizes: &[usize],
    leaf_window: &[usize],
    s: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let total: usize = sizes[1..].iter().sum();
    let target = s.min(total);
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(target);
    let mut seen = BTreeSet::new();
    let mut push = |v: (usize, usize), picked: &mut Vec<(usize, usize)>| {
        if picked.len() < target && seen.insert(v) {
            picked.push(v);
        }
    };
    if total == 0 {
        return picked;
    }
    for &leaf in leaf_window {
        if picked.len() >= s / 2 {
            break;
        }
        push((1, leaf / 2), &mut picked);
    }
    push((sizes.len() - 1, 0), &mut picked);
    while picked.len() < target {
        let mut k = rng.gen_range(0..total);
        let mut level = 1;
        while k >= sizes[level] {
            k -= sizes[level];
            level += 1;
        }
        push((level, k), &mut picked);
    }
    picked
}

/// What the owner of a leaf checks with the membership proof it receives:
/// its record is in the tree as sent, and the proof verifies.
pub fn check_own_leaf(tree: &SummationTree, expected: &LeafRecord, params: &AheParams) -> VerifyResult {
    let missing = |index| violation(ViolationKind::MembershipInvalid, tree, 0, index);
    let i = tree.find_leaf(expected.pk()).ok_or_else(|| missing(tree.leaf_count()))?;
    if tree.leaves[i] != *expected || !tree.vertex_in_ms(0, i, params) {
        return Err(missing(i));
    }
    Ok(())
}

/// Memoized checks over one published tree. Verdicts depend only on the
/// published data, so many simulated verifiers can share them.
pub struct TreeAudit<'a> {
    pub tree: &'a SummationTree,
    pub commit: &'a CommitTree,
    leaf: Vec<Option<VerifyResult>>,
    node: Vec<Vec<Option<VerifyResult>>>,
}

/// Verdicts of a [`TreeAudit`] detached from the tree borrow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditCache {
    leaf: Vec<Option<VerifyResult>>,
    node: Vec<Vec<Option<VerifyResult>>>,
}

impl<'a> TreeAudit<'a> {
    pub fn new(tree: &'a SummationTree, commit: &'a CommitTree) -> Self {
        Self {
            tree,
            commit,
            leaf: vec![None; tree.leaf_count()],
            node: tree.nonleaf.iter().map(|l| vec![None; l.len()]).collect(),
        }
    }

    /// Resumes an audit of the same tree; a cache of another shape is discarded.
    pub fn with_cache(tree: &'a SummationTree, commit: &'a CommitTree, cache: AuditCache) -> Self {
        let fits = cache.leaf.len() == tree.leaf_count()
            && cache.node.len() == tree.nonleaf.len()
            && cache.node.iter().zip(&tree.nonleaf).all(|(c, l)| c.len() == l.len());
        if !fits {
            return Self::new(tree, commit);
        }
        Self {
            tree,
            commit,
            leaf: cache.leaf,
            node: cache.node,
        }
    }

    pub fn into_cache(self) -> AuditCache {
        AuditCache {
            leaf: self.leaf,
            node: self.node,
        }
    }

    /// Whether some verifier has already checked leaf `i`.
    pub fn leaf_checked(&self, i: usize) -> bool {
        self.leaf.get(i).is_some_and(Option::is_some)
    }

    pub fn leaf(&mut self, i: usize, ctx: &VerifyContext, params: &AheParams) -> VerifyResult {
        if let Some(r) = self.leaf[i] {
            return r;
        }
        let r = check_leaf(self.tree, self.commit, i, ctx, params);
        self.leaf[i] = Some(r);
        r
    }

    pub fn leaves(&mut self, v_init: usize, s: usize, ctx: &VerifyContext, params: &AheParams) -> VerifyResult {
        let m = self.tree.leaf_count();
        if m > ctx.m_max {
            return Err(violation(ViolationKind::CountExceeded, self.tree, 0, m));
        }
        for i in window(v_init, s, m) {
            self.leaf(i, ctx, params)?;
        }
        Ok(())
    }

    pub fn nonleaf(&mut self, level: usize, index: usize, params: &AheParams) -> VerifyResult {
        if let Some(r) = self.node[level - 1][index] {
            return r;
        }
        let r = check_nonleaf(self.tree, level, index, params);
        self.node[level - 1][index] = Some(r);
        r
    }

    pub fn nonleaves(&mut self, picks: &[(usize, usize)], params: &AheParams) -> VerifyResult {
        for &(l, i) in picks {
            self.nonleaf(l, i, params)?;
        }
        Ok(())
    }
}

/// `ceil(params / slots)` ciphertexts per update.
pub fn trees_needed(num_params: usize, slots: usize) -> usize {
    num_params.div_ceil(slots)
}

/// Leaf-count bounds known to every verifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafBounds {
    pub m_prime: usize,
    pub m_max: usize,
    pub w_max: u64,
    pub w_min: u64,
}

impl LeafBounds {
    /// `M_max = ceil(q·W_max) + extra`, where `extra` covers contributors that
    /// are not self-sampled (the DP-noise committee).
    pub fn m_max(q: f64, w_max: u64, extra: usize) -> usize {
        (q * w_max as f64).ceil() as usize + extra
    }

    pub fn within(&self) -> bool {
        self.m_prime <= self.m_max
    }
}

/// Chernoff lower-tail bound `(e^{k−1} / k^k)^{qW}` on sampling fewer than `k·qW` devices.
pub fn sampling_concentration_bound(qw: f64, k: f64) -> f64 {
    (qw * (k - 1.0 - k * k.ln())).exp()
}

/// `e^{−(1−f)s}`: no honest verifier's window covers a given leaf.
pub fn detection_miss_bound(f: f64, s: usize) -> f64 {
    (-(1.0 - f) * s as f64).exp()
}

/// Schwartz–Zippel: a nonzero difference of degree < N vanishes at a uniform
/// point with probability at most `(N−1)/Q`.
pub fn pit_escape_bound(degree: usize, q: u128) -> f64 {
    (degree as f64 - 1.0) / q as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::{decrypt, encode, encrypt, keygen};
    use crate::attest::AttestAuthority;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn commitment_basics() {
        let params = AheParams::with_degree(16, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (pk, _) = keygen(&params, &mut rng);
        let (ct, _) = encrypt(&pk, &encode(1, &[], &params).unwrap(), &params, &mut rng).unwrap();
        let id = [3u8; 32];
        let (nonce, d) = make_commitment(&id, &ct, &params, &mut rng);
        assert_eq!(commitment_digest(&nonce, &ct, &id, &params), d);
        let (n2, d2) = make_commitment(&id, &ct, &params, &mut rng);
        assert_ne!(nonce, n2);
        assert_ne!(d, d2);
    }

    #[test]
    fn commit_tree_sorting() {
        let e: Vec<(DeviceId, Digest32)> = (0..10u8).map(|i| ([i; 32], [i + 100; 32])).collect();
        let mut rev = e.clone();
        rev.reverse();
        let a = build_commit_tree(&e).unwrap();
        assert_eq!(a.root(), build_commit_tree(&rev).unwrap().root());
        let single = build_commit_tree(&e[..1]).unwrap();
        assert_eq!(
            single.root(),
            sha256_parts(&[&commit_leaf(&e[0].0, &e[0].1), &[0u8; 32]])
        );
        let mut dup = e.clone();
        dup.push(e[3]);
        assert!(matches!(build_commit_tree(&dup), Err(AggError::DuplicateDevice(_))));
    }

    #[test]
    fn shapes() {
        assert_eq!(level_sizes(0), vec![0]);
        assert_eq!(level_sizes(1), vec![1, 1]);
        assert_eq!(level_sizes(5), vec![5, 3, 2, 1]);
        assert_eq!(level_sizes(8), vec![8, 4, 2, 1]);
        assert_eq!(trees_needed(1_200_000, 4095), 294);
        assert_eq!(trees_needed(1_200_000, 4096), 293);
        assert_eq!(trees_needed(1000, 255), 4);
    }

    #[test]
    fn two_leaf_tree_sums() {
        let params = AheParams::with_degree(16, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (pk, sk) = keygen(&params, &mut rng);
        let auth = AttestAuthority::new(&[1; 32]);
        let stmt = Statement::new(1, &pk, 10.0, &params);
        let mut leaves = Vec::new();
        for (id, x) in [([2u8; 32], 0.5), ([1u8; 32], 0.25)] {
            let pt = encode(1, &[x], &params).unwrap();
            let (ct, rnd) = encrypt(&pk, &pt, &params, &mut rng).unwrap();
            let att = auth.prove(&stmt, &ct, &pt, &rnd, &pk, &params);
            leaves.push(LeafRecord::Present {
                pk: id,
                ct,
                nonce: [0; 16],
                att,
            });
        }
        let tree = SummationTree::build(0, leaves, Some(12345), 1, &params).unwrap();
        assert_eq!(tree.leaves[0].pk(), &[1u8; 32]);
        let out = decrypt(&sk, &tree.root, &params).unwrap().decode(params.plain_modulus());
        assert_eq!(out[0], 0.75);
        assert!(check_nonleaf(&tree, 1, 0, &params).is_ok());
    }

    #[test]
    fn bounds_formulas() {
        assert!((sampling_concentration_bound(5000.0, 0.9) / 5.77e-12 - 1.0).abs() < 0.1);
        assert!((detection_miss_bound(0.03, 5) - (-4.85f64).exp()).abs() < 1e-15);
        assert_eq!(LeafBounds::m_max(0.05, 2000, 10), 110);
    }

    #[test]
    fn picks_are_distinct_and_include_root() {
        let sizes = level_sizes(100);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for v in 0..100 {
            let w = window(v, 6, 100);
            let p = pick_nonleaves(&sizes, &w, 6, &mut rng);
            assert_eq!(p.len(), 6);
            assert_eq!(p.iter().collect::<BTreeSet<_>>().len(), 6);
            assert!(p.contains(&(sizes.len() - 1, 0)));
            assert!(p.contains(&(1, w[0] / 2)));
        }
        let tiny = level_sizes(2);
        assert_eq!(pick_nonleaves(&tiny, &[0, 1], 6, &mut rng), vec![(1, 0)]);
    }
}
