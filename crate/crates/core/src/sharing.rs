//! Shamir sharing over Z_Q with Feldman commitments, share redistribution
//! between committees, and a commit-reveal beacon.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::arith::{is_probable_prime, Modulus};
use crate::hash::{sha256_parts, Digest32};
use crate::ring::{Q120, Q61, Q97};

/// Bytes per serialized field or group element.
pub const ELEMENT_BYTES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("threshold {a} must be below committee size {c}")]
    Threshold { a: usize, c: usize },
    #[error("member index 0 is reserved for the secret")]
    ZeroIndex,
    #[error("index {0} appears twice")]
    DuplicateIndex(u32),
    #[error("index {0} is not part of the quorum")]
    NotInQuorum(u32),
    #[error("quorum needs {expected} members, got {got}")]
    QuorumSize { expected: usize, got: usize },
    #[error("no shares held by member {0}")]
    UnknownMember(u32),
    #[error("invalid commitment group: {0}")]
    Group(String),
    #[error("subshares from member {0} are inconsistent with its commitments")]
    InvalidDeal(u32),
    #[error("beacon cannot finalize: {missing} commitments missing")]
    BeaconIncomplete { missing: usize },
    #[error("beacon member {0} out of range")]
    BeaconMember(usize),
}

/// Schnorr group: the order-Q subgroup of Z_p^* with p = k·Q + 1.
#[derive(Clone, Debug)]
pub struct DlogGroup {
    p: Modulus,
    q: Modulus,
    g: u128,
    comb: Arc<Vec<[u128; 256]>>,
}

impl PartialEq for DlogGroup {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.q == other.q && self.g == other.g
    }
}

impl DlogGroup {
    pub fn new(q: u128, p: u128, g: u128) -> Result<Self, SharingError> {
        let qm = Modulus::new(q).ok_or_else(|| SharingError::Group(format!("bad Q {q}")))?;
        let pm = Modulus::new(p).ok_or_else(|| SharingError::Group(format!("bad p {p}")))?;
        if (p - 1) % q != 0 || !is_probable_prime(p) || !is_probable_prime(q) {
            return Err(SharingError::Group(format!("p={p} is not k·{q}+1 prime")));
        }
        if g <= 1 || g >= p || pm.pow(g, q) != 1 {
            return Err(SharingError::Group(format!("g={g} does not generate the order-Q subgroup")));
        }
        let comb = build_comb(&pm, g, qm.bits());
        Ok(Self {
            p: pm,
            q: qm,
            g,
            comb: Arc::new(comb),
        })
    }

    /// Smallest even k with k·Q + 1 prime, generator `h^k` for the first h giving ≠ 1.
    pub fn find_for(q: u128) -> Result<Self, SharingError> {
        let mut k: u128 = 2;
        loop {
            let p = k
                .checked_mul(q)
                .and_then(|x| x.checked_add(1))
                .filter(|&p| Modulus::new(p).is_some())
                .ok_or_else(|| SharingError::Group(format!("no group prime for Q={q}")))?;
            if is_probable_prime(p) {
                let pm = Modulus::new(p).unwrap();
                for h in 2u128.. {
                    let g = pm.pow(h, k);
                    if g != 1 {
                        return Self::new(q, p, g);
                    }
                }
            }
            k += 2;
        }
    }

    /// Precomputed groups for the built-in ciphertext primes, otherwise a search.
    pub fn for_modulus(q: u128) -> Result<Self, SharingError> {
        match q {
            Q120 => Self::new(Q120, 55827575822966466661959896531732496427, 4398046511104),
            Q61 => Self::new(Q61, 106068778423812587567, 70368744177664),
            Q97 => Self::new(Q97, 389, 16),
            _ => Self::find_for(q),
        }
    }

    pub fn p(&self) -> u128 {
        self.p.value()
    }
    pub fn g(&self) -> u128 {
        self.g
    }
    pub fn order(&self) -> u128 {
        self.q.value()
    }
    pub fn field(&self) -> &Modulus {
        &self.q
    }

    /// `g^e` with an 8-bit fixed-base comb.
    pub fn exp_g(&self, e: u128) -> u128 {
        let e = e % self.q.value();
        let mut acc = self.p.to_mont(1);
        for (w, row) in self.comb.iter().enumerate() {
            let byte = ((e >> (8 * w)) & 0xff) as usize;
            if byte != 0 {
                acc = self.p.mul_mont(acc, row[byte]);
            }
        }
        self.p.mul_mont(acc, 1)
    }

    pub fn mul(&self, a: u128, b: u128) -> u128 {
        self.p.mul(a, b)
    }

    pub fn pow(&self, base: u128, e: u128) -> u128 {
        self.p.pow(base, e)
    }

    /// `Π_k commitments[k]^{x^k}` evaluated by Horner's rule in the exponent.
    pub fn eval_commitments(&self, commitments: &[u128], x: u128) -> u128 {
        let p = &self.p;
        let mut acc = p.to_mont(1);
        for &c in commitments.iter().rev() {
            acc = pow_mont(p, acc, x);
            acc = p.mul_mont(acc, p.to_mont(c));
        }
        p.mul_mont(acc, 1)
    }
}

fn pow_mont(p: &Modulus, base_m: u128, mut e: u128) -> u128 {
    let mut acc = p.to_mont(1);
    let mut b = base_m;
    while e > 0 {
        if e & 1 == 1 {
            acc = p.mul_mont(acc, b);
        }
        e >>= 1;
        if e > 0 {
            b = p.mul_mont(b, b);
        }
    }
    acc
}

fn build_comb(p: &Modulus, g: u128, bits: u32) -> Vec<[u128; 256]> {
    let windows = bits.div_ceil(8) as usize;
    let mut rows = Vec::with_capacity(windows);
    let mut base = p.to_mont(g);
    for _ in 0..windows {
        let mut row = [0u128; 256];
        row[0] = p.to_mont(1);
        for b in 1..256 {
            row[b] = p.mul_mont(row[b - 1], base);
        }
        rows.push(row);
        // base^256
        for _ in 0..8 {
            base = p.mul_mont(base, base);
        }
    }
    rows
}

/// Per-coefficient Shamir shares with Feldman commitments.
#[derive(Clone, Debug, PartialEq)]
pub struct ShareSet {
    pub threshold: usize,
    pub count: usize,
    /// member index (1-based) → one share per secret coefficient
    pub shares: BTreeMap<u32, Vec<u128>>,
    /// per secret coefficient, commitments `g^{a_0}, …, g^{a_A}`
    pub feldman: Vec<Vec<u128>>,
}

impl ShareSet {
    pub fn secret_len(&self) -> usize {
        self.feldman.len()
    }

    pub fn member_shares(&self, i: u32) -> Result<&[u128], SharingError> {
        self.shares
            .get(&i)
            .map(Vec::as_slice)
            .ok_or(SharingError::UnknownMember(i))
    }

    /// Checks every coefficient share of member `i`.
    pub fn verify_member(&self, i: u32, group: &DlogGroup) -> bool {
        match self.shares.get(&i) {
            Some(s) => verify_share_vector(i, s, &self.feldman, group),
            None => false,
        }
    }

    /// Lowest `A+1` member indices.
    pub fn default_quorum(&self) -> Vec<u32> {
        self.shares.keys().take(self.threshold + 1).copied().collect()
    }

    pub fn reconstruct(&self, quorum: &[u32], field: &Modulus) -> Result<Vec<u128>, SharingError> {
        if quorum.len() != self.threshold + 1 {
            return Err(SharingError::QuorumSize {
                expected: self.threshold + 1,
                got: quorum.len(),
            });
        }
        let picked: Vec<(u32, &[u128])> = quorum
            .iter()
            .map(|&i| self.member_shares(i).map(|s| (i, s)))
            .collect::<Result<_, _>>()?;
        reconstruct(&picked, field)
    }

    /// Bytes of one member's share vector.
    pub fn share_bytes(&self) -> usize {
        self.secret_len() * ELEMENT_BYTES
    }

    /// Bytes of the published commitments.
    pub fn commitment_bytes(&self) -> usize {
        self.secret_len() * (self.threshold + 1) * ELEMENT_BYTES
    }
}

fn check_params(c: usize, a: usize) -> Result<(), SharingError> {
    if a >= c {
        return Err(SharingError::Threshold { a, c });
    }
    Ok(())
}

/// Random degree-`a` polynomial with constant term `constant`, evaluated at 1..=c,
/// together with its commitments.
fn deal_one<R: RngCore + ?Sized>(
    constant: u128,
    c: usize,
    a: usize,
    group: &DlogGroup,
    rng: &mut R,
) -> (Vec<u128>, Vec<u128>) {
    let f = group.field();
    let q = f.value();
    let mut poly = Vec::with_capacity(a + 1);
    poly.push(constant % q);
    for _ in 0..a {
        poly.push(rng.gen_range(0..q));
    }
    let commitments = poly.iter().map(|&k| group.exp_g(k)).collect();
    let evals = (1..=c as u128).map(|x| horner(&poly, x, f)).collect();
    (evals, commitments)
}

fn horner(poly: &[u128], x: u128, f: &Modulus) -> u128 {
    poly.iter().rev().fold(0, |acc, &k| f.add(f.mul(acc, x), k))
}

fn transpose(per_coeff: Vec<Vec<u128>>, c: usize) -> BTreeMap<u32, Vec<u128>> {
    (0..c)
        .map(|i| (i as u32 + 1, per_coeff.iter().map(|e| e[i]).collect()))
        .collect()
}

/// Shares each coefficient of `secret` under an independent degree-`a` polynomial.
pub fn share<R: RngCore + ?Sized>(
    secret: &[u128],
    c: usize,
    a: usize,
    group: &DlogGroup,
    rng: &mut R,
) -> Result<ShareSet, SharingError> {
    check_params(c, a)?;
    let mut evals = Vec::with_capacity(secret.len());
    let mut feldman = Vec::with_capacity(secret.len());
    for &s in secret {
        let (e, cm) = deal_one(s, c, a, group, rng);
        evals.push(e);
        feldman.push(cm);
    }
    Ok(ShareSet {
        threshold: a,
        count: c,
        shares: transpose(evals, c),
        feldman,
    })
}

/// `g^{share} == Π_k commitments[k]^{i^k}`.
pub fn verify_share(i: u32, share: u128, commitments: &[u128], group: &DlogGroup) -> bool {
    i != 0 && group.exp_g(share) == group.eval_commitments(commitments, i as u128)
}

pub fn verify_share_vector(i: u32, shares: &[u128], feldman: &[Vec<u128>], group: &DlogGroup) -> bool {
    shares.len() == feldman.len()
        && shares
            .iter()
            .zip(feldman)
            .all(|(&s, cm)| verify_share(i, s, cm, group))
}

/// `Π_{j≠i} j·(j−i)^{−1} mod Q`.
pub fn lagrange_coeff(quorum: &[u32], i: u32, field: &Modulus) -> Result<u128, SharingError> {
    let mut seen = BTreeSet::new();
    for &j in quorum {
        if j == 0 {
            return Err(SharingError::ZeroIndex);
        }
        if !seen.insert(j) {
            return Err(SharingError::DuplicateIndex(j));
        }
    }
    if !seen.contains(&i) {
        return Err(SharingError::NotInQuorum(i));
    }
    let mut num = 1u128;
    let mut den = 1u128;
    for &j in quorum.iter().filter(|&&j| j != i) {
        num = field.mul(num, j as u128);
        den = field.mul(den, field.sub(j as u128 % field.value(), i as u128 % field.value()));
    }
    let inv = field
        .inv(den)
        .ok_or_else(|| SharingError::Group("indices collide mod Q".into()))?;
    Ok(field.mul(num, inv))
}

/// Interpolates the constant term from `(index, share vector)` pairs.
pub fn reconstruct(shares: &[(u32, &[u128])], field: &Modulus) -> Result<Vec<u128>, SharingError> {
    let quorum: Vec<u32> = shares.iter().map(|(i, _)| *i).collect();
    let len = shares.first().map_or(0, |(_, s)| s.len());
    let mut out = vec![0u128; len];
    for (i, s) in shares {
        let l = lagrange_coeff(&quorum, *i, field)?;
        for (o, &v) in out.iter_mut().zip(s.iter()) {
            *o = field.add(*o, field.mul(l, v));
        }
    }
    Ok(out)
}

/// One old member's contribution to a redistribution: a fresh sharing of its
/// Lagrange-weighted share among the new committee.
#[derive(Clone, Debug, PartialEq)]
pub struct SubshareDeal {
    pub from: u32,
    /// per coefficient, commitments to the sub-polynomial
    pub commitments: Vec<Vec<u128>>,
    /// new member index → subshare per coefficient
    pub subshares: BTreeMap<u32, Vec<u128>>,
}

pub fn deal_subshares<R: RngCore + ?Sized>(
    old: &ShareSet,
    from: u32,
    quorum: &[u32],
    new_c: usize,
    new_a: usize,
    group: &DlogGroup,
    rng: &mut R,
) -> Result<SubshareDeal, SharingError> {
    check_params(new_c, new_a)?;
    let field = group.field();
    let lambda = lagrange_coeff(quorum, from, field)?;
    let mine = old.member_shares(from)?;
    let mut evals = Vec::with_capacity(mine.len());
    let mut commitments = Vec::with_capacity(mine.len());
    for &s in mine {
        let (e, cm) = deal_one(field.mul(lambda, s), new_c, new_a, group, rng);
        evals.push(e);
        commitments.push(cm);
    }
    Ok(SubshareDeal {
        from,
        commitments,
        subshares: transpose(evals, new_c),
    })
}

/// Public check that a deal shares `λ_j · share_j`: its constant-term commitment
/// must equal the old Feldman product at `j` raised to `λ_j`.
pub fn check_deal(
    old_feldman: &[Vec<u128>],
    deal: &SubshareDeal,
    quorum: &[u32],
    group: &DlogGroup,
) -> bool {
    let Ok(lambda) = lagrange_coeff(quorum, deal.from, group.field()) else {
        return false;
    };
    deal.commitments.len() == old_feldman.len()
        && deal.commitments.iter().zip(old_feldman).all(|(cm, old)| {
            let expected = group.pow(group.eval_commitments(old, deal.from as u128), lambda);
            cm.first() == Some(&expected)
        })
}

/// Sums accepted deals into the new committee's share set. Commitments compose
/// by multiplication.
pub fn combine_deals(
    deals: &[SubshareDeal],
    new_c: usize,
    new_a: usize,
    group: &DlogGroup,
) -> Result<ShareSet, SharingError> {
    check_params(new_c, new_a)?;
    let field = group.field();
    let first = deals.first().ok_or(SharingError::QuorumSize { expected: 1, got: 0 })?;
    let len = first.commitments.len();
    let mut feldman = vec![vec![1u128; new_a + 1]; len];
    let mut shares: BTreeMap<u32, Vec<u128>> =
        (1..=new_c as u32).map(|i| (i, vec![0u128; len])).collect();
    for d in deals {
        for (acc, cm) in feldman.iter_mut().zip(&d.commitments) {
            for (a, &c) in acc.iter_mut().zip(cm) {
                *a = group.mul(*a, c);
            }
        }
        for (i, sub) in &d.subshares {
            let acc = shares.get_mut(i).ok_or(SharingError::UnknownMember(*i))?;
            for (a, &s) in acc.iter_mut().zip(sub) {
                *a = field.add(*a, s);
            }
        }
    }
    Ok(ShareSet {
        threshold: new_a,
        count: new_c,
        shares,
        feldman,
    })
}

/// Moves the secret held by `old` to a fresh committee of `new_c` members
/// with threshold `new_a`. Every deal is checked against the old commitments
/// and every new share against the composed commitments.
pub fn reshare<R: RngCore + ?Sized>(
    old: &ShareSet,
    old_quorum: &[u32],
    new_c: usize,
    new_a: usize,
    group: &DlogGroup,
    rng: &mut R,
) -> Result<ShareSet, SharingError> {
    if old_quorum.len() != old.threshold + 1 {
        return Err(SharingError::QuorumSize {
            expected: old.threshold + 1,
            got: old_quorum.len(),
        });
    }
    let mut deals = Vec::with_capacity(old_quorum.len());
    for &j in old_quorum {
        let deal = deal_subshares(old, j, old_quorum, new_c, new_a, group, rng)?;
        if !check_deal(&old.feldman, &deal, old_quorum, group) {
            return Err(SharingError::InvalidDeal(j));
        }
        deals.push(deal);
    }
    let new = combine_deals(&deals, new_c, new_a, group)?;
    for i in 1..=new_c as u32 {
        if !new.verify_member(i, group) {
            // locate the faulty dealer
            let bad = deals
                .iter()
                .find(|d| !verify_share_vector(i, &d.subshares[&i], &d.commitments, group))
                .map_or(0, |d| d.from);
            return Err(SharingError::InvalidDeal(bad));
        }
    }
    Ok(new)
}

/// `H(nonce ‖ value_le)`.
pub fn beacon_commit(value: u128, nonce: &[u8; 32]) -> Digest32 {
    sha256_parts(&[nonce, &value.to_le_bytes()])
}

/// Commit-then-reveal randomness among `n` members.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RandBeaconSession {
    pub commitments: Vec<Option<Digest32>>,
    pub reveals: Vec<Option<(u128, [u8; 32])>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeaconOutcome {
    pub value: u128,
    /// members whose reveal was missing or did not match their commitment
    pub excluded: Vec<usize>,
}

impl RandBeaconSession {
    pub fn new(members: usize) -> Self {
        Self {
            commitments: vec![None; members],
            reveals: vec![None; members],
        }
    }

    pub fn commit(&mut self, member: usize, digest: Digest32) -> Result<(), SharingError> {
        *self
            .commitments
            .get_mut(member)
            .ok_or(SharingError::BeaconMember(member))? = Some(digest);
        Ok(())
    }

    /// Reveals are refused until every commitment is posted.
    pub fn reveal(&mut self, member: usize, value: u128, nonce: [u8; 32]) -> Result<(), SharingError> {
        let missing = self.commitments.iter().filter(|c| c.is_none()).count();
        if missing > 0 {
            return Err(SharingError::BeaconIncomplete { missing });
        }
        *self
            .reveals
            .get_mut(member)
            .ok_or(SharingError::BeaconMember(member))? = Some((value, nonce));
        Ok(())
    }

    pub fn finalize(&self, field: &Modulus) -> Result<BeaconOutcome, SharingError> {
        let missing = self.commitments.iter().filter(|c| c.is_none()).count();
        if missing > 0 {
            return Err(SharingError::BeaconIncomplete { missing });
        }
        let mut value = 0u128;
        let mut excluded = Vec::new();
        for (i, (cm, rv)) in self.commitments.iter().zip(&self.reveals).enumerate() {
            match rv {
                Some((v, nonce)) if Some(beacon_commit(*v, nonce)) == *cm && *v < field.value() => {
                    value = field.add(value, *v);
                }
                _ => excluded.push(i),
            }
        }
        Ok(BeaconOutcome { value, excluded })
    }
}
