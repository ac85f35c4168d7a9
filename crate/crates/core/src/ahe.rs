//! Additively homomorphic BFV encryption over a single ciphertext prime.
//!
//! Plaintexts are coefficient vectors mod `t_plain`. Slot 0 carries the round
//! number; the remaining N-1 slots hold fixed-point encoded update entries.

use rand::RngCore;
use thiserror::Error;

use crate::ring::{
    self, ring_add, ring_mul, ring_scalar_mul, ring_sub, sample_poly, NoiseDist, RingError,
    RingParams, RingPoly, COEFF_BYTES, Q120,
};

/// Default plaintext modulus, 2^20 + 7 (prime).
pub const DEFAULT_PLAIN_MODULUS: u64 = (1 << 20) + 7;
/// Default fixed-point scale.
pub const DEFAULT_SCALE: f64 = 1024.0;
/// Tail cut, in standard deviations, used when bounding fresh encryption noise.
pub const NOISE_TAIL_SIGMAS: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AheError {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("update has {len} entries but only {max} slots are available")]
    TooLong { len: usize, max: usize },
    #[error("entry {index} ({value}) exceeds the summation headroom of the plaintext modulus")]
    EncodeOverflow { index: usize, value: f64 },
    #[error("expected {expected} partial decryptions, got {got}")]
    Quorum { expected: usize, got: usize },
    #[error("noise headroom exceeded: {0}")]
    Headroom(String),
    #[error("ciphertexts use different parameters")]
    ParamMismatch,
    #[error("malformed ciphertext: {0}")]
    Decode(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AheParams {
    ring: RingParams,
    plain_modulus: u64,
    delta: u128,
    fresh_noise_bound: u128,
    smudge_lambda: u32,
    max_adds: u64,
    scale: f64,
}

impl AheParams {
    /// Derives `delta = floor(Q / t)` and the fresh-noise bound from the ring.
    ///
    /// The decryption error of a fresh ciphertext is `r·e + e2 - s·e1` with `r`, `s`
    /// ternary and `e`, `e1`, `e2` Gaussian. Taking each Gaussian coefficient below
    /// `6σ` and letting all N products align gives `(2N + 1)·ceil(6σ)`.
    pub fn new(
        ring: RingParams,
        plain_modulus: u64,
        smudge_lambda: u32,
        max_adds: u64,
        scale: f64,
    ) -> Result<Self, AheError> {
        if plain_modulus < 2 {
            return Err(AheError::InvalidParams("t_plain must be at least 2".into()));
        }
        if smudge_lambda == 0 {
            return Err(AheError::InvalidParams("smudge_lambda must be at least 1".into()));
        }
        if max_adds == 0 {
            return Err(AheError::InvalidParams("max_adds must be at least 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(AheError::InvalidParams(format!("bad scale {scale}")));
        }
        let q = ring.q();
        let delta = q / plain_modulus as u128;
        if delta < 2 {
            return Err(AheError::InvalidParams("Q too small for t_plain".into()));
        }
        let tail = (NOISE_TAIL_SIGMAS * NoiseDist::ERROR_STDDEV).ceil() as u128;
        let fresh_noise_bound = (2 * ring.degree() as u128 + 1) * tail;
        let params = Self {
            ring,
            plain_modulus,
            delta,
            fresh_noise_bound,
            smudge_lambda,
            max_adds,
            scale,
        };
        if params.max_adds as u128 * params.fresh_noise_bound >= params.delta / 2 {
            return Err(AheError::Headroom(format!(
                "{} additions of noise {} exceed delta/2",
                params.max_adds, params.fresh_noise_bound
            )));
        }
        Ok(params)
    }

    /// N=4096, 120-bit Q, t=2^20+7, λ=40.
    pub fn desk(max_adds: u64) -> Self {
        Self::with_degree(4096, max_adds)
    }

    pub fn with_degree(degree: usize, max_adds: u64) -> Self {
        let ring = RingParams::new(degree, Q120).expect("valid ring");
        Self::new(ring, DEFAULT_PLAIN_MODULUS, 40, max_adds, DEFAULT_SCALE).expect("valid params")
    }

    pub fn ring(&self) -> &RingParams {
        &self.ring
    }
    pub fn plain_modulus(&self) -> u64 {
        self.plain_modulus
    }
    pub fn delta(&self) -> u128 {
        self.delta
    }
    pub fn fresh_noise_bound(&self) -> u128 {
        self.fresh_noise_bound
    }
    pub fn smudge_lambda(&self) -> u32 {
        self.smudge_lambda
    }
    pub fn max_adds(&self) -> u64 {
        self.max_adds
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    /// Update entries per ciphertext (slot 0 is the round number).
    pub fn slots(&self) -> usize {
        self.ring.degree() - 1
    }

    /// Smudging bound for `max_adds` additions, checked against the decryption
    /// headroom for a committee of `committee` members:
    /// `committee·bound + B_fresh·K < delta/2`.
    pub fn smudging_for_committee(&self, committee: usize) -> Result<u128, AheError> {
        let bound = smudge_bound(self.fresh_noise_bound, self.max_adds, self.smudge_lambda)?;
        let total = (committee as u128)
            .checked_mul(bound)
            .and_then(|x| x.checked_add(self.fresh_noise_bound * self.max_adds as u128))
            .ok_or_else(|| AheError::Headroom("smudging total overflows".into()))?;
        if total >= self.delta / 2 {
            return Err(AheError::Headroom(format!(
                "committee {committee}: {total} >= delta/2 = {}",
                self.delta / 2
            )));
        }
        Ok(bound)
    }

    /// 32-byte digest of the public parameter set.
    pub fn digest(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.ring.degree() as u128).to_le_bytes());
        buf.extend_from_slice(&self.ring.q().to_le_bytes());
        buf.extend_from_slice(&(self.plain_modulus as u128).to_le_bytes());
        buf.extend_from_slice(&self.scale.to_le_bytes());
        crate::hash::sha256(&buf)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub a: RingPoly,
    pub b: RingPoly,
}

impl PublicKey {
    pub fn digest(&self, params: &AheParams) -> [u8; 32] {
        let mut buf = self.a.to_bytes(params.ring());
        self.b.write_bytes(params.ring(), &mut buf);
        crate::hash::sha256(&buf)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecretKey {
    pub s: RingPoly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub c1: RingPoly,
    pub c2: RingPoly,
    pub round_tag: u64,
    pub adds_count: u64,
}

/// Header: N, Q, t_plain as 16-byte fields, round tag and add count as 8-byte fields.
pub const CIPHERTEXT_HEADER_BYTES: usize = 3 * COEFF_BYTES + 2 * 8;

impl Ciphertext {
    pub fn serialized_len(params: &AheParams) -> usize {
        CIPHERTEXT_HEADER_BYTES + 2 * params.ring().serialized_len()
    }

    pub fn to_bytes(&self, params: &AheParams) -> Vec<u8> {
        let ring = params.ring();
        let mut out = Vec::with_capacity(Self::serialized_len(params));
        out.extend_from_slice(&(ring.degree() as u128).to_le_bytes());
        out.extend_from_slice(&ring.q().to_le_bytes());
        out.extend_from_slice(&(params.plain_modulus as u128).to_le_bytes());
        out.extend_from_slice(&self.round_tag.to_le_bytes());
        out.extend_from_slice(&self.adds_count.to_le_bytes());
        self.c1.write_bytes(ring, &mut out);
        self.c2.write_bytes(ring, &mut out);
        out
    }

    pub fn from_bytes(params: &AheParams, bytes: &[u8]) -> Result<Self, AheError> {
        if bytes.len() != Self::serialized_len(params) {
            return Err(AheError::Decode(format!("length {}", bytes.len())));
        }
        let ring = params.ring();
        let n = ring::read_u128(&bytes[0..16]);
        let q = ring::read_u128(&bytes[16..32]);
        let t = ring::read_u128(&bytes[32..48]);
        if n != ring.degree() as u128 || q != ring.q() || t != params.plain_modulus as u128 {
            return Err(AheError::ParamMismatch);
        }
        let round_tag = u64::from_le_bytes(bytes[48..56].try_into().unwrap());
        let adds_count = u64::from_le_bytes(bytes[56..64].try_into().unwrap());
        if adds_count == 0 {
            return Err(AheError::Decode("adds_count must be positive".into()));
        }
        let (c1, used) = RingPoly::from_bytes(ring, &bytes[CIPHERTEXT_HEADER_BYTES..])?;
        let (c2, _) = RingPoly::from_bytes(ring, &bytes[CIPHERTEXT_HEADER_BYTES + used..])?;
        Ok(Self {
            c1,
            c2,
            round_tag,
            adds_count,
        })
    }

    pub fn digest(&self, params: &AheParams) -> [u8; 32] {
        crate::hash::sha256(&self.to_bytes(params))
    }

    pub fn zero(params: &AheParams, round_tag: u64) -> Self {
        Self {
            c1: params.ring().zero(),
            c2: params.ring().zero(),
            round_tag,
            adds_count: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub round_t: u64,
    pub values: Vec<u64>,
    pub scale: f64,
}

impl Plaintext {
    /// All N coefficients, slot 0 first.
    pub fn coeffs(&self) -> Vec<u64> {
        let mut c = Vec::with_capacity(self.values.len() + 1);
        c.push(self.round_t);
        c.extend_from_slice(&self.values);
        c
    }

    pub fn from_coeffs(coeffs: &[u64], scale: f64) -> Self {
        Self {
            round_t: coeffs[0],
            values: coeffs[1..].to_vec(),
            scale,
        }
    }

    /// Centered fixed-point decode of every value slot.
    pub fn decode(&self, plain_modulus: u64) -> Vec<f64> {
        let half = plain_modulus.div_ceil(2);
        self.values
            .iter()
            .map(|&v| {
                let c = if v >= half {
                    v as i64 - plain_modulus as i64
                } else {
                    v as i64
                };
                c as f64 / self.scale
            })
            .collect()
    }
}

/// Secret randomness of one encryption; the witness handed to the attestation layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncRandomness {
    pub r_poly: RingPoly,
    pub e1: RingPoly,
    pub e2: RingPoly,
}

pub fn keygen<R: RngCore + ?Sized>(params: &AheParams, rng: &mut R) -> (PublicKey, SecretKey) {
    let ring = params.ring();
    let s = sample_poly(&NoiseDist::Ternary, ring, rng);
    let a = sample_poly(&NoiseDist::UniformFull, ring, rng);
    let e = sample_poly(&NoiseDist::error(), ring, rng);
    let b = ring_add(&ring_mul(&a, &s, ring).unwrap(), &e, ring).unwrap();
    (PublicKey { a, b }, SecretKey { s })
}

/// Fixed-point encode with the round number in slot 0. Unused slots are zero.
///
/// Entries are truncated toward zero, so the decoded vector never has a larger
/// norm than the input and a clipped update still passes the bound check.
pub fn encode(round_t: u64, update: &[f64], params: &AheParams) -> Result<Plaintext, AheError> {
    let slots = params.slots();
    if update.len() > slots {
        return Err(AheError::TooLong {
            len: update.len(),
            max: slots,
        });
    }
    let t = params.plain_modulus;
    let limit = t as f64 / (2.0 * params.max_adds as f64);
    let mut values = vec![0u64; slots];
    for (i, &x) in update.iter().enumerate() {
        let scaled = x * params.scale;
        if !scaled.is_finite() || scaled.abs() >= limit {
            return Err(AheError::EncodeOverflow { index: i, value: x });
        }
        let v = scaled.trunc() as i64;
        values[i] = v.rem_euclid(t as i64) as u64;
    }
    Ok(Plaintext {
        round_t: round_t % t,
        values,
        scale: params.scale,
    })
}

/// `delta · m` as a ring element.
pub fn scale_message(pt: &Plaintext, params: &AheParams) -> RingPoly {
    let ring = params.ring();
    let m = ring.modulus();
    let coeffs = pt
        .coeffs()
        .into_iter()
        .map(|c| m.mul(c as u128, params.delta))
        .collect();
    ring.poly(coeffs).expect("plaintext has N coefficients")
}

fn check_plaintext(pt: &Plaintext, params: &AheParams) -> Result<(), AheError> {
    if pt.values.len() != params.slots() {
        return Err(AheError::TooLong {
            len: pt.values.len(),
            max: params.slots(),
        });
    }
    if pt.coeffs().iter().any(|&c| c >= params.plain_modulus) {
        return Err(AheError::InvalidParams("plaintext not reduced mod t".into()));
    }
    Ok(())
}

pub fn encrypt<R: RngCore + ?Sized>(
    pk: &PublicKey,
    pt: &Plaintext,
    params: &AheParams,
    rng: &mut R,
) -> Result<(Ciphertext, EncRandomness), AheError> {
    let ring = params.ring();
    let randomness = EncRandomness {
        r_poly: sample_poly(&NoiseDist::Ternary, ring, rng),
        e1: sample_poly(&NoiseDist::error(), ring, rng),
        e2: sample_poly(&NoiseDist::error(), ring, rng),
    };
    let ct = encrypt_with(pk, pt, &randomness, params)?;
    Ok((ct, randomness))
}

/// Deterministic encryption under caller-supplied randomness:
/// `c1 = a·r + e1`, `c2 = b·r + e2 + delta·m`.
pub fn encrypt_with(
    pk: &PublicKey,
    pt: &Plaintext,
    rnd: &EncRandomness,
    params: &AheParams,
) -> Result<Ciphertext, AheError> {
    check_plaintext(pt, params)?;
    let ring = params.ring();
    let c1 = ring_add(&ring_mul(&pk.a, &rnd.r_poly, ring)?, &rnd.e1, ring)?;
    let c2 = ring_add(
        &ring_add(&ring_mul(&pk.b, &rnd.r_poly, ring)?, &rnd.e2, ring)?,
        &scale_message(pt, params),
        ring,
    )?;
    Ok(Ciphertext {
        c1,
        c2,
        round_tag: pt.round_t,
        adds_count: 1,
    })
}

/// Component-wise sum. Round tags are not compared here; leaf verification owns that.
pub fn ct_add(x: &Ciphertext, y: &Ciphertext, params: &AheParams) -> Result<Ciphertext, AheError> {
    let ring = params.ring();
    Ok(Ciphertext {
        c1: ring_add(&x.c1, &y.c1, ring)?,
        c2: ring_add(&x.c2, &y.c2, ring)?,
        round_tag: x.round_tag,
        adds_count: x.adds_count + y.adds_count,
    })
}

/// Scales both components by `k`. Noise grows by the same factor, which the
/// add counter tracks.
pub fn ct_scalar_mul(x: &Ciphertext, k: u64, params: &AheParams) -> Ciphertext {
    let ring = params.ring();
    Ciphertext {
        c1: ring_scalar_mul(&x.c1, k as u128, ring),
        c2: ring_scalar_mul(&x.c2, k as u128, ring),
        round_tag: x.round_tag,
        adds_count: x.adds_count.saturating_mul(k.max(1)),
    }
}

/// `round(t·x / Q) mod t` for `x ∈ [0, Q)` with ties rounded up, computed
/// exactly without 256-bit division by splitting `x = qd·delta + rem`.
fn round_to_plain(x: u128, params: &AheParams) -> u64 {
    let q = params.ring.q() as i128;
    let t = params.plain_modulus as i128;
    let delta = params.delta;
    let rho = q - t * delta as i128;
    let qd = (x / delta) as i128;
    let rem = (x % delta) as i128;
    let num = t * rem - qd * rho;
    let m = qd + (2 * num + q).div_euclid(2 * q);
    m.rem_euclid(t) as u64
}

fn round_poly(x: &RingPoly, params: &AheParams) -> Plaintext {
    let coeffs: Vec<u64> = x.coeffs().iter().map(|&c| round_to_plain(c, params)).collect();
    Plaintext::from_coeffs(&coeffs, params.scale)
}

/// `round((c2 - c1·s)·t/Q)`. Noise overflow is silent and surfaces as a wrong plaintext.
pub fn decrypt(sk: &SecretKey, ct: &Ciphertext, params: &AheParams) -> Result<Plaintext, AheError> {
    let ring = params.ring();
    let x = ring_sub(&ct.c2, &ring_mul(&ct.c1, &sk.s, ring)?, ring)?;
    Ok(round_poly(&x, params))
}

/// `‖c2 - c1·s - scaled_message‖∞`; `scaled_message` is `Σ delta·m_i` over the summed inputs.
pub fn residual_noise(
    sk: &SecretKey,
    ct: &Ciphertext,
    scaled_message: &RingPoly,
    params: &AheParams,
) -> Result<u128, AheError> {
    let ring = params.ring();
    let x = ring_sub(&ct.c2, &ring_mul(&ct.c1, &sk.s, ring)?, ring)?;
    Ok(ring_sub(&x, scaled_message, ring)?.inf_norm(ring))
}

/// `2^λ · B_fresh · K`.
pub fn smudge_bound(fresh_noise_bound: u128, adds: u64, smudge_lambda: u32) -> Result<u128, AheError> {
    if adds == 0 {
        return Err(AheError::InvalidParams("K must be at least 1".into()));
    }
    1u128
        .checked_shl(smudge_lambda)
        .filter(|_| smudge_lambda < 128)
        .and_then(|p| p.checked_mul(fresh_noise_bound))
        .and_then(|x| x.checked_mul(adds as u128))
        .ok_or_else(|| AheError::Headroom("smudging bound overflows 128 bits".into()))
}

/// One member's share of `c1·s`: `lagrange·(c1·share) + e` with `e` uniform in `[-bound, bound]`.
pub fn partial_decrypt<R: RngCore + ?Sized>(
    share: &RingPoly,
    lagrange: u128,
    c1: &RingPoly,
    bound: u128,
    params: &AheParams,
    rng: &mut R,
) -> Result<RingPoly, AheError> {
    let ring = params.ring();
    let weighted = ring_scalar_mul(&ring_mul(c1, share, ring)?, lagrange, ring);
    if bound == 0 {
        return Ok(weighted);
    }
    let dist = NoiseDist::UniformBounded { bound };
    dist.validate(ring)?;
    Ok(ring_add(&weighted, &sample_poly(&dist, ring, rng), ring)?)
}

/// Rounds `c2 - Σ partials`; `quorum` is the number of partials the threshold needs.
pub fn combine_partials(
    c2: &RingPoly,
    partials: &[RingPoly],
    quorum: usize,
    params: &AheParams,
) -> Result<Plaintext, AheError> {
    if partials.len() != quorum {
        return Err(AheError::Quorum {
            expected: quorum,
            got: partials.len(),
        });
    }
    let ring = params.ring();
    let mut acc = ring.zero();
    for p in partials {
        acc = ring_add(&acc, p, ring)?;
    }
    Ok(round_poly(&ring_sub(c2, &acc, ring)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::Q61;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn small() -> AheParams {
        AheParams::with_degree(64, 1024)
    }

    fn random_pt(params: &AheParams, round: u64, rng: &mut ChaCha20Rng) -> Plaintext {
        let t = params.plain_modulus();
        Plaintext {
            round_t: round,
            values: (0..params.slots()).map(|_| rng.gen_range(0..t)).collect(),
            scale: params.scale(),
        }
    }

    #[test]
    fn params_validation() {
        let ring = RingParams::new(64, Q61).unwrap();
        assert!(AheParams::new(ring.clone(), 1, 40, 10, 1024.0).is_err());
        assert!(AheParams::new(ring.clone(), 65537, 0, 10, 1024.0).is_err());
        let p = AheParams::new(ring, 65537, 40, 10, 1024.0).unwrap();
        assert!(p.delta() * p.plain_modulus() as u128 <= p.ring().q());
        let ring = RingParams::new(8, 97).unwrap();
        assert!(AheParams::new(ring, 65537, 40, 1, 1.0).is_err());
    }

    #[test]
    fn keygen_deterministic_and_noise_small() {
        let params = AheParams::with_degree(1024, 16);
        let (pk1, sk1) = keygen(&params, &mut ChaCha20Rng::seed_from_u64(1));
        let (pk2, sk2) = keygen(&params, &mut ChaCha20Rng::seed_from_u64(1));
        assert_eq!((&pk1, &sk1), (&pk2, &sk2));
        let ring = params.ring();
        assert!(sk1.s.inf_norm(ring) <= 1);
        let e = ring_sub(&pk1.b, &ring_mul(&pk1.a, &sk1.s, ring).unwrap(), ring).unwrap();
        let within = e
            .centered(ring)
            .iter()
            .filter(|c| (c.abs() as f64) <= 6.0 * 3.2)
            .count();
        assert!(within as f64 >= 0.9999 * 1024.0 - 1.0);
    }

    #[test]
    fn encode_decode() {
        let params = small();
        let pt = encode(5, &[], &params).unwrap();
        assert_eq!(pt.round_t, 5);
        assert!(pt.values.iter().all(|&v| v == 0));

        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..63).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let back = encode(7, &x, &params).unwrap().decode(params.plain_modulus());
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / params.scale());
        }
        assert!(matches!(
            encode(1, &vec![0.0; 64], &params),
            Err(AheError::TooLong { len: 64, max: 63 })
        ));
        assert!(matches!(
            encode(1, &[1e6], &params),
            Err(AheError::EncodeOverflow { index: 0, .. })
        ));
    }

    #[test]
    fn plaintext_sum_of_encodings() {
        let params = AheParams::with_degree(64, 100);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let t = params.plain_modulus();
        let mut acc = vec![0u64; 63];
        let mut real = vec![0f64; 63];
        for _ in 0..100 {
            let x: Vec<f64> = (0..63).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let pt = encode(1, &x, &params).unwrap();
            for i in 0..63 {
                acc[i] = (acc[i] + pt.values[i]) % t;
                real[i] += x[i];
            }
        }
        let sum = Plaintext {
            round_t: 100,
            values: acc,
            scale: params.scale(),
        }
        .decode(t);
        for (a, b) in sum.iter().zip(&real) {
            assert!((a - b).abs() <= 100.0 / params.scale());
        }
    }

    #[test]
    fn roundtrip_and_noise_bound() {
        let params = small();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (pk, sk) = keygen(&params, &mut rng);
        for _ in 0..200 {
            let pt = random_pt(&params, 3, &mut rng);
            let (ct, _) = encrypt(&pk, &pt, &params, &mut rng).unwrap();
            assert_eq!(decrypt(&sk, &ct, &params).unwrap(), pt);
            let noise = residual_noise(&sk, &ct, &scale_message(&pt, &params), &params).unwrap();
            assert!(noise <= params.fresh_noise_bound());
        }
        let zero = encode(0, &[], &params).unwrap();
        let (ct, _) = encrypt(&pk, &zero, &params, &mut rng).unwrap();
        assert_eq!(decrypt(&sk, &ct, &params).unwrap(), zero);
    }

    #[test]
    fn encryption_is_deterministic_per_seed() {
        let params = small();
        let (pk, _) = keygen(&params, &mut ChaCha20Rng::seed_from_u64(5));
        let pt = encode(1, &[0.5], &params).unwrap();
        let a = encrypt(&pk, &pt, &params, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        let b = encrypt(&pk, &pt, &params, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(encrypt_with(&pk, &pt, &a.1, &params).unwrap(), a.0);
    }

    #[test]
    fn homomorphic_add_and_scalar() {
        let params = small();
        let t = params.plain_modulus();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (pk, sk) = keygen(&params, &mut rng);
        let m1 = random_pt(&params, 2, &mut rng);
        let m2 = random_pt(&params, 2, &mut rng);
        let (c1, _) = encrypt(&pk, &m1, &params, &mut rng).unwrap();
        let (c2, _) = encrypt(&pk, &m2, &params, &mut rng).unwrap();
        let sum = ct_add(&c1, &c2, &params).unwrap();
        assert_eq!(sum.adds_count, 2);
        let want: Vec<u64> = m1.coeffs().iter().zip(m2.coeffs()).map(|(a, b)| (a + b) % t).collect();
        assert_eq!(decrypt(&sk, &sum, &params).unwrap().coeffs(), want);

        let (z, _) = encrypt(&pk, &encode(2, &[], &params).unwrap(), &params, &mut rng).unwrap();
        let with_zero = decrypt(&sk, &ct_add(&c1, &z, &params).unwrap(), &params).unwrap();
        assert_eq!(with_zero.values, m1.values);

        assert_eq!(ct_scalar_mul(&c1, 1, &params).c1, c1.c1);
        let zeroed = decrypt(&sk, &ct_scalar_mul(&c1, 0, &params), &params).unwrap();
        assert!(zeroed.coeffs().iter().all(|&v| v == 0));
        let tripled = decrypt(&sk, &ct_scalar_mul(&c1, 3, &params), &params).unwrap();
        let want: Vec<u64> = m1.coeffs().iter().map(|a| a * 3 % t).collect();
        assert_eq!(tripled.coeffs(), want);
        let negated = decrypt(&sk, &ct_scalar_mul(&c1, t - 1, &params), &params).unwrap();
        let want: Vec<u64> = m1.coeffs().iter().map(|a| (t - a) % t).collect();
        assert_eq!(negated.coeffs(), want);
    }

    #[test]
    fn ciphertext_wire_format() {
        let params = small();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (pk, _) = keygen(&params, &mut rng);
        let (ct, _) = encrypt(&pk, &encode(9, &[0.25], &params).unwrap(), &params, &mut rng).unwrap();
        let bytes = ct.to_bytes(&params);
        assert_eq!(bytes.len(), Ciphertext::serialized_len(&params));
        assert_eq!(u64::from_le_bytes(bytes[48..56].try_into().unwrap()), 9);
        assert_eq!(Ciphertext::from_bytes(&params, &bytes).unwrap(), ct);
        assert!(Ciphertext::from_bytes(&AheParams::with_degree(128, 4), &bytes).is_err());
        // N=4096: 2·N·16 coefficient bytes plus headers
        let desk = AheParams::desk(1024);
        assert_eq!(
            Ciphertext::serialized_len(&desk) - CIPHERTEXT_HEADER_BYTES - 4 * COEFF_BYTES,
            131072
        );
    }

    #[test]
    fn smudge_bound_formula() {
        assert_eq!(smudge_bound(64, 1, 0).unwrap(), 64);
        assert_eq!(smudge_bound(64, 1024, 40).unwrap(), 64 * 1024 * (1u128 << 40));
        assert!(smudge_bound(64, 1024, 127).is_err());
        assert!(smudge_bound(64, 0, 1).is_err());
        let desk = AheParams::desk(1024);
        assert!(desk.smudging_for_committee(45).is_ok());
        let tight = AheParams::new(RingParams::new(64, Q61).unwrap(), 65537, 40, 4, 1.0).unwrap();
        assert!(tight.smudging_for_committee(45).is_err());
    }

    #[test]
    fn partial_decrypt_degenerate_single_member() {
        let params = small();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (pk, sk) = keygen(&params, &mut rng);
        let pt = random_pt(&params, 1, &mut rng);
        let (ct, _) = encrypt(&pk, &pt, &params, &mut rng).unwrap();
        let part = partial_decrypt(&sk.s, 1, &ct.c1, 0, &params, &mut rng).unwrap();
        assert_eq!(part, ring_mul(&ct.c1, &sk.s, params.ring()).unwrap());
        assert_eq!(combine_partials(&ct.c2, &[part.clone()], 1, &params).unwrap(), pt);
        assert!(matches!(
            combine_partials(&ct.c2, &[part], 2, &params),
            Err(AheError::Quorum { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn smudging_error_stays_in_bound() {
        let params = small();
        let ring = params.ring();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let (pk, sk) = keygen(&params, &mut rng);
        let (ct, _) = encrypt(&pk, &random_pt(&params, 1, &mut rng), &params, &mut rng).unwrap();
        let bound = 1u128 << 50;
        let part = partial_decrypt(&sk.s, 1, &ct.c1, bound, &params, &mut rng).unwrap();
        let err = ring_sub(&part, &ring_mul(&ct.c1, &sk.s, ring).unwrap(), ring).unwrap();
        assert!(err.inf_norm(ring) <= bound);
    }

    #[test]
    fn rounding_matches_wide_reference() {
        use num_bigint::BigInt;
        let params = small();
        let q = params.ring().q();
        let t = params.plain_modulus() as u128;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut xs: Vec<u128> = (0..2000).map(|_| rng.gen_range(0..q)).collect();
        xs.extend([0, 1, q - 1, q / 2, params.delta() / 2, params.delta() / 2 + 1]);
        for x in xs {
            // floor((2·t·x + Q) / 2Q) mod t
            let num = BigInt::from(2u8) * BigInt::from(t) * BigInt::from(x) + BigInt::from(q);
            let want: BigInt = (num / (BigInt::from(2u8) * BigInt::from(q))) % BigInt::from(t);
            assert_eq!(round_to_plain(x, &params).to_string(), want.to_string(), "x={x}");
        }
    }
}
