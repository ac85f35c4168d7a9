//! Arithmetic in R_Q = Z_Q[X]/(X^N + 1) and the coefficient samplers BFV needs.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::Modulus;

/// 120-bit prime with Q ≡ 1 mod 2^14, so the negacyclic transform exists for N ≤ 8192.
pub const Q120: u128 = 1329227995784915872903807060279345153;
/// 61-bit prime with Q ≡ 1 mod 2^14, for the medium test profile.
pub const Q61: u128 = 2305843009213317121;
/// Tiny prime for exhaustive tests; supports the transform for N ≤ 16.
pub const Q97: u128 = 97;

/// Bytes per serialized coefficient / header field.
pub const COEFF_BYTES: usize = 16;
/// Ciphertext moduli stay below 2^125: exact decryption rounding doubles a
/// signed residue of size up to Q inside an i128.
pub const MAX_RING_MODULUS_BITS: u32 = 125;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RingError {
    #[error("degree {0} is not a power of two")]
    DegreeNotPowerOfTwo(usize),
    #[error("modulus {0} is not an odd prime below 2^125")]
    BadModulus(u128),
    #[error("modulus {q} must exceed 2N = {two_n}")]
    ModulusTooSmall { q: u128, two_n: usize },
    #[error("dimension mismatch: expected {expected} coefficients, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("polynomials belong to different rings")]
    ParamMismatch,
    #[error("evaluation point {0} is not in [0, Q)")]
    PointOutOfRange(u128),
    #[error("malformed encoding: {0}")]
    Decode(String),
}

/// Ring shape plus the transform tables when Q admits a 2N-th root of unity.
#[derive(Clone)]
pub struct RingParams {
    degree: usize,
    modulus: Modulus,
    ntt: Option<Arc<NttTables>>,
}

impl fmt::Debug for RingParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RingParams")
            .field("degree", &self.degree)
            .field("modulus", &self.modulus.value())
            .field("ntt", &self.ntt.is_some())
            .finish()
    }
}

impl PartialEq for RingParams {
    fn eq(&self, other: &Self) -> bool {
        self.degree == other.degree && self.modulus == other.modulus
    }
}
impl Eq for RingParams {}

impl RingParams {
    pub fn new(degree: usize, q: u128) -> Result<Self, RingError> {
        if degree == 0 || !degree.is_power_of_two() {
            return Err(RingError::DegreeNotPowerOfTwo(degree));
        }
        let modulus = Modulus::new(q).ok_or(RingError::BadModulus(q))?;
        if modulus.bits() > MAX_RING_MODULUS_BITS || !modulus.is_probable_prime() {
            return Err(RingError::BadModulus(q));
        }
        if q <= 2 * degree as u128 {
            return Err(RingError::ModulusTooSmall { q, two_n: 2 * degree });
        }
        let ntt = NttTables::new(degree, modulus).map(Arc::new);
        Ok(Self {
            degree,
            modulus,
            ntt,
        })
    }

    /// N=4096 over the 120-bit prime.
    pub fn desk() -> Self {
        Self::new(4096, Q120).expect("desk ring parameters are valid")
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn q(&self) -> u128 {
        self.modulus.value()
    }

    #[inline]
    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn has_fast_mul(&self) -> bool {
        self.ntt.is_some()
    }

    pub fn zero(&self) -> RingPoly {
        RingPoly {
            coeffs: vec![0; self.degree],
        }
    }

    pub fn one(&self) -> RingPoly {
        self.monomial(0)
    }

    /// X^k for k < N.
    pub fn monomial(&self, k: usize) -> RingPoly {
        let mut p = self.zero();
        p.coeffs[k] = 1;
        p
    }

    /// Builds a polynomial from raw residues, reducing each mod Q.
    pub fn poly(&self, coeffs: Vec<u128>) -> Result<RingPoly, RingError> {
        if coeffs.len() != self.degree {
            return Err(RingError::Dimension {
                expected: self.degree,
                got: coeffs.len(),
            });
        }
        let q = self.q();
        Ok(RingPoly {
            coeffs: coeffs.into_iter().map(|c| c % q).collect(),
        })
    }

    pub fn poly_from_signed(&self, coeffs: &[i128]) -> Result<RingPoly, RingError> {
        if coeffs.len() != self.degree {
            return Err(RingError::Dimension {
                expected: self.degree,
                got: coeffs.len(),
            });
        }
        Ok(RingPoly {
            coeffs: coeffs.iter().map(|&c| self.modulus.from_i128(c)).collect(),
        })
    }

    pub(crate) fn check(&self, a: &RingPoly) -> Result<(), RingError> {
        if a.coeffs.len() != self.degree {
            return Err(RingError::Dimension {
                expected: self.degree,
                got: a.coeffs.len(),
            });
        }
        Ok(())
    }

    /// Bytes taken by one serialized polynomial.
    pub fn serialized_len(&self) -> usize {
        2 * COEFF_BYTES + self.degree * COEFF_BYTES
    }
}

/// Coefficient vector in R_Q; `coeffs[i]` multiplies X^i and lies in [0, Q).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingPoly {
    coeffs: Vec<u128>,
}

impl RingPoly {
    pub fn coeffs(&self) -> &[u128] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    pub fn centered(&self, p: &RingParams) -> Vec<i128> {
        self.coeffs.iter().map(|&c| p.modulus.centered(c)).collect()
    }

    /// Infinity norm of the centered representative.
    pub fn inf_norm(&self, p: &RingParams) -> u128 {
        self.coeffs
            .iter()
            .map(|&c| p.modulus.centered(c).unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    /// Little-endian: N (16 bytes), Q (16 bytes), then each coefficient in 16 bytes.
    pub fn to_bytes(&self, p: &RingParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(p.serialized_len());
        self.write_bytes(p, &mut out);
        out
    }

    pub fn write_bytes(&self, p: &RingParams, out: &mut Vec<u8>) {
        out.extend_from_slice(&(p.degree as u128).to_le_bytes());
        out.extend_from_slice(&p.q().to_le_bytes());
        for c in &self.coeffs {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }

    /// Parses one polynomial from the front of `bytes`, returning it and the bytes consumed.
    pub fn from_bytes(p: &RingParams, bytes: &[u8]) -> Result<(Self, usize), RingError> {
        let need = p.serialized_len();
        if bytes.len() < need {
            return Err(RingError::Decode(format!(
                "need {need} bytes, have {}",
                bytes.len()
            )));
        }
        let n = read_u128(&bytes[0..16]);
        let q = read_u128(&bytes[16..32]);
        if n != p.degree as u128 || q != p.q() {
            return Err(RingError::ParamMismatch);
        }
        let mut coeffs = Vec::with_capacity(p.degree);
        for chunk in bytes[32..need].chunks_exact(COEFF_BYTES) {
            let c = read_u128(chunk);
            if c >= q {
                return Err(RingError::Decode(format!("coefficient {c} not reduced")));
            }
            coeffs.push(c);
        }
        Ok((Self { coeffs }, need))
    }
}

pub(crate) fn read_u128(b: &[u8]) -> u128 {
    let mut buf = [0u8; 16];
    buf.copy_from_slice(&b[..16]);
    u128::from_le_bytes(buf)
}

pub fn ring_add(a: &RingPoly, b: &RingPoly, p: &RingParams) -> Result<RingPoly, RingError> {
    p.check(a)?;
    p.check(b)?;
    let m = &p.modulus;
    Ok(RingPoly {
        coeffs: a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| m.add(x, y))
            .collect(),
    })
}

pub fn ring_sub(a: &RingPoly, b: &RingPoly, p: &RingParams) -> Result<RingPoly, RingError> {
    p.check(a)?;
    p.check(b)?;
    let m = &p.modulus;
    Ok(RingPoly {
        coeffs: a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(&x, &y)| m.sub(x, y))
            .collect(),
    })
}

pub fn ring_neg(a: &RingPoly, p: &RingParams) -> RingPoly {
    RingPoly {
        coeffs: a.coeffs.iter().map(|&x| p.modulus.neg(x)).collect(),
    }
}

pub fn ring_scalar_mul(a: &RingPoly, k: u128, p: &RingParams) -> RingPoly {
    let m = &p.modulus;
    let k_m = m.to_mont(k % m.value());
    RingPoly {
        coeffs: a.coeffs.iter().map(|&x| m.mul_mont(x, k_m)).collect(),
    }
}

/// Negacyclic product; uses the transform when available.
pub fn ring_mul(a: &RingPoly, b: &RingPoly, p: &RingParams) -> Result<RingPoly, RingError> {
    p.check(a)?;
    p.check(b)?;
    Ok(match &p.ntt {
        Some(t) => t.mul(a, b),
        None => schoolbook_mul(a, b, p),
    })
}

/// O(N^2) negacyclic convolution. Reference path for the transform.
pub fn ring_mul_schoolbook(
    a: &RingPoly,
    b: &RingPoly,
    p: &RingParams,
) -> Result<RingPoly, RingError> {
    p.check(a)?;
    p.check(b)?;
    Ok(schoolbook_mul(a, b, p))
}

fn schoolbook_mul(a: &RingPoly, b: &RingPoly, p: &RingParams) -> RingPoly {
    let n = p.degree;
    let m = &p.modulus;
    let mut out = vec![0u128; n];
    for (i, &ai) in a.coeffs.iter().enumerate() {
        if ai == 0 {
            continue;
        }
        let ai_m = m.to_mont(ai);
        for (j, &bj) in b.coeffs.iter().enumerate() {
            let prod = m.mul_mont(bj, ai_m);
            let k = i + j;
            if k < n {
                out[k] = m.add(out[k], prod);
            } else {
                out[k - n] = m.sub(out[k - n], prod);
            }
        }
    }
    RingPoly { coeffs: out }
}

/// Horner evaluation of `a` at `point`.
pub fn ring_eval(a: &RingPoly, point: u128, p: &RingParams) -> Result<u128, RingError> {
    p.check(a)?;
    if point >= p.q() {
        return Err(RingError::PointOutOfRange(point));
    }
    Ok(eval_unchecked(a, point, &p.modulus))
}

pub(crate) fn eval_unchecked(a: &RingPoly, point: u128, m: &Modulus) -> u128 {
    let x_m = m.to_mont(point);
    a.coeffs
        .iter()
        .rev()
        .fold(0u128, |acc, &c| m.add(m.mul_mont(acc, x_m), c))
}

/// Coefficient distributions used by key generation, encryption and smudging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseDist {
    UniformFull,
    Ternary,
    DiscreteGaussian { stddev: f64 },
    UniformBounded { bound: u128 },
}

impl NoiseDist {
    pub const ERROR_STDDEV: f64 = 3.2;

    pub fn error() -> Self {
        NoiseDist::DiscreteGaussian {
            stddev: Self::ERROR_STDDEV,
        }
    }

    pub fn validate(&self, p: &RingParams) -> Result<(), RingError> {
        match *self {
            NoiseDist::DiscreteGaussian { stddev } if !(stddev > 0.0 && stddev.is_finite()) => {
                Err(RingError::Decode(format!("invalid gaussian stddev {stddev}")))
            }
            NoiseDist::UniformBounded { bound } if bound == 0 || bound > (p.q() - 1) / 2 => Err(
                RingError::Decode(format!("bound {bound} outside [1, (Q-1)/2]")),
            ),
            _ => Ok(()),
        }
    }
}

/// Tail cut for the Gaussian table, in standard deviations. Mass beyond it is below 2^-70.
pub const GAUSSIAN_TAIL_SIGMAS: f64 = 10.0;

/// Cumulative table over `[-tail, tail]` for one standard deviation.
struct Cdt {
    tail: i64,
    cumulative: Vec<f64>,
}

impl Cdt {
    fn new(stddev: f64) -> Self {
        let tail = (GAUSSIAN_TAIL_SIGMAS * stddev).ceil() as i64;
        let weights: Vec<f64> = (-tail..=tail)
            .map(|x| (-((x * x) as f64) / (2.0 * stddev * stddev)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self { tail, cumulative }
    }

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.gen();
        let idx = self.cumulative.partition_point(|&c| c < u);
        idx.min(self.cumulative.len() - 1) as i64 - self.tail
    }
}

/// i.i.d. coefficients from `dist`, reduced mod Q.
pub fn sample_poly<R: RngCore + ?Sized>(dist: &NoiseDist, p: &RingParams, rng: &mut R) -> RingPoly {
    let n = p.degree;
    let m = &p.modulus;
    let q = p.q();
    let coeffs = match *dist {
        NoiseDist::UniformFull => (0..n).map(|_| rng.gen_range(0..q)).collect(),
        NoiseDist::Ternary => (0..n)
            .map(|_| m.from_i128(rng.gen_range(-1i128..=1)))
            .collect(),
        NoiseDist::DiscreteGaussian { stddev } => {
            let cdt = Cdt::new(stddev);
            (0..n).map(|_| m.from_i128(cdt.sample(rng) as i128)).collect()
        }
        NoiseDist::UniformBounded { bound } => {
            let b = bound as i128;
            (0..n).map(|_| m.from_i128(rng.gen_range(-b..=b))).collect()
        }
    };
    RingPoly { coeffs }
}

/// Negacyclic number-theoretic transform tables (Cooley-Tukey forward,
/// Gentleman-Sande inverse, twiddles in bit-reversed order and Montgomery form).
struct NttTables {
    n: usize,
    modulus: Modulus,
    psi_rev_m: Vec<u128>,
    psi_inv_rev_m: Vec<u128>,
    n_inv_m: u128,
}

impl NttTables {
    fn new(n: usize, modulus: Modulus) -> Option<Self> {
        let q = modulus.value();
        let two_n = 2 * n as u128;
        if (q - 1) % two_n != 0 {
            return None;
        }
        let psi = primitive_root_2n(n, &modulus)?;
        let psi_inv = modulus.inv(psi)?;
        let bits = n.trailing_zeros();
        let mut psi_rev_m = vec![0; n];
        let mut psi_inv_rev_m = vec![0; n];
        let (mut pw, mut pw_inv) = (1u128, 1u128);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev_m[r] = modulus.to_mont(pw);
            psi_inv_rev_m[r] = modulus.to_mont(pw_inv);
            pw = modulus.mul(pw, psi);
            pw_inv = modulus.mul(pw_inv, psi_inv);
        }
        let n_inv_m = modulus.to_mont(modulus.inv(n as u128)?);
        Some(Self {
            n,
            modulus,
            psi_rev_m,
            psi_inv_rev_m,
            n_inv_m,
        })
    }

    fn forward(&self, a: &mut [u128]) {
        let m_ = &self.modulus;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t /= 2;
            for i in 0..m {
                let j1 = 2 * i * t;
                let s = self.psi_rev_m[m + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = m_.mul_mont(a[j + t], s);
                    a[j] = m_.add(u, v);
                    a[j + t] = m_.sub(u, v);
                }
            }
            m *= 2;
        }
    }

    fn inverse(&self, a: &mut [u128]) {
        let m_ = &self.modulus;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m / 2;
            let mut j1 = 0;
            for i in 0..h {
                let s = self.psi_inv_rev_m[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = m_.add(u, v);
                    a[j + t] = m_.mul_mont(m_.sub(u, v), s);
                }
                j1 += 2 * t;
            }
            t *= 2;
            m = h;
        }
        for x in a.iter_mut() {
            *x = m_.mul_mont(*x, self.n_inv_m);
        }
    }

    fn mul(&self, a: &RingPoly, b: &RingPoly) -> RingPoly {
        let mut fa = a.coeffs.clone();
        let mut fb = b.coeffs.clone();
        self.forward(&mut fa);
        self.forward(&mut fb);
        let m = &self.modulus;
        for (x, y) in fa.iter_mut().zip(&fb) {
            *x = m.mul(*x, *y);
        }
        self.inverse(&mut fa);
        RingPoly { coeffs: fa }
    }
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

/// A primitive 2N-th root of unity ψ (so ψ^N = -1).
fn primitive_root_2n(n: usize, m: &Modulus) -> Option<u128> {
    let q = m.value();
    let exp = (q - 1) / (2 * n as u128);
    (2u128..10_000).find_map(|x| {
        let psi = m.pow(x, exp);
        (m.pow(psi, n as u128) == q - 1).then_some(psi)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_traits::{Signed, Zero};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn p97() -> RingParams {
        RingParams::new(8, Q97).unwrap()
    }

    fn rand_poly(p: &RingParams, rng: &mut ChaCha20Rng) -> RingPoly {
        sample_poly(&NoiseDist::UniformFull, p, rng)
    }

    fn big_mod(x: BigInt, q: u128) -> u128 {
        let q = BigInt::from(q);
        let r = ((x % &q) + &q) % &q;
        r.to_string().parse().unwrap()
    }

    /// Independent convolution over unbounded integers, wrapped with X^N = -1.
    fn oracle_mul(a: &RingPoly, b: &RingPoly, q: u128) -> Vec<u128> {
        let n = a.len();
        let mut acc = vec![BigInt::zero(); n];
        for i in 0..n {
            for j in 0..n {
                let prod = BigInt::from(a.coeffs()[i]) * BigInt::from(b.coeffs()[j]);
                if i + j < n {
                    acc[i + j] += prod;
                } else {
                    acc[i + j - n] -= prod;
                }
            }
        }
        acc.into_iter().map(|x| big_mod(x, q)).collect()
    }

    fn oracle_eval(a: &RingPoly, r: u128, q: u128) -> u128 {
        let mut total = BigInt::zero();
        let mut pw = BigInt::from(1);
        for &c in a.coeffs() {
            total += BigInt::from(c) * &pw;
            pw *= BigInt::from(r);
        }
        big_mod(total, q)
    }

    #[test]
    fn rejects_bad_params() {
        assert_eq!(
            RingParams::new(6, Q97).unwrap_err(),
            RingError::DegreeNotPowerOfTwo(6)
        );
        assert!(matches!(
            RingParams::new(64, Q97),
            Err(RingError::ModulusTooSmall { .. })
        ));
        assert!(matches!(RingParams::new(8, 91), Err(RingError::BadModulus(91))));
    }

    #[test]
    fn add_identity_and_inverse() {
        let p = p97();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = rand_poly(&p, &mut rng);
        assert_eq!(ring_add(&a, &p.zero(), &p).unwrap(), a);
        let inv = p
            .poly(a.coeffs().iter().map(|&c| (97 - c) % 97).collect())
            .unwrap();
        assert!(ring_add(&a, &inv, &p).unwrap().is_zero());
    }

    #[test]
    fn add_matches_big_integer_oracle() {
        let p = p97();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            let sum = ring_add(&a, &b, &p).unwrap();
            for i in 0..8 {
                let want = big_mod(BigInt::from(a.coeffs()[i]) + BigInt::from(b.coeffs()[i]), 97);
                assert_eq!(sum.coeffs()[i], want);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = p97();
        let other = RingParams::new(16, Q97).unwrap();
        assert!(matches!(
            ring_add(&p.zero(), &other.zero(), &p),
            Err(RingError::Dimension { expected: 8, got: 16 })
        ));
        assert!(ring_mul(&other.zero(), &p.zero(), &p).is_err());
    }

    #[test]
    fn mul_identity_and_wrap() {
        let p = p97();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = rand_poly(&p, &mut rng);
        assert_eq!(ring_mul(&a, &p.one(), &p).unwrap(), a);
        let wrap = ring_mul(&p.monomial(7), &p.monomial(1), &p).unwrap();
        let mut want = p.zero();
        want.coeffs[0] = 96;
        assert_eq!(wrap, want);
    }

    #[test]
    fn mul_matches_convolution_oracle() {
        let p = p97();
        assert!(p.has_fast_mul());
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            assert_eq!(ring_mul(&a, &b, &p).unwrap().coeffs(), &oracle_mul(&a, &b, 97)[..]);
        }
    }

    #[test]
    fn transform_agrees_with_schoolbook() {
        for (n, q) in [(8, Q97), (16, Q97), (64, Q61), (256, Q120), (1024, Q120)] {
            let p = RingParams::new(n, q).unwrap();
            assert!(p.has_fast_mul(), "n={n}");
            let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            assert_eq!(
                ring_mul(&a, &b, &p).unwrap(),
                ring_mul_schoolbook(&a, &b, &p).unwrap()
            );
        }
        // 97 is not 1 mod 64: schoolbook only
        assert!(!RingParams::new(32, Q97).unwrap().has_fast_mul());
    }

    #[test]
    fn wide_modulus_matches_oracle() {
        let p = RingParams::new(16, Q120).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = rand_poly(&p, &mut rng);
        let b = rand_poly(&p, &mut rng);
        assert_eq!(ring_mul(&a, &b, &p).unwrap().coeffs(), &oracle_mul(&a, &b, Q120)[..]);
        let r = rng.gen_range(0..Q120);
        assert_eq!(ring_eval(&a, r, &p).unwrap(), oracle_eval(&a, r, Q120));
    }

    #[test]
    fn eval_basics() {
        let p = p97();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = rand_poly(&p, &mut rng);
        assert_eq!(ring_eval(&p.zero(), 13, &p).unwrap(), 0);
        assert_eq!(ring_eval(&a, 0, &p).unwrap(), a.coeffs()[0]);
        assert_eq!(ring_eval(&a, 97, &p), Err(RingError::PointOutOfRange(97)));
        for _ in 0..100 {
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            let r = rng.gen_range(0..97);
            let lhs = ring_eval(&ring_add(&a, &b, &p).unwrap(), r, &p).unwrap();
            assert_eq!(lhs, (oracle_eval(&a, r, 97) + oracle_eval(&b, r, 97)) % 97);
        }
    }

    #[test]
    fn sampler_support() {
        let p = RingParams::new(1024, Q120).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let t = sample_poly(&NoiseDist::Ternary, &p, &mut rng);
        assert!(t.coeffs().iter().all(|&c| c == 0 || c == 1 || c == Q120 - 1));
        let b = sample_poly(&NoiseDist::UniformBounded { bound: 5 }, &p, &mut rng);
        assert!(b.centered(&p).iter().all(|c| c.abs() <= 5));
        assert!(NoiseDist::UniformBounded { bound: 0 }.validate(&p).is_err());
        assert!(NoiseDist::DiscreteGaussian { stddev: 0.0 }.validate(&p).is_err());
    }

    #[test]
    fn gaussian_stddev_monte_carlo() {
        let p = RingParams::new(1024, Q120).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut sum = 0f64;
        let mut sum_sq = 0f64;
        let mut count = 0f64;
        while count < 1e5 {
            for c in sample_poly(&NoiseDist::error(), &p, &mut rng).centered(&p) {
                sum += c as f64;
                sum_sq += (c * c) as f64;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let sd = (sum_sq / count - mean * mean).sqrt();
        assert!((sd - 3.2).abs() / 3.2 < 0.05, "sd={sd}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = RingParams::new(64, Q61).unwrap();
        let a = sample_poly(&NoiseDist::error(), &p, &mut ChaCha20Rng::seed_from_u64(9));
        let b = sample_poly(&NoiseDist::error(), &p, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn serialization_layout() {
        let p = p97();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let a = rand_poly(&p, &mut rng);
        let bytes = a.to_bytes(&p);
        assert_eq!(bytes.len(), 32 + 8 * 16);
        assert_eq!(&bytes[0..16], &8u128.to_le_bytes());
        assert_eq!(&bytes[16..32], &97u128.to_le_bytes());
        let (back, used) = RingPoly::from_bytes(&p, &bytes).unwrap();
        assert_eq!((back, used), (a, bytes.len()));
        assert!(RingPoly::from_bytes(&RingParams::new(16, Q97).unwrap(), &bytes).is_err());
    }

    proptest! {
        #[test]
        fn ring_axioms(seed in any::<u64>(), log_n in 1u32..5) {
            let p = RingParams::new(1 << log_n, Q97).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            let c = rand_poly(&p, &mut rng);
            let ab = ring_add(&a, &b, &p).unwrap();
            prop_assert_eq!(&ab, &ring_add(&b, &a, &p).unwrap());
            prop_assert_eq!(
                ring_add(&ab, &c, &p).unwrap(),
                ring_add(&a, &ring_add(&b, &c, &p).unwrap(), &p).unwrap()
            );
            let lhs = ring_mul(&a, &ring_add(&b, &c, &p).unwrap(), &p).unwrap();
            let rhs = ring_add(&ring_mul(&a, &b, &p).unwrap(), &ring_mul(&a, &c, &p).unwrap(), &p).unwrap();
            prop_assert_eq!(lhs.coeffs(), &oracle_add(&oracle_mul(&a, &b, 97), &oracle_mul(&a, &c, 97))[..]);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn negacyclic_monomials(i in 0usize..16, j in 0usize..16) {
            let p = RingParams::new(16, Q97).unwrap();
            let prod = ring_mul(&p.monomial(i), &p.monomial(j), &p).unwrap();
            let k = (i + j) % 16;
            let mut want = p.zero();
            want.coeffs[k] = if i + j >= 16 { 96 } else { 1 };
            prop_assert_eq!(prod, want);
        }

        #[test]
        fn eval_is_additive(seed in any::<u64>(), r in 0u128..97) {
            let p = RingParams::new(16, Q97).unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = rand_poly(&p, &mut rng);
            let b = rand_poly(&p, &mut rng);
            let lhs = ring_eval(&ring_add(&a, &b, &p).unwrap(), r, &p).unwrap();
            let rhs = (ring_eval(&a, r, &p).unwrap() + ring_eval(&b, r, &p).unwrap()) % 97;
            prop_assert_eq!(lhs, rhs);
            prop_assert!(!BigInt::from(lhs).is_negative());
        }
    }

    fn oracle_add(a: &[u128], b: &[u128]) -> Vec<u128> {
        a.iter().zip(b).map(|(x, y)| (x + y) % 97).collect()
    }
}
