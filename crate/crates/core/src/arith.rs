//! Word-level modular arithmetic for odd moduli below 2^127.
//!
//! Products are formed as full 256-bit values and reduced with Montgomery
//! reduction (R = 2^128), so a single `Modulus` serves the 120-bit ciphertext
//! prime, the commitment-group prime and the small test primes alike.

use serde::{Deserialize, Serialize};

/// Largest supported modulus width; Montgomery reduction needs `2q < 2^128`.
pub const MAX_MODULUS_BITS: u32 = 127;

#[inline]
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let mid = (p00 >> 64) + (p01 as u64 as u128) + (p10 as u64 as u128);
    let lo = (p00 as u64 as u128) | (mid << 64);
    let hi = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (hi, lo)
}

/// An odd modulus together with its Montgomery constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u128", try_from = "u128")]
pub struct Modulus {
    value: u128,
    /// -value^{-1} mod 2^128
    neg_inv: u128,
    /// 2^256 mod value
    r2: u128,
}

impl From<Modulus> for u128 {
    fn from(m: Modulus) -> u128 {
        m.value
    }
}

impl TryFrom<u128> for Modulus {
    type Error = String;
    fn try_from(v: u128) -> Result<Self, String> {
        Modulus::new(v).ok_or_else(|| format!("unsupported modulus {v}"))
    }
}

impl Modulus {
    /// Returns `None` for even moduli, 1, or moduli wider than [`MAX_MODULUS_BITS`].
    pub fn new(value: u128) -> Option<Self> {
        if value < 3 || value % 2 == 0 || 128 - value.leading_zeros() > MAX_MODULUS_BITS {
            return None;
        }
        // Newton iteration for value^{-1} mod 2^128; each step doubles the correct bits.
        let mut inv: u128 = 1;
        for _ in 0..7 {
            inv = inv.wrapping_mul(2u128.wrapping_sub(value.wrapping_mul(inv)));
        }
        debug_assert_eq!(value.wrapping_mul(inv), 1);
        let r1 = (u128::MAX % value + 1) % value;
        let r2 = slow_mul(r1, r1, value);
        Some(Self {
            value,
            neg_inv: inv.wrapping_neg(),
            r2,
        })
    }

    #[inline]
    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        128 - self.value.leading_zeros()
    }

    #[inline]
    fn redc(&self, hi: u128, lo: u128) -> u128 {
        let m = lo.wrapping_mul(self.neg_inv);
        let (mq_hi, mq_lo) = mul_wide(m, self.value);
        let (_, carry) = lo.overflowing_add(mq_lo);
        let t = hi + mq_hi + carry as u128;
        if t >= self.value {
            t - self.value
        } else {
            t
        }
    }

    #[inline]
    pub fn reduce(&self, a: u128) -> u128 {
        a % self.value
    }

    /// Reduces a signed integer into `[0, q)`.
    #[inline]
    pub fn from_i128(&self, a: i128) -> u128 {
        let q = self.value as i128;
        let r = a % q;
        if r < 0 {
            (r + q) as u128
        } else {
            r as u128
        }
    }

    /// Centered representative in `[-q/2, q/2)`.
    #[inline]
    pub fn centered(&self, a: u128) -> i128 {
        if a >= self.value.div_ceil(2) {
            a as i128 - self.value as i128
        } else {
            a as i128
        }
    }

    #[inline]
    pub fn add(&self, a: u128, b: u128) -> u128 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u128, b: u128) -> u128 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u128) -> u128 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u128, b: u128) -> u128 {
        let (hi, lo) = mul_wide(a, b);
        let t = self.redc(hi, lo);
        let (hi, lo) = mul_wide(t, self.r2);
        self.redc(hi, lo)
    }

    /// Converts into Montgomery form `a·R mod q`.
    #[inline]
    pub fn to_mont(&self, a: u128) -> u128 {
        let (hi, lo) = mul_wide(a, self.r2);
        self.redc(hi, lo)
    }

    /// `a · b_mont · R^{-1}`; with `b_mont = to_mont(b)` this is the plain product `a·b`.
    #[inline]
    pub fn mul_mont(&self, a: u128, b_mont: u128) -> u128 {
        let (hi, lo) = mul_wide(a, b_mont);
        self.redc(hi, lo)
    }

    pub fn pow(&self, base: u128, mut exp: u128) -> u128 {
        let one_m = self.to_mont(1);
        let mut acc = one_m;
        let mut b = self.to_mont(base % self.value);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul_mont(acc, b);
            }
            b = self.mul_mont(b, b);
            exp >>= 1;
        }
        // leave Montgomery form
        self.redc(0, acc)
    }

    /// Inverse via Fermat; only meaningful for prime moduli.
    pub fn inv(&self, a: u128) -> Option<u128> {
        let a = a % self.value;
        if a == 0 {
            return None;
        }
        let r = self.pow(a, self.value - 2);
        (self.mul(r, a) == 1).then_some(r)
    }

    /// Miller-Rabin over the first 24 prime bases.
    pub fn is_probable_prime(&self) -> bool {
        is_probable_prime(self.value)
    }
}

fn slow_mul(mut a: u128, mut b: u128, m: u128) -> u128 {
    let mut acc = 0u128;
    a %= m;
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod_wide(acc, a, m);
        }
        a = add_mod_wide(a, a, m);
        b >>= 1;
    }
    acc
}

fn add_mod_wide(a: u128, b: u128, m: u128) -> u128 {
    let (s, over) = a.overflowing_add(b);
    if over || s >= m {
        s.wrapping_sub(m)
    } else {
        s
    }
}

const SMALL_PRIMES: [u128; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

pub fn is_probable_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for p in SMALL_PRIMES {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let Some(m) = Modulus::new(n) else {
        return false;
    };
    let d_full = n - 1;
    let s = d_full.trailing_zeros();
    let d = d_full >> s;
    'bases: for a in SMALL_PRIMES {
        let mut x = m.pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = m.mul(x, x);
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Q120: u128 = 1329227995784915872903807060279345153;

    #[test]
    fn rejects_even_and_wide() {
        assert!(Modulus::new(96).is_none());
        assert!(Modulus::new(1).is_none());
        assert!(Modulus::new((1u128 << 127) + 1).is_none());
        assert!(Modulus::new((1u128 << 126) + 1).is_some());
        assert!(Modulus::new(97).is_some());
    }

    #[test]
    fn primality() {
        assert!(is_probable_prime(97));
        assert!(is_probable_prime(Q120));
        assert!(is_probable_prime(2305843009213317121));
        assert!(!is_probable_prime(Q120 - 2));
        assert!(!is_probable_prime(561));
    }

    #[test]
    fn inverse_and_pow() {
        let m = Modulus::new(Q120).unwrap();
        let a = 123456789012345678901234567u128;
        let ai = m.inv(a).unwrap();
        assert_eq!(m.mul(a, ai), 1);
        assert_eq!(m.pow(a, Q120 - 1), 1);
        assert_eq!(m.pow(a, 0), 1);
        assert!(m.inv(0).is_none());
    }

    #[test]
    fn centered_view() {
        let m = Modulus::new(97).unwrap();
        assert_eq!(m.centered(0), 0);
        assert_eq!(m.centered(48), 48);
        assert_eq!(m.centered(49), -48);
        assert_eq!(m.centered(96), -1);
        assert_eq!(m.from_i128(-1), 96);
    }

    proptest! {
        #[test]
        fn mul_matches_wide_reference(a in any::<u128>(), b in any::<u128>()) {
            let m = Modulus::new(Q120).unwrap();
            let (a, b) = (a % Q120, b % Q120);
            prop_assert_eq!(m.mul(a, b), slow_mul(a, b, Q120));
        }

        #[test]
        fn mont_roundtrip(a in 0u128..97, b in 0u128..97) {
            let m = Modulus::new(97).unwrap();
            prop_assert_eq!(m.mul_mont(a, m.to_mont(b)), a * b % 97);
        }
    }
}
