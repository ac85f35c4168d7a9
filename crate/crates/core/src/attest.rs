//! Attestation that a ciphertext is well formed, fresh and bounded.
//!
//! The backend here is an oracle: a trusted authority inspects the witness and
//! signs the statement together with the ciphertext digest. Verification only
//! needs the authority's public key, so a succinct proof system could replace
//! it without touching callers.

use crate::ahe::{encrypt_with, AheParams, Ciphertext, EncRandomness, Plaintext, PublicKey};
use crate::dpcore::l2_norm;
use crate::hash::{sha256_parts, Digest32};
use crate::ring::{NoiseDist, GAUSSIAN_TAIL_SIGMAS};
use crate::sig::{self, Keypair, PublicKeyBytes, SignatureBytes, SIGNATURE_BYTES};

pub const ORACLE_SCHEME: u8 = 1;
/// signature ‖ statement digest ‖ ciphertext digest
pub const TOKEN_BYTES: usize = SIGNATURE_BYTES + 32 + 32;
/// scheme id plus token
pub const ATTESTATION_BYTES: usize = 1 + TOKEN_BYTES;

#[derive(Clone, Debug, PartialEq)]
pub struct Statement {
    pub round_t: u64,
    pub pk_digest: Digest32,
    /// L2 bound on the decoded update
    pub bound_s: f64,
    pub params_digest: Digest32,
}

impl Statement {
    pub fn new(round_t: u64, pk: &PublicKey, bound_s: f64, params: &AheParams) -> Self {
        Self {
            round_t,
            pk_digest: pk.digest(params),
            bound_s,
            params_digest: params.digest(),
        }
    }

    pub fn digest(&self) -> Digest32 {
        sha256_parts(&[
            b"statement",
            &self.round_t.to_le_bytes(),
            &self.pk_digest,
            &self.bound_s.to_le_bytes(),
            &self.params_digest,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub scheme: u8,
    pub token: Vec<u8>,
}

impl Attestation {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.token.len());
        out.push(self.scheme);
        out.extend_from_slice(&self.token);
        out
    }
}

fn signed_message(stmt_digest: &Digest32, ct_digest: &Digest32) -> Vec<u8> {
    [b"attest".as_slice(), stmt_digest, ct_digest].concat()
}

/// Why the authority refused to sign; the cheater still gets a token, just an invalid one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessFault {
    Statement,
    Reencryption,
    Round,
    Bound,
    Randomness,
}

#[derive(Clone, Debug)]
pub struct AttestAuthority {
    key: Keypair,
}

impl AttestAuthority {
    pub fn new(seed: &[u8; 32]) -> Self {
        Self {
            key: Keypair::from_seed(seed),
        }
    }

    pub fn public(&self) -> PublicKeyBytes {
        self.key.public()
    }

    /// Checks the witness: re-encryption reproduces `ct`, slot 0 is the
    /// statement's round, the decoded update is within `bound_s`, and the
    /// randomness has the right shape.
    pub fn check_witness(
        &self,
        stmt: &Statement,
        ct: &Ciphertext,
        pt: &Plaintext,
        rnd: &EncRandomness,
        pk: &PublicKey,
        params: &AheParams,
    ) -> Result<(), WitnessFault> {
        if stmt.pk_digest != pk.digest(params) || stmt.params_digest != params.digest() {
            return Err(WitnessFault::Statement);
        }
        let ring = params.ring();
        let tail = (GAUSSIAN_TAIL_SIGMAS * NoiseDist::ERROR_STDDEV).ceil() as u128;
        if rnd.r_poly.inf_norm(ring) > 1 || rnd.e1.inf_norm(ring) > tail || rnd.e2.inf_norm(ring) > tail {
            return Err(WitnessFault::Randomness);
        }
        match encrypt_with(pk, pt, rnd, params) {
            Ok(re) if re == *ct => {}
            _ => return Err(WitnessFault::Reencryption),
        }
        if pt.round_t != stmt.round_t {
            return Err(WitnessFault::Round);
        }
        if l2_norm(&pt.decode(params.plain_modulus())) > stmt.bound_s {
            return Err(WitnessFault::Bound);
        }
        Ok(())
    }

    pub fn prove(
        &self,
        stmt: &Statement,
        ct: &Ciphertext,
        pt: &Plaintext,
        rnd: &EncRandomness,
        pk: &PublicKey,
        params: &AheParams,
    ) -> Attestation {
        let sd = stmt.digest();
        let cd = ct.digest(params);
        let sig = match self.check_witness(stmt, ct, pt, rnd, pk, params) {
            Ok(()) => self.key.sign(&signed_message(&sd, &cd)),
            Err(_) => [0u8; SIGNATURE_BYTES],
        };
        Attestation {
            scheme: ORACLE_SCHEME,
            token: [sig.as_slice(), &sd, &cd].concat(),
        }
    }
}

/// Valid iff the token is the authority's signature over this statement and
/// this ciphertext digest.
pub fn verify_digest(stmt: &Statement, ct_digest: &Digest32, att: &Attestation, authority: &PublicKeyBytes) -> bool {
    if att.scheme != ORACLE_SCHEME || att.token.len() != TOKEN_BYTES {
        return false;
    }
    let sd = stmt.digest();
    let (sig, rest) = att.token.split_at(SIGNATURE_BYTES);
    if rest[..32] != sd || rest[32..] != ct_digest[..] {
        return false;
    }
    let sig: SignatureBytes = sig.try_into().unwrap();
    sig::verify(authority, &signed_message(&sd, ct_digest), &sig)
}

pub fn verify(
    stmt: &Statement,
    ct: &Ciphertext,
    att: &Attestation,
    authority: &PublicKeyBytes,
    params: &AheParams,
) -> bool {
    verify_digest(stmt, &ct.digest(params), att, authority)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ahe::{encode, encrypt, keygen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        params: AheParams,
        pk: PublicKey,
        auth: AttestAuthority,
        rng: ChaCha20Rng,
    }

    fn fixture() -> Fixture {
        let params = AheParams::with_degree(64, 64);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (pk, _) = keygen(&params, &mut rng);
        Fixture {
            params,
            pk,
            auth: AttestAuthority::new(&[5; 32]),
            rng,
        }
    }

    #[test]
    fn honest_and_stale_round() {
        let mut fx = fixture();
        let stmt = Statement::new(4, &fx.pk, 1.0, &fx.params);
        let pt = encode(4, &[0.6, 0.8], &fx.params).unwrap();
        let (ct, rnd) = encrypt(&fx.pk, &pt, &fx.params, &mut fx.rng).unwrap();
        let att = fx.auth.prove(&stmt, &ct, &pt, &rnd, &fx.pk, &fx.params);
        assert_eq!(att.to_bytes().len(), ATTESTATION_BYTES);
        assert!(verify(&stmt, &ct, &att, &fx.auth.public(), &fx.params));

        let stale = encode(3, &[0.6, 0.8], &fx.params).unwrap();
        let (ct, rnd) = encrypt(&fx.pk, &stale, &fx.params, &mut fx.rng).unwrap();
        let att = fx.auth.prove(&stmt, &ct, &stale, &rnd, &fx.pk, &fx.params);
        assert!(!verify(&stmt, &ct, &att, &fx.auth.public(), &fx.params));
        // a round-3 token presented in round 4
        let stmt3 = Statement::new(3, &fx.pk, 1.0, &fx.params);
        let att3 = fx.auth.prove(&stmt3, &ct, &stale, &rnd, &fx.pk, &fx.params);
        assert!(verify(&stmt3, &ct, &att3, &fx.auth.public(), &fx.params));
        assert!(!verify(&stmt, &ct, &att3, &fx.auth.public(), &fx.params));
    }

    #[test]
    fn bound_boundary_scan() {
        let mut fx = fixture();
        let s = 2.0;
        let stmt = Statement::new(1, &fx.pk, s, &fx.params);
        for &factor in &[0.5, 0.99, 1.0, 1.01, 1.05, 2.0] {
            let x = vec![s * factor / 2f64.sqrt(); 2];
            let pt = encode(1, &x, &fx.params).unwrap();
            let (ct, rnd) = encrypt(&fx.pk, &pt, &fx.params, &mut fx.rng).unwrap();
            let att = fx.auth.prove(&stmt, &ct, &pt, &rnd, &fx.pk, &fx.params);
            let ok = verify(&stmt, &ct, &att, &fx.auth.public(), &fx.params);
            assert_eq!(ok, factor <= 1.0, "factor {factor}");
        }
    }

    #[test]
    fn binding_and_token_flips() {
        let mut fx = fixture();
        let stmt = Statement::new(1, &fx.pk, 1.0, &fx.params);
        let pt = encode(1, &[0.1], &fx.params).unwrap();
        let (ct, rnd) = encrypt(&fx.pk, &pt, &fx.params, &mut fx.rng).unwrap();
        let (other, _) = encrypt(&fx.pk, &pt, &fx.params, &mut fx.rng).unwrap();
        let att = fx.auth.prove(&stmt, &ct, &pt, &rnd, &fx.pk, &fx.params);
        assert!(!verify(&stmt, &other, &att, &fx.auth.public(), &fx.params));
        // witness for a different ciphertext
        let bad = fx.auth.prove(&stmt, &other, &pt, &rnd, &fx.pk, &fx.params);
        assert!(!verify(&stmt, &other, &bad, &fx.auth.public(), &fx.params));
        let cd = ct.digest(&fx.params);
        for _ in 0..2000 {
            let mut t = att.clone();
            let bit = fx.rng.gen_range(0..TOKEN_BYTES * 8);
            t.token[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_digest(&stmt, &cd, &t, &fx.auth.public()));
        }
    }
}
