//! Ed25519 signatures over the SHA-256 wire hash of a message.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};

use crate::hash::sha256;

pub const SIGNATURE_BYTES: usize = 64;
pub const PUBLIC_KEY_BYTES: usize = 32;

pub type PublicKeyBytes = [u8; PUBLIC_KEY_BYTES];
pub type SignatureBytes = [u8; SIGNATURE_BYTES];

#[derive(Clone, Debug)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(seed),
        }
    }

    pub fn public(&self) -> PublicKeyBytes {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> SignatureBytes {
        self.signing.sign(&sha256(msg)).to_bytes()
    }
}

pub fn verify(pk: &PublicKeyBytes, msg: &[u8], sig: &SignatureBytes) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(pk) else {
        return false;
    };
    vk.verify(&sha256(msg), &Signature::from_bytes(sig)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_and_flip() {
        let k = Keypair::from_seed(&[9; 32]);
        let sig = k.sign(b"payload");
        assert!(verify(&k.public(), b"payload", &sig));
        assert!(!verify(&k.public(), b"paylaod", &sig));
        let mut bad = sig;
        bad[10] ^= 1;
        assert!(!verify(&k.public(), b"payload", &bad));
        assert!(!verify(&Keypair::from_seed(&[8; 32]).public(), b"payload", &sig));
    }
}
