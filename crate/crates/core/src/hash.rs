//! SHA-256 helpers shared by commitments, sortition and signatures.

use sha2::{Digest, Sha256};

pub type Digest32 = [u8; 32];

pub const ZERO_DIGEST: Digest32 = [0u8; 32];

pub fn sha256(data: &[u8]) -> Digest32 {
    Sha256::digest(data).into()
}

/// Hash of the concatenation of `parts`.
pub fn sha256_parts(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Counter-mode expansion `H(seed ‖ ctr_le)` used as a PRG.
pub fn expand(seed: &[u8], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len);
    let mut ctr = 0u64;
    while out.len() < out_len {
        out.extend_from_slice(&sha256_parts(&[seed, &ctr.to_le_bytes()]));
        ctr += 1;
    }
    out.truncate(out_len);
    out
}

pub fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(
            hex(&sha256(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(sha256_parts(&[b"a", b"bc"]), sha256(b"abc"));
    }

    #[test]
    fn expand_prefix_stable() {
        let a = expand(b"seed", 8);
        let b = expand(b"seed", 80);
        assert_eq!(&b[..8], &a[..]);
        assert_eq!(&b[..32], &sha256_parts(&[b"seed", &0u64.to_le_bytes()]));
    }
}
