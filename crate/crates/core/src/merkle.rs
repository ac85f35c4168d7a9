//! Binary Merkle trees over 32-byte leaf digests.
//!
//! A parent is `H(left ‖ right)`. A node without a sibling is paired with the
//! all-zero digest, so a single leaf has root `H(leaf ‖ 0^32)`. The empty tree
//! has the zero digest as its root.

use crate::hash::{sha256_parts, Digest32, ZERO_DIGEST};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` are the leaves, the last level holds the root.
    levels: Vec<Vec<Digest32>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerklePath {
    pub index: usize,
    pub siblings: Vec<Digest32>,
}

impl MerklePath {
    pub fn byte_len(&self) -> usize {
        8 + 32 * self.siblings.len()
    }
}

fn parent(l: &Digest32, r: &Digest32) -> Digest32 {
    sha256_parts(&[l, r])
}

/// Number of hashing levels above the leaves for `n` leaves.
pub fn depth(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => (n - 1).ilog2() as usize + 1,
    }
}

impl MerkleTree {
    pub fn new(leaves: Vec<Digest32>) -> Self {
        let n = leaves.len();
        let mut levels = vec![leaves];
        for _ in 0..depth(n) {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|c| parent(&c[0], c.get(1).unwrap_or(&ZERO_DIGEST)))
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, i: usize) -> Option<&Digest32> {
        self.levels[0].get(i)
    }

    pub fn root(&self) -> Digest32 {
        if self.is_empty() {
            return ZERO_DIGEST;
        }
        self.levels.last().unwrap()[0]
    }

    pub fn path(&self, index: usize) -> Option<MerklePath> {
        if index >= self.len() {
            return None;
        }
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            siblings.push(*level.get(i ^ 1).unwrap_or(&ZERO_DIGEST));
            i >>= 1;
        }
        Some(MerklePath { index, siblings })
    }
}

/// Checks `leaf` sits at `path.index` of a tree with `leaf_count` leaves and root `root`.
pub fn verify_path(leaf: &Digest32, path: &MerklePath, root: &Digest32, leaf_count: usize) -> bool {
    if path.index >= leaf_count || path.siblings.len() != depth(leaf_count) {
        return false;
    }
    let mut cur = *leaf;
    let mut i = path.index;
    for sib in &path.siblings {
        cur = if i & 1 == 0 { parent(&cur, sib) } else { parent(sib, &cur) };
        i >>= 1;
    }
    cur == *root
}
