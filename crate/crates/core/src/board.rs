//! Append-only bulletin board with quorum-signed entries.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{hex, sha256, sha256_parts, Digest32, ZERO_DIGEST};
use crate::sig::{self, PublicKeyBytes, SignatureBytes};

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("no quorum rule configured for {0:?}")]
    NoRule(EntryKind),
    #[error("signature {index} does not verify or its signer is not authorized")]
    BadSignature { index: usize },
    #[error("signer {0} appears twice")]
    DuplicateSigner(String),
    #[error("{got} valid signatures, {need} required")]
    InsufficientQuorum { got: usize, need: usize },
    #[error("range {start}..{end} outside log of length {len}")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("malformed log file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    KeyCertificate,
    DpCertificate,
    CommitRoot,
    MsRoot,
    PitPoint,
    Beacon,
    CommitteeRoster,
    RootCiphertext,
}

impl EntryKind {
    const ALL: [EntryKind; 8] = [
        Self::KeyCertificate,
        Self::DpCertificate,
        Self::CommitRoot,
        Self::MsRoot,
        Self::PitPoint,
        Self::Beacon,
        Self::CommitteeRoster,
        Self::RootCiphertext,
    ];

    fn tag(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoardEntry {
    pub index: u64,
    pub round_t: u64,
    pub kind: EntryKind,
    pub payload: Vec<u8>,
    pub signatures: Vec<(PublicKeyBytes, SignatureBytes)>,
}

/// The bytes every signer signs.
pub fn signing_message(round_t: u64, kind: EntryKind, payload: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(9 + payload.len());
    m.extend_from_slice(&round_t.to_le_bytes());
    m.push(kind.tag());
    m.extend_from_slice(payload);
    m
}

impl BoardEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(29 + self.payload.len() + 96 * self.signatures.len());
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&self.round_t.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&(self.signatures.len() as u32).to_le_bytes());
        for (pk, s) in &self.signatures {
            out.extend_from_slice(pk);
            out.extend_from_slice(s);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, BoardError> {
        let mut r = Cursor { b, pos: 0 };
        let index = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let round_t = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let tag = r.take(1)?[0];
        let kind = EntryKind::from_tag(tag).ok_or_else(|| BoardError::Format(format!("kind tag {tag}")))?;
        let plen = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let payload = r.take(plen)?.to_vec();
        let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut signatures = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let pk: PublicKeyBytes = r.take(32)?.try_into().unwrap();
            let s: SignatureBytes = r.take(64)?.try_into().unwrap();
            signatures.push((pk, s));
        }
        if r.pos != b.len() {
            return Err(BoardError::Format("trailing bytes in entry".into()));
        }
        Ok(Self {
            index,
            round_t,
            kind,
            payload,
            signatures,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "index": self.index,
            "round_t": self.round_t,
            "kind": self.kind,
            "payload_len": self.payload.len(),
            "payload_sha256": hex(&sha256(&self.payload)),
            "signers": self.signatures.iter().map(|(pk, _)| hex(pk)).collect::<Vec<_>>(),
        });
        match serde_json::from_slice::<serde_json::Value>(&self.payload) {
            Ok(p) => v["payload"] = p,
            Err(_) if self.payload.len() <= 64 => v["payload_hex"] = hex(&self.payload).into(),
            Err(_) => {}
        }
        v
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], BoardError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| BoardError::Format("truncated entry".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Who may sign entries of one kind and how many must.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumRule {
    pub signers: BTreeSet<PublicKeyBytes>,
    pub min: usize,
}

impl QuorumRule {
    /// More than `a` members of a committee.
    pub fn committee(members: &[PublicKeyBytes], a: usize) -> Self {
        Self {
            signers: members.iter().copied().collect(),
            min: a + 1,
        }
    }

    pub fn single(signer: PublicKeyBytes) -> Self {
        Self {
            signers: BTreeSet::from([signer]),
            min: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Board {
    entries: Vec<BoardEntry>,
    rules: BTreeMap<EntryKind, QuorumRule>,
    /// running `H(prev ‖ entry)` over the log
    chain: Vec<Digest32>,
}

impl Board {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_rule(&mut self, kind: EntryKind, rule: QuorumRule) {
        self.rules.insert(kind, rule);
    }

    pub fn rule(&self, kind: EntryKind) -> Option<&QuorumRule> {
        self.rules.get(&kind)
    }

    pub fn append(
        &mut self,
        round_t: u64,
        kind: EntryKind,
        payload: Vec<u8>,
        signatures: Vec<(PublicKeyBytes, SignatureBytes)>,
    ) -> Result<u64, BoardError> {
        let rule = self.rules.get(&kind).ok_or(BoardError::NoRule(kind))?;
        let msg = signing_message(round_t, kind, &payload);
        let mut seen = BTreeSet::new();
        for (i, (pk, s)) in signatures.iter().enumerate() {
            if !seen.insert(*pk) {
                return Err(BoardError::DuplicateSigner(hex(pk)));
            }
            if !rule.signers.contains(pk) || !sig::verify(pk, &msg, s) {
                return Err(BoardError::BadSignature { index: i });
            }
        }
        if signatures.len() < rule.min {
            return Err(BoardError::InsufficientQuorum {
                got: signatures.len(),
                need: rule.min,
            });
        }
        let index = self.entries.len() as u64;
        self.push(BoardEntry {
            index,
            round_t,
            kind,
            payload,
            signatures,
        });
        Ok(index)
    }

    fn push(&mut self, e: BoardEntry) {
        let prev = self.chain.last().copied().unwrap_or(ZERO_DIGEST);
        self.chain.push(sha256_parts(&[&prev, &e.to_bytes()]));
        self.entries.push(e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read(&self, range: Range<usize>) -> Result<&[BoardEntry], BoardError> {
        if range.start > range.end || range.end > self.entries.len() {
            return Err(BoardError::OutOfRange {
                start: range.start,
                end: range.end,
                len: self.entries.len(),
            });
        }
        Ok(&self.entries[range])
    }

    pub fn entries(&self) -> &[BoardEntry] {
        &self.entries
    }

    /// Latest entry of `kind` for round `round_t`.
    pub fn latest(&self, round_t: u64, kind: EntryKind) -> Option<&BoardEntry> {
        self.entries.iter().rev().find(|e| e.round_t == round_t && e.kind == kind)
    }

    /// Digest of the first `len` entries; a prefix keeps its digest as the log grows.
    pub fn digest_prefix(&self, len: usize) -> Digest32 {
        if len == 0 {
            ZERO_DIGEST
        } else {
            self.chain[len - 1]
        }
    }

    pub fn digest(&self) -> Digest32 {
        self.digest_prefix(self.entries.len())
    }

    /// Length-prefixed binary log.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), BoardError> {
        for e in &self.entries {
            let b = e.to_bytes();
            w.write_all(&(b.len() as u32).to_le_bytes())?;
            w.write_all(&b)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), BoardError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a log back. Quorum rules are not persisted, so signatures are
    /// not re-checked here.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BoardError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut board = Self::new();
        let mut pos = 0;
        while pos < data.len() {
            let len_bytes = data
                .get(pos..pos + 4)
                .ok_or_else(|| BoardError::Format("truncated length".into()))?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 4;
            let body = data
                .get(pos..pos + len)
                .ok_or_else(|| BoardError::Format("truncated entry".into()))?;
            let e = BoardEntry::from_bytes(body)?;
            if e.index != board.entries.len() as u64 {
                return Err(BoardError::Format(format!("index {} out of sequence", e.index)));
            }
            board.push(e);
            pos += len;
        }
        Ok(board)
    }

    pub fn load(path: &Path) -> Result<Self, BoardError> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// One JSON object per line.
    pub fn dump_json<W: Write>(&self, mut w: W) -> Result<(), BoardError> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, &e.to_json()).map_err(io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Privacy-budget certificate posted each round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpCertificate {
    pub theta_digest: String,
    pub q: f64,
    pub z: f64,
    pub clip_s: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl DpCertificate {
    pub fn payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("certificate serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sig::Keypair;

    fn committee(n: usize) -> Vec<Keypair> {
        (0..n).map(|i| Keypair::from_seed(&[i as u8; 32])).collect()
    }

    fn signed(keys: &[Keypair], round: u64, kind: EntryKind, payload: &[u8]) -> Vec<(PublicKeyBytes, SignatureBytes)> {
        let m = signing_message(round, kind, payload);
        keys.iter().map(|k| (k.public(), k.sign(&m))).collect()
    }

    #[test]
    fn quorum_rules() {
        let keys = committee(45);
        let pks: Vec<_> = keys.iter().map(Keypair::public).collect();
        let mut b = Board::new();
        b.set_rule(EntryKind::KeyCertificate, QuorumRule::committee(&pks, 18));
        let p = b"key".to_vec();
        let i = b
            .append(1, EntryKind::KeyCertificate, p.clone(), signed(&keys[..19], 1, EntryKind::KeyCertificate, &p))
            .unwrap();
        assert_eq!(i, 0);
        assert!(matches!(
            b.append(1, EntryKind::KeyCertificate, p.clone(), signed(&keys[..1], 1, EntryKind::KeyCertificate, &p)),
            Err(BoardError::InsufficientQuorum { got: 1, need: 19 })
        ));
        let j = b
            .append(1, EntryKind::KeyCertificate, p.clone(), signed(&keys[..19], 1, EntryKind::KeyCertificate, &p))
            .unwrap();
        assert_eq!(j, 1);
        assert_eq!(b.read(0..2).unwrap()[0].payload, b.read(0..2).unwrap()[1].payload);
        assert!(matches!(
            b.append(1, EntryKind::Beacon, p.clone(), vec![]),
            Err(BoardError::NoRule(EntryKind::Beacon))
        ));
    }

    #[test]
    fn flipped_payload_rejected() {
        let keys = committee(3);
        let pks: Vec<_> = keys.iter().map(Keypair::public).collect();
        let mut b = Board::new();
        b.set_rule(EntryKind::PitPoint, QuorumRule::committee(&pks, 1));
        let sigs = signed(&keys, 2, EntryKind::PitPoint, b"r=5");
        assert!(matches!(
            b.append(2, EntryKind::PitPoint, b"r=6".to_vec(), sigs.clone()),
            Err(BoardError::BadSignature { .. })
        ));
        // same payload under another round
        assert!(b.append(3, EntryKind::PitPoint, b"r=5".to_vec(), sigs.clone()).is_err());
        assert!(b.append(2, EntryKind::PitPoint, b"r=5".to_vec(), sigs).is_ok());
    }

    #[test]
    fn reads_and_digest_prefix() {
        let k = Keypair::from_seed(&[1; 32]);
        let mut b = Board::new();
        b.set_rule(EntryKind::CommitRoot, QuorumRule::single(k.public()));
        assert!(b.read(0..0).unwrap().is_empty());
        assert!(b.read(0..1).is_err());
        let mut digests = Vec::new();
        for i in 0..5u8 {
            let p = vec![i; 32];
            b.append(1, EntryKind::CommitRoot, p.clone(), signed(std::slice::from_ref(&k), 1, EntryKind::CommitRoot, &p))
                .unwrap();
            digests.push(b.digest());
        }
        for (i, d) in digests.iter().enumerate() {
            assert_eq!(b.digest_prefix(i + 1), *d);
        }
        assert_eq!(b.digest(), b.digest());

        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let back = Board::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), b.entries());
        assert_eq!(back.digest(), b.digest());
        assert!(Board::read_from(&buf[..buf.len() - 1]).is_err());

        let mut out = Vec::new();
        b.dump_json(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 5);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "commit-root");
    }
}
