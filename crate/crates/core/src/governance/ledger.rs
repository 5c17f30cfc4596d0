//! Hash-chained trust ledger.
//!
//! Canonical block bytes, little-endian:
//!
//! ```text
//! height      u64
//! prev_hash   [u8; 32]
//! timestamp   f64 (IEEE-754 bits)
//! count       u32
//! per commit:
//!   agent       u32
//!   interval    u64
//!   tau_delta   f64 (IEEE-754 bits)
//!   event       u8   0 none, 1 Flagged, 2 Excluded, 3 Isolated, 4 Reinstated
//!   reporter    u32
//! ```
//!
//! `block_hash = SHA-256(canonical bytes)`. The genesis block (height 0)
//! links to 32 zero bytes.
//!
//! The export is one JSON object per line, LF terminated, with hex digests.
//! A verifier re-serializes every parsed line and requires byte equality, so
//! any textual edit is caught even when it parses to the same values.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::SimTime;
use crate::world::AgentId;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub const ZERO: Hash32 = Hash32([0; 32]);
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Hash32(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SecurityEvent {
    Flagged,
    Excluded,
    Isolated,
    Reinstated,
}

impl SecurityEvent {
    fn code(ev: Option<SecurityEvent>) -> u8 {
        match ev {
            None => 0,
            Some(SecurityEvent::Flagged) => 1,
            Some(SecurityEvent::Excluded) => 2,
            Some(SecurityEvent::Isolated) => 3,
            Some(SecurityEvent::Reinstated) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustCommit {
    pub agent: AgentId,
    pub interval_index: u64,
    pub tau_delta: f64,
    pub event: Option<SecurityEvent>,
    pub reporter: AgentId,
}

impl TrustCommit {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_delta) {
            return Err(Error::Ledger(format!("tau_delta {} outside [-1, 1]", self.tau_delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    pub height: u64,
    pub prev_hash: Hash32,
    pub timestamp: SimTime,
    pub commits: Vec<TrustCommit>,
    pub block_hash: Hash32,
}

impl LedgerBlock {
    /// Builds a block and seals it with its hash.
    pub fn seal(
        height: u64,
        prev_hash: Hash32,
        timestamp: SimTime,
        commits: Vec<TrustCommit>,
    ) -> LedgerBlock {
        let mut b = LedgerBlock {
            height,
            prev_hash,
            timestamp,
            commits,
            block_hash: Hash32::ZERO,
        };
        b.block_hash = b.compute_hash();
        b
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 25 * self.commits.len());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.prev_hash.0);
        out.extend_from_slice(&self.timestamp.as_secs().to_bits().to_le_bytes());
        out.extend_from_slice(&(self.commits.len() as u32).to_le_bytes());
        for c in &self.commits {
            out.extend_from_slice(&c.agent.0.to_le_bytes());
            out.extend_from_slice(&c.interval_index.to_le_bytes());
            out.extend_from_slice(&c.tau_delta.to_bits().to_le_bytes());
            out.push(SecurityEvent::code(c.event));
            out.extend_from_slice(&c.reporter.0.to_le_bytes());
        }
        out
    }

    pub fn compute_hash(&self) -> Hash32 {
        Hash32(Sha256::digest(self.canonical_bytes()).into())
    }
}

/// `Ok(())` or the first height whose index, link or hash is wrong.
pub fn verify_chain(blocks: &[LedgerBlock]) -> std::result::Result<(), u64> {
    let mut prev = Hash32::ZERO;
    for (i, b) in blocks.iter().enumerate() {
        let h = i as u64;
        if b.height != h || b.prev_hash != prev || b.compute_hash() != b.block_hash {
            return Err(h);
        }
        prev = b.block_hash;
    }
    Ok(())
}

/// Serializes a chain as LF-terminated JSON lines.
pub fn export_jsonl(blocks: &[LedgerBlock]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for b in blocks {
        serde_json::to_writer(&mut out, b)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportVerdict {
    Valid { blocks: u64 },
    /// First height (line index) at which parsing, canonical form, linkage
    /// or hashing fails.
    Tampered { height: u64 },
}

/// Verifies a JSONL export byte for byte.
pub fn verify_export(bytes: &[u8]) -> ExportVerdict {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    // A well-formed export ends with LF, leaving one empty trailing piece.
    let terminated = lines.last().is_some_and(|l| l.is_empty());
    if terminated {
        lines.pop();
    }
    let mut prev = Hash32::ZERO;
    for (i, line) in lines.iter().enumerate() {
        let h = i as u64;
        let block: LedgerBlock = match serde_json::from_slice(line) {
            Ok(b) => b,
            Err(_) => return ExportVerdict::Tampered { height: h },
        };
        let canonical = serde_json::to_vec(&block).expect("block serializes");
        if canonical != *line
            || block.height != h
            || block.prev_hash != prev
            || block.compute_hash() != block.block_hash
        {
            return ExportVerdict::Tampered { height: h };
        }
        prev = block.block_hash;
    }
    if !terminated && !bytes.is_empty() {
        return ExportVerdict::Tampered {
            height: lines.len().saturating_sub(1) as u64,
        };
    }
    ExportVerdict::Valid {
        blocks: lines.len() as u64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commit(agent: u32, delta: f64, ev: Option<SecurityEvent>) -> TrustCommit {
        TrustCommit {
            agent: AgentId(agent),
            interval_index: 7,
            tau_delta: delta,
            event: ev,
            reporter: AgentId(0),
        }
    }

    pub(crate) fn chain(n: usize) -> Vec<LedgerBlock> {
        let mut out: Vec<LedgerBlock> = Vec::new();
        for h in 0..n {
            let prev = out.last().map_or(Hash32::ZERO, |b| b.block_hash);
            let commits = vec![
                commit(h as u32, -0.125, Some(SecurityEvent::Flagged)),
                commit(h as u32 + 1, 0.03125, None),
            ];
            out.push(LedgerBlock::seal(
                h as u64,
                prev,
                SimTime::from_secs(60.0 * h as f64),
                commits,
            ));
        }
        out
    }

    #[test]
    fn untouched_chain_verifies() {
        assert_eq!(verify_chain(&chain(5)), Ok(()));
        assert_eq!(verify_chain(&[]), Ok(()));
    }

    #[test]
    fn tampered_commit_detected_at_height() {
        let mut c = chain(5);
        c[3].commits[0].tau_delta = -0.25;
        assert_eq!(verify_chain(&c), Err(3));
    }

    #[test]
    fn reorder_detected() {
        let mut c = chain(5);
        c[2].commits.swap(0, 1);
        assert_eq!(verify_chain(&c), Err(2));
    }

    #[test]
    fn canonical_layout() {
        let b = LedgerBlock::seal(1, Hash32([7; 32]), SimTime::from_secs(2.0), vec![commit(3, 0.5, Some(SecurityEvent::Isolated))]);
        let bytes = b.canonical_bytes();
        assert_eq!(bytes.len(), 8 + 32 + 8 + 4 + 25);
        assert_eq!(&bytes[..8], &1u64.to_le_bytes());
        assert_eq!(bytes[8 + 32 + 8 + 4 + 4 + 8 + 8], 3);
    }

    #[test]
    fn export_roundtrip_and_text_tamper() {
        let c = chain(4);
        let bytes = export_jsonl(&c).unwrap();
        assert_eq!(verify_export(&bytes), ExportVerdict::Valid { blocks: 4 });
        let text = String::from_utf8(bytes.clone()).unwrap();
        // Same value, different spelling: still tampering.
        let respelled = text.replacen("0.03125", "3.125e-2", 1);
        assert_eq!(verify_export(respelled.as_bytes()), ExportVerdict::Tampered { height: 0 });
        let mut cut = bytes.clone();
        cut.pop();
        assert_eq!(verify_export(&cut), ExportVerdict::Tampered { height: 3 });
    }

    #[test]
    fn delta_bounds() {
        assert!(commit(1, 1.5, None).validate().is_err());
        assert!(commit(1, -1.0, None).validate().is_ok());
    }
}
