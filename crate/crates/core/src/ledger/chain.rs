//! Hash-chained ledger entries.
//!
//! Nodes store entries in sealed form: the exact hash preimage
//!
//! ```text
//! height (u64 BE) ‖ canonical(payload) ‖ canonical(verdict) ‖ committed_at (u64 BE) ‖ prev_hash
//! ```
//!
//! and its SHA-256. Verification works on those bytes directly, so any byte
//! change in a stored entry is caught at that entry's height.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{to_canonical_json, Digest, DIGEST_LEN};
use crate::contract::{
    evaluate, expire_deadlines, ContractSpec, OperationInstance, SimTime, TimeoutEvent, Verdict,
};

use super::config::ConsensusConfig;

pub const CHAIN_FORMAT: &str = "ledger-chain";

const HEIGHT_LEN: usize = 8;
const TIME_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EntryPayload {
    /// An operation evaluated and agreed on by the nodes.
    Operation { op: OperationInstance },
    /// A deadline fired by every node's state machine.
    Timeout { event: TimeoutEvent },
    /// An operation mirrored onto the chain with a verdict reached elsewhere.
    Record { op: OperationInstance },
}

impl EntryPayload {
    pub fn op(&self) -> Option<&OperationInstance> {
        match self {
            EntryPayload::Operation { op } | EntryPayload::Record { op } => Some(op),
            EntryPayload::Timeout { .. } => None,
        }
    }

    pub fn is_transaction(&self) -> bool {
        !matches!(self, EntryPayload::Timeout { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub height: u64,
    pub payload: EntryPayload,
    pub verdict: Option<Verdict>,
    pub committed_at: SimTime,
    pub prev_hash: Digest,
    pub entry_hash: Digest,
}

impl LedgerEntry {
    pub fn preimage(
        height: u64,
        payload: &EntryPayload,
        verdict: Option<&Verdict>,
        committed_at: SimTime,
        prev_hash: &Digest,
    ) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(256);
        bytes.extend_from_slice(&height.to_be_bytes());
        bytes.extend_from_slice(to_canonical_json(payload).as_bytes());
        bytes.extend_from_slice(to_canonical_json(&verdict).as_bytes());
        bytes.extend_from_slice(&committed_at.to_be_bytes());
        bytes.extend_from_slice(prev_hash.as_bytes());
        bytes
    }

    /// Recomputes the hash from the entry's fields.
    pub fn computed_hash(&self) -> Digest {
        Digest::of(&Self::preimage(
            self.height,
            &self.payload,
            self.verdict.as_ref(),
            self.committed_at,
            &self.prev_hash,
        ))
    }
}

/// An entry as stored on a node: hash preimage plus hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    pub preimage: Vec<u8>,
    pub entry_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stored entry is not decodable: {0}")]
pub struct DecodeError(String);

impl RawEntry {
    pub fn seal(
        height: u64,
        payload: &EntryPayload,
        verdict: Option<&Verdict>,
        committed_at: SimTime,
        prev_hash: &Digest,
    ) -> Self {
        let preimage = LedgerEntry::preimage(height, payload, verdict, committed_at, prev_hash);
        let entry_hash = Digest::of(&preimage);
        RawEntry {
            preimage,
            entry_hash,
        }
    }

    fn fixed_fields(&self) -> Option<(u64, SimTime, Digest)> {
        let p = &self.preimage;
        if p.len() < HEIGHT_LEN + TIME_LEN + DIGEST_LEN {
            return None;
        }
        let height = u64::from_be_bytes(p[..HEIGHT_LEN].try_into().ok()?);
        let tail = p.len() - DIGEST_LEN;
        let committed_at = u64::from_be_bytes(p[tail - TIME_LEN..tail].try_into().ok()?);
        let prev_hash = Digest::from_bytes(p[tail..].try_into().ok()?);
        Some((height, committed_at, prev_hash))
    }

    pub fn decode(&self) -> Result<LedgerEntry, DecodeError> {
        let (height, committed_at, prev_hash) = self
            .fixed_fields()
            .ok_or_else(|| DecodeError("preimage too short".into()))?;
        let body = &self.preimage[HEIGHT_LEN..self.preimage.len() - DIGEST_LEN - TIME_LEN];
        let mut values =
            serde_json::Deserializer::from_slice(body).into_iter::<serde_json::Value>();
        let mut next = |what: &str| {
            values
                .next()
                .ok_or_else(|| DecodeError(format!("missing {what}")))?
                .map_err(|e| DecodeError(e.to_string()))
        };
        let payload =
            serde_json::from_value(next("payload")?).map_err(|e| DecodeError(e.to_string()))?;
        let verdict =
            serde_json::from_value(next("verdict")?).map_err(|e| DecodeError(e.to_string()))?;
        Ok(LedgerEntry {
            height,
            payload,
            verdict,
            committed_at,
            prev_hash,
            entry_hash: self.entry_hash,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("chain broken at height {height}: {reason}")]
pub struct ChainDefect {
    pub height: u64,
    pub reason: String,
}

/// Recomputes the hash chain. Returns the first height whose hash or
/// linkage fails.
///
/// A truncated tail still verifies; detecting it takes a comparison of
/// heights across nodes.
pub fn verify_chain(entries: &[RawEntry]) -> Result<(), ChainDefect> {
    let mut prev = Digest::ZERO;
    for (i, raw) in entries.iter().enumerate() {
        let height = i as u64;
        let bad = |reason: &str| ChainDefect {
            height,
            reason: reason.to_owned(),
        };
        if Digest::of(&raw.preimage) != raw.entry_hash {
            return Err(bad("entry hash does not match contents"));
        }
        let (stored_height, _, prev_hash) =
            raw.fixed_fields().ok_or_else(|| bad("truncated entry"))?;
        if stored_height != height {
            return Err(bad("height out of sequence"));
        }
        if prev_hash != prev {
            return Err(bad("previous-hash link broken"));
        }
        prev = raw.entry_hash;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainHeader {
    pub format: String,
    pub node: usize,
    pub spec: ContractSpec,
    pub config: ConsensusConfig,
}

/// Newline-delimited canonical export of a node's chain, header first.
pub fn export_chain(header: &ChainHeader, entries: &[RawEntry]) -> String {
    let mut out = to_canonical_json(header);
    out.push('\n');
    for raw in entries {
        let entry = raw
            .decode()
            .expect("entries sealed by a node always decode");
        out.push_str(&to_canonical_json(&entry));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty chain file")]
    Empty,
}

pub fn parse_chain(text: &str) -> Result<(ChainHeader, Vec<LedgerEntry>), ChainParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(ChainParseError::Empty)?;
    let header: ChainHeader =
        serde_json::from_str(first).map_err(|e| ChainParseError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    if header.format != CHAIN_FORMAT {
        return Err(ChainParseError::Malformed {
            line: 1,
            message: format!("expected format {CHAIN_FORMAT}, found {}", header.format),
        });
    }
    let entries = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ChainParseError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<LedgerEntry>, _>>()?;
    Ok((header, entries))
}

/// Checks an exported chain: hash linkage, commit-time order, and a replay of
/// every evaluated entry through the contract state machine.
pub fn verify_exported_chain(
    spec: &ContractSpec,
    entries: &[LedgerEntry],
) -> Result<(), ChainDefect> {
    let mut prev = Digest::ZERO;
    let mut last_commit = 0;
    let mut state = spec.initial_state();
    for (i, entry) in entries.iter().enumerate() {
        let height = i as u64;
        let bad = |reason: String| ChainDefect { height, reason };
        if entry.height != height {
            return Err(bad(format!("height {} out of sequence", entry.height)));
        }
        if entry.prev_hash != prev {
            return Err(bad("previous-hash link broken".into()));
        }
        if entry.computed_hash() != entry.entry_hash {
            return Err(bad("entry hash does not match contents".into()));
        }
        if entry.committed_at < last_commit {
            return Err(bad(format!(
                "out-of-order commit time {} after {last_commit}",
                entry.committed_at
            )));
        }
        match &entry.payload {
            EntryPayload::Operation { op } => {
                let (verdict, next) =
                    evaluate(spec, &state, op).map_err(|e| bad(format!("replay failed: {e}")))?;
                if Some(&verdict) != entry.verdict.as_ref() {
                    return Err(bad(format!(
                        "recorded verdict differs from replay ({:?})",
                        verdict.outcome
                    )));
                }
                state = next;
            }
            EntryPayload::Timeout { event } => {
                let (events, next) = expire_deadlines(spec, &state, event.fired_at);
                if events.as_slice() != std::slice::from_ref(event) {
                    return Err(bad("recorded timeout differs from replay".into()));
                }
                state = next;
            }
            EntryPayload::Record { .. } => {}
        }
        prev = entry.entry_hash;
        last_commit = entry.committed_at;
    }
    Ok(())
}
