//! Replicated ledger: a cluster of simulated untrusted nodes, each running the
//! same contract state machine and keeping its own hash-chained ledger.

mod chain;
mod cluster;
mod config;

use std::collections::BTreeSet;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::{
    export_chain, parse_chain, verify_chain, verify_exported_chain, ChainDefect, ChainHeader,
    ChainParseError, DecodeError, EntryPayload, LedgerEntry, RawEntry, CHAIN_FORMAT,
};
pub use cluster::{Cluster, CommittedTimeout, NodeState};
pub use config::{
    ConfigDefect, ConsensusConfig, ConsensusMode, LatencyModel, BITCOIN_AVG_FEE_USD,
    ETHEREUM_AVG_FEE_USD,
};

use crate::canonical::Digest;
use crate::contract::{ContractError, OperationKind, SimTime, SpecDefect, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// The node stops receiving and voting.
    Crash,
    /// The node inverts every verdict it votes.
    VerdictFlip,
}

/// How a receipt proves finality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Attestation {
    Signers { nodes: BTreeSet<NodeId> },
    Depth { depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub op_id: String,
    pub kind: OperationKind,
    pub verdict: Verdict,
    pub submitted_at: SimTime,
    /// Instant the entry was appended (block time in eventual mode).
    pub committed_at: SimTime,
    /// Instant the entry became final.
    pub finalized_at: SimTime,
    /// `None` for non-compliant operations, which are not chained.
    pub entry_hash: Option<Digest>,
    pub confirmations: u32,
    pub attestation: Attestation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("time regression: cluster is at {now}, requested {requested}")]
    TimeRegression { now: SimTime, requested: SimTime },
    #[error("operation {0} was already broadcast")]
    DuplicateOperation(String),
    #[error("no node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already faulted")]
    AlreadyFaulted(NodeId),
    #[error("invalid consensus config: {}", join(.0))]
    InvalidConfig(Vec<ConfigDefect>),
    #[error("invalid contract: {}", join(.0))]
    InvalidSpec(Vec<SpecDefect>),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// `fee_per_tx` times the number of chained transactions.
pub fn fees_for(config: &ConsensusConfig, chained: usize) -> Decimal {
    config.fee_per_tx * Decimal::from(chained)
}
