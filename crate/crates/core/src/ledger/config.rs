use std::fmt;

use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

/// Average per-transaction fee observed on Bitcoin, USD.
pub const BITCOIN_AVG_FEE_USD: Decimal = Decimal::from_parts(5490, 0, 0, false, 2);
/// Average per-transaction fee observed on Ethereum, USD.
pub const ETHEREUM_AVG_FEE_USD: Decimal = Decimal::from_parts(415, 0, 0, false, 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusMode {
    /// Strong consistency: an entry commits once a quorum of identical votes
    /// exists.
    PermissionedQuorum,
    /// Eventual consistency: entries are packed into periodic blocks and are
    /// final after `confirmation_depth` blocks.
    PublicEventual,
}

/// Per-node delivery delay, sampled from the cluster's seeded generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LatencyModel {
    Zero,
    Constant { delay_s: u64 },
    Uniform { min_s: u64, max_s: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsensusConfig {
    pub mode: ConsensusMode,
    pub node_count: usize,
    pub quorum: usize,
    pub confirmation_depth: u32,
    pub max_tps: Decimal,
    pub block_interval_s: u64,
    pub latency: LatencyModel,
    pub fee_per_tx: Decimal,
    pub rng_seed: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig::permissioned(4)
    }
}

impl ConsensusConfig {
    /// A fee-free permissioned cluster with the smallest majority quorum and
    /// zero latency.
    pub fn permissioned(node_count: usize) -> Self {
        ConsensusConfig {
            mode: ConsensusMode::PermissionedQuorum,
            node_count,
            quorum: node_count / 2 + 1,
            confirmation_depth: 1,
            max_tps: Decimal::from(7),
            block_interval_s: 1,
            latency: LatencyModel::Zero,
            fee_per_tx: Decimal::ZERO,
            rng_seed: 0,
        }
    }

    /// Public proof-of-work chain: about 7 tx/s, 10 minute blocks, final
    /// after 6 confirmations (about an hour).
    pub fn public_bitcoin_like() -> Self {
        ConsensusConfig {
            mode: ConsensusMode::PublicEventual,
            node_count: 4,
            quorum: 3,
            confirmation_depth: 6,
            max_tps: Decimal::from(7),
            block_interval_s: 600,
            latency: LatencyModel::Zero,
            fee_per_tx: BITCOIN_AVG_FEE_USD,
            rng_seed: 0,
        }
    }

    /// Same performance envelope as [`Self::public_bitcoin_like`], Ethereum's
    /// average fee.
    pub fn public_ethereum_like() -> Self {
        ConsensusConfig {
            fee_per_tx: ETHEREUM_AVG_FEE_USD,
            ..Self::public_bitcoin_like()
        }
    }

    pub fn majority(&self) -> usize {
        self.node_count / 2 + 1
    }

    /// Votes needed to agree on a verdict.
    pub fn agreement_threshold(&self) -> usize {
        match self.mode {
            ConsensusMode::PermissionedQuorum => self.quorum,
            ConsensusMode::PublicEventual => self.majority(),
        }
    }

    /// Transactions per block: `floor(max_tps * block_interval_s)`.
    pub fn block_capacity(&self) -> usize {
        (self.max_tps * Decimal::from(self.block_interval_s))
            .floor()
            .to_usize()
            .unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Vec<ConfigDefect> {
        let mut defects = Vec::new();
        if self.node_count == 0 {
            defects.push(ConfigDefect::NoNodes);
        }
        if self.fee_per_tx.is_sign_negative() {
            defects.push(ConfigDefect::NegativeFee);
        }
        if let LatencyModel::Uniform { min_s, max_s } = self.latency {
            if min_s > max_s {
                defects.push(ConfigDefect::InvertedLatencyRange);
            }
        }
        match self.mode {
            ConsensusMode::PermissionedQuorum => {
                if self.quorum < self.majority() {
                    defects.push(ConfigDefect::QuorumBelowMajority {
                        quorum: self.quorum,
                        minimum: self.majority(),
                    });
                }
                if self.quorum > self.node_count {
                    defects.push(ConfigDefect::QuorumExceedsNodes {
                        quorum: self.quorum,
                        node_count: self.node_count,
                    });
                }
            }
            ConsensusMode::PublicEventual => {
                if self.confirmation_depth == 0 {
                    defects.push(ConfigDefect::ZeroConfirmationDepth);
                }
                if self.max_tps <= Decimal::ZERO {
                    defects.push(ConfigDefect::NonPositiveThroughput);
                }
                if self.block_interval_s == 0 {
                    defects.push(ConfigDefect::ZeroBlockInterval);
                } else if self.max_tps > Decimal::ZERO && self.block_capacity() == 0 {
                    defects.push(ConfigDefect::EmptyBlocks);
                }
            }
        }
        defects
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigDefect {
    NoNodes,
    QuorumBelowMajority { quorum: usize, minimum: usize },
    QuorumExceedsNodes { quorum: usize, node_count: usize },
    ZeroConfirmationDepth,
    NonPositiveThroughput,
    ZeroBlockInterval,
    EmptyBlocks,
    NegativeFee,
    InvertedLatencyRange,
}

impl fmt::Display for ConfigDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigDefect::NoNodes => f.write_str("node_count must be positive"),
            ConfigDefect::QuorumBelowMajority { quorum, minimum } => {
                write!(f, "quorum {quorum} is below the majority {minimum}")
            }
            ConfigDefect::QuorumExceedsNodes { quorum, node_count } => {
                write!(f, "quorum {quorum} exceeds node_count {node_count}")
            }
            ConfigDefect::ZeroConfirmationDepth => {
                f.write_str("confirmation_depth must be at least 1")
            }
            ConfigDefect::NonPositiveThroughput => f.write_str("max_tps must be positive"),
            ConfigDefect::ZeroBlockInterval => f.write_str("block_interval_s must be positive"),
            ConfigDefect::EmptyBlocks => {
                f.write_str("max_tps * block_interval_s admits no transaction per block")
            }
            ConfigDefect::NegativeFee => f.write_str("fee_per_tx must not be negative"),
            ConfigDefect::InvertedLatencyRange => f.write_str("latency min_s exceeds max_s"),
        }
    }
}
