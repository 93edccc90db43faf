//! Hybrid deployment: c-ops are judged by the centralised enforcer, d-ops are
//! executed on the replicated ledger. The router is the only coupling point;
//! the enforcer learns about on-chain fulfilment only through evidence.

use std::collections::BTreeSet;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccc::{Enforcer, EnforcerError};
use crate::contract::{ContractSpec, OperationInstance, OperationKind, SimTime, Verdict};
use crate::ledger::{
    Attestation, Cluster, CommitReceipt, ConsensusConfig, ConsensusMode, LedgerError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HybridMode {
    /// The enforcer judges everything; the chain keeps a passive record.
    IndelibleLog,
    /// Only the payment is executed on-chain.
    PaymentChannel,
    /// Any total split of the kinds.
    OffChainExecution,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationPartition {
    pub c_ops: BTreeSet<OperationKind>,
    pub d_ops: BTreeSet<OperationKind>,
}

impl OperationPartition {
    pub fn new<'a>(
        c_ops: impl IntoIterator<Item = &'a str>,
        d_ops: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        OperationPartition {
            c_ops: c_ops.into_iter().map(OperationKind::new).collect(),
            d_ops: d_ops.into_iter().map(OperationKind::new).collect(),
        }
    }

    /// Every kind of `spec` in `c_ops`.
    pub fn all_off_chain(spec: &ContractSpec) -> Self {
        OperationPartition {
            c_ops: spec.operation_kinds.clone(),
            d_ops: BTreeSet::new(),
        }
    }

    /// Every kind of `spec` in `d_ops` except those listed.
    pub fn on_chain_except<'a>(
        spec: &ContractSpec,
        off_chain: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        let c_ops: BTreeSet<_> = off_chain.into_iter().map(OperationKind::new).collect();
        let d_ops = spec.operation_kinds.difference(&c_ops).cloned().collect();
        OperationPartition { c_ops, d_ops }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionDefect {
    Overlap(OperationKind),
    UnroutedKind(OperationKind),
    UnknownKind(OperationKind),
    PaymentMustBeOnChain,
    OnlyPaymentOnChain(OperationKind),
    ContractualKindOnChain(OperationKind),
}

impl fmt::Display for PartitionDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionDefect::Overlap(k) => write!(f, "{k} is listed in both c_ops and d_ops"),
            PartitionDefect::UnroutedKind(k) => {
                write!(f, "{k} is listed in neither c_ops nor d_ops")
            }
            PartitionDefect::UnknownKind(k) => {
                write!(f, "{k} is not an operation kind of the contract")
            }
            PartitionDefect::PaymentMustBeOnChain => {
                f.write_str("payment channel mode needs the payment in d_ops")
            }
            PartitionDefect::OnlyPaymentOnChain(k) => {
                write!(
                    f,
                    "payment channel mode allows only the payment in d_ops, found {k}"
                )
            }
            PartitionDefect::ContractualKindOnChain(k) => {
                write!(
                    f,
                    "indelible log mode keeps contractual kinds off-chain, found {k} in d_ops"
                )
            }
        }
    }
}

/// Checks totality of the split and the constraints of `mode`. Aliases are
/// resolved to their canonical kind.
pub fn validate_partition(
    spec: &ContractSpec,
    partition: &OperationPartition,
    mode: HybridMode,
) -> Vec<PartitionDefect> {
    let mut defects = Vec::new();
    let mut resolve = |kinds: &BTreeSet<OperationKind>| -> BTreeSet<OperationKind> {
        let mut out = BTreeSet::new();
        for k in kinds {
            match spec.resolve_kind(k) {
                Some(r) => {
                    out.insert(r);
                }
                None => defects.push(PartitionDefect::UnknownKind(k.clone())),
            }
        }
        out
    };
    let c_ops = resolve(&partition.c_ops);
    let d_ops = resolve(&partition.d_ops);
    defects.extend(
        c_ops
            .intersection(&d_ops)
            .cloned()
            .map(PartitionDefect::Overlap),
    );
    for kind in &spec.operation_kinds {
        if !c_ops.contains(kind) && !d_ops.contains(kind) {
            defects.push(PartitionDefect::UnroutedKind(kind.clone()));
        }
    }
    match mode {
        HybridMode::IndelibleLog => {
            let contractual = spec.contractual_kinds();
            defects.extend(
                d_ops
                    .iter()
                    .filter(|k| contractual.contains(*k))
                    .cloned()
                    .map(PartitionDefect::ContractualKindOnChain),
            );
        }
        HybridMode::PaymentChannel => match &spec.payment_kind {
            Some(payment) => {
                if !d_ops.contains(payment) {
                    defects.push(PartitionDefect::PaymentMustBeOnChain);
                }
                defects.extend(
                    d_ops
                        .iter()
                        .filter(|k| *k != payment)
                        .cloned()
                        .map(PartitionDefect::OnlyPaymentOnChain),
                );
            }
            None => defects.push(PartitionDefect::PaymentMustBeOnChain),
        },
        HybridMode::OffChainExecution => {}
    }
    defects
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub receipt: CommitReceipt,
    pub claimed_obligation: OperationKind,
    pub presented_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoutingOutcome {
    SentToCcc(Verdict),
    SentToChain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterFees {
    pub c_op: Decimal,
    pub d_op: Decimal,
}

impl RouterFees {
    pub fn total(&self) -> Decimal {
        self.c_op + self.d_op
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouterError {
    #[error("invalid partition: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidPartition(Vec<PartitionDefect>),
    #[error("{0} is routed to neither side")]
    UnroutedKind(OperationKind),
    #[error("receipt does not match any committed entry")]
    UnknownReceipt,
    #[error("receipt is not final at {presented_at}")]
    NotFinalized { presented_at: SimTime },
    #[error("receipt is for {actual}, evidence claims {claimed}")]
    KindMismatch {
        claimed: OperationKind,
        actual: OperationKind,
    },
    #[error(transparent)]
    Enforcer(#[from] EnforcerError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone)]
pub struct Router {
    mode: HybridMode,
    partition: OperationPartition,
    ccc: Enforcer,
    cluster: Cluster,
}

impl Router {
    pub fn new(
        spec: ContractSpec,
        partition: OperationPartition,
        mode: HybridMode,
        config: ConsensusConfig,
    ) -> Result<Self, RouterError> {
        let defects = validate_partition(&spec, &partition, mode);
        if !defects.is_empty() {
            return Err(RouterError::InvalidPartition(defects));
        }
        let resolve = |kinds: &BTreeSet<OperationKind>| -> BTreeSet<OperationKind> {
            kinds.iter().filter_map(|k| spec.resolve_kind(k)).collect()
        };
        let partition = OperationPartition {
            c_ops: resolve(&partition.c_ops),
            d_ops: resolve(&partition.d_ops),
        };
        let chain_spec = ContractSpec::record_only(
            format!("{}-chain", spec.name),
            partition.d_ops.iter().cloned(),
        );
        let cluster = Cluster::new(chain_spec, config)?;
        let ccc = Enforcer::new(spec)?;
        Ok(Router {
            mode,
            partition,
            ccc,
            cluster,
        })
    }

    pub fn mode(&self) -> HybridMode {
        self.mode
    }

    pub fn partition(&self) -> &OperationPartition {
        &self.partition
    }

    pub fn ccc(&self) -> &Enforcer {
        &self.ccc
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn cluster_mut(&mut self) -> &mut Cluster {
        &mut self.cluster
    }

    /// Sends `op` to the side its kind is assigned to. In indelible log mode
    /// every c-op is also mirrored onto the chain with the enforcer's verdict.
    pub fn route(&mut self, op: OperationInstance) -> Result<RoutingOutcome, RouterError> {
        let kind = self
            .ccc
            .spec()
            .resolve_kind(&op.kind)
            .ok_or_else(|| RouterError::UnroutedKind(op.kind.clone()))?;
        if self.partition.d_ops.contains(&kind) {
            let id = self.cluster.broadcast_operation(op)?;
            return Ok(RoutingOutcome::SentToChain(id));
        }
        if !self.partition.c_ops.contains(&kind) {
            return Err(RouterError::UnroutedKind(kind));
        }
        let verdict = self.ccc.submit_operation(op.clone())?;
        if self.mode == HybridMode::IndelibleLog {
            match self.cluster.broadcast_record(op, verdict.clone()) {
                Ok(_) | Err(LedgerError::DuplicateOperation(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(RoutingOutcome::SentToCcc(verdict))
    }

    /// Advances the chain; returns receipts that became final.
    pub fn step_chain(&mut self, until: SimTime) -> Result<Vec<CommitReceipt>, RouterError> {
        Ok(self.cluster.step(until)?)
    }

    pub fn settle_chain(&mut self, horizon: SimTime) -> Vec<CommitReceipt> {
        self.cluster.settle(horizon)
    }

    pub fn advance_ccc(&mut self, to: SimTime) -> Result<(), RouterError> {
        self.ccc.advance_time(to)?;
        Ok(())
    }

    /// Validates a commit receipt against the chain and replays the committed
    /// operation into the enforcer. The enforcer judges it at the receipt's
    /// commit instant unless its clock has already moved past that, and
    /// records it at `presented_at`.
    pub fn submit_evidence(&mut self, evidence: Evidence) -> Result<Verdict, RouterError> {
        let receipt = &evidence.receipt;
        let hash = receipt.entry_hash.ok_or(RouterError::UnknownReceipt)?;
        let entry = self
            .cluster
            .entry(&hash)
            .ok_or(RouterError::UnknownReceipt)?;
        let op = entry
            .payload
            .op()
            .ok_or(RouterError::UnknownReceipt)?
            .clone();
        if op.op_id != receipt.op_id || entry.committed_at != receipt.committed_at {
            return Err(RouterError::UnknownReceipt);
        }
        let not_final = RouterError::NotFinalized {
            presented_at: evidence.presented_at,
        };
        let stored = self.cluster.find_receipt(&hash).ok_or(not_final.clone())?;
        if evidence.presented_at < stored.finalized_at || !self.attested(stored) {
            return Err(not_final);
        }
        let spec = self.ccc.spec();
        let actual = spec.resolve_kind(&op.kind).unwrap_or(op.kind.clone());
        let claimed = spec
            .resolve_kind(&evidence.claimed_obligation)
            .unwrap_or(evidence.claimed_obligation.clone());
        if actual != claimed {
            return Err(RouterError::KindMismatch { claimed, actual });
        }
        let committed_at = stored.committed_at;
        let presented = OperationInstance {
            submitted_at: evidence.presented_at,
            ..op
        };
        Ok(self.ccc.submit_evidenced(presented, committed_at)?)
    }

    fn attested(&self, receipt: &CommitReceipt) -> bool {
        let config = self.cluster.config();
        match (&receipt.attestation, config.mode) {
            (Attestation::Signers { nodes }, ConsensusMode::PermissionedQuorum) => {
                nodes.len() >= config.quorum
            }
            (Attestation::Depth { .. }, ConsensusMode::PublicEventual) => {
                receipt.confirmations >= config.confirmation_depth
            }
            _ => false,
        }
    }

    pub fn accrued_fees(&self) -> RouterFees {
        RouterFees {
            c_op: Decimal::ZERO,
            d_op: self.cluster.accrued_fees(),
        }
    }
}
