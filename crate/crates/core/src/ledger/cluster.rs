//! Discrete-event model of the node cluster.
//!
//! Every node holds the same contract state machine and judges each operation
//! against the timestamp the operation carries, so correct nodes always agree.
//! Delivery latency, faults and the consensus mode only decide *when* (and
//! whether) an entry commits.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::canonical::Digest;
use crate::contract::{
    evaluate, expire_deadlines, validate_spec, ContractSpec, ContractState, OperationInstance,
    OperationKind, Outcome, Phase, Reason, SimTime, TimeoutEvent, Verdict,
};

use super::chain::{export_chain, ChainHeader, EntryPayload, LedgerEntry, RawEntry, CHAIN_FORMAT};
use super::config::{ConsensusConfig, ConsensusMode, LatencyModel};
use super::{fees_for, Attestation, CommitReceipt, Fault, LedgerError, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub phase: Phase,
    pub digest: Digest,
    pub height: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedTimeout {
    pub event: TimeoutEvent,
    pub committed_at: SimTime,
}

#[derive(Debug, Clone)]
struct Node {
    state: ContractState,
    chain: Vec<RawEntry>,
    fault: Option<Fault>,
}

impl Node {
    fn live(&self) -> bool {
        self.fault != Some(Fault::Crash)
    }

    fn append(
        &mut self,
        payload: &EntryPayload,
        verdict: Option<&Verdict>,
        committed_at: SimTime,
    ) -> Digest {
        let prev = self
            .chain
            .last()
            .map(|e| e.entry_hash)
            .unwrap_or(Digest::ZERO);
        let raw = RawEntry::seal(
            self.chain.len() as u64,
            payload,
            verdict,
            committed_at,
            &prev,
        );
        let hash = raw.entry_hash;
        self.chain.push(raw);
        hash
    }
}

#[derive(Debug, Clone)]
struct Pending {
    op: OperationInstance,
    /// Verdict decided elsewhere; the nodes only record it.
    recorded: Option<Verdict>,
    delivery: Vec<Option<SimTime>>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    at: SimTime,
    used: usize,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    spec: ContractSpec,
    config: ConsensusConfig,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    now: SimTime,
    pending: BTreeMap<(SimTime, String), Pending>,
    seen: HashSet<String>,
    last_commit: SimTime,
    block: Option<Block>,
    unfinalized: VecDeque<CommitReceipt>,
    receipts: Vec<CommitReceipt>,
    timeouts: Vec<CommittedTimeout>,
    fees_by_kind: BTreeMap<OperationKind, Decimal>,
    chained: usize,
    flagged: BTreeSet<NodeId>,
}

impl Cluster {
    pub fn new(spec: ContractSpec, config: ConsensusConfig) -> Result<Self, LedgerError> {
        let defects = validate_spec(&spec);
        if !defects.is_empty() {
            return Err(LedgerError::InvalidSpec(defects));
        }
        let defects = config.validate();
        if !defects.is_empty() {
            return Err(LedgerError::InvalidConfig(defects));
        }
        let node = Node {
            state: spec.initial_state(),
            chain: Vec::new(),
            fault: None,
        };
        Ok(Cluster {
            nodes: vec![node; config.node_count],
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            spec,
            config,
            now: 0,
            pending: BTreeMap::new(),
            seen: HashSet::new(),
            last_commit: 0,
            block: None,
            unfinalized: VecDeque::new(),
            receipts: Vec::new(),
            timeouts: Vec::new(),
            fees_by_kind: BTreeMap::new(),
            chained: 0,
            flagged: BTreeSet::new(),
        })
    }

    pub fn spec(&self) -> &ContractSpec {
        &self.spec
    }

    pub fn config(&self) -> &ConsensusConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len() + self.unfinalized.len()
    }

    /// Finalized receipts in commit order.
    pub fn receipts(&self) -> &[CommitReceipt] {
        &self.receipts
    }

    pub fn timeouts(&self) -> &[CommittedTimeout] {
        &self.timeouts
    }

    pub fn flagged(&self) -> &BTreeSet<NodeId> {
        &self.flagged
    }

    pub fn find_receipt(&self, entry_hash: &Digest) -> Option<&CommitReceipt> {
        self.receipts
            .iter()
            .find(|r| r.entry_hash.as_ref() == Some(entry_hash))
    }

    /// Whether some correct node holds an entry with this hash.
    pub fn has_entry(&self, entry_hash: &Digest) -> bool {
        self.reference_node()
            .map(|n| n.chain.iter().any(|e| &e.entry_hash == entry_hash))
            .unwrap_or(false)
    }

    /// Contract state held by a correct node.
    pub fn contract_state(&self) -> Option<&ContractState> {
        self.reference_node().map(|n| &n.state)
    }

    /// The decoded entry with this hash on a correct node's chain.
    pub fn entry(&self, entry_hash: &Digest) -> Option<LedgerEntry> {
        self.reference_node()?
            .chain
            .iter()
            .find(|e| &e.entry_hash == entry_hash)
            .and_then(|e| e.decode().ok())
    }

    fn node(&self, id: NodeId) -> Result<&Node, LedgerError> {
        self.nodes.get(id.0).ok_or(LedgerError::UnknownNode(id))
    }

    fn reference_node(&self) -> Option<&Node> {
        self.nodes
            .iter()
            .find(|n| n.fault.is_none())
            .or_else(|| self.nodes.iter().find(|n| n.live()))
    }

    pub fn chain(&self, id: NodeId) -> Result<&[RawEntry], LedgerError> {
        Ok(&self.node(id)?.chain)
    }

    pub fn node_state(&self, id: NodeId) -> Result<NodeState, LedgerError> {
        let node = self.node(id)?;
        Ok(NodeState {
            phase: node.state.phase.clone(),
            digest: node.state.digest(),
            height: node.chain.len() as u64,
            fault: node.fault,
        })
    }

    pub fn export_chain(&self, id: NodeId) -> Result<String, LedgerError> {
        let header = ChainHeader {
            format: CHAIN_FORMAT.to_owned(),
            node: id.0,
            spec: self.spec.clone(),
            config: self.config.clone(),
        };
        Ok(export_chain(&header, &self.node(id)?.chain))
    }

    pub fn inject_fault(&mut self, id: NodeId, fault: Fault) -> Result<(), LedgerError> {
        let node = self
            .nodes
            .get_mut(id.0)
            .ok_or(LedgerError::UnknownNode(id))?;
        if node.fault.is_some() {
            return Err(LedgerError::AlreadyFaulted(id));
        }
        node.fault = Some(fault);
        Ok(())
    }

    /// Total fees for every chained transaction.
    pub fn accrued_fees(&self) -> Decimal {
        fees_for(&self.config, self.chained)
    }

    pub fn fees_by_kind(&self) -> &BTreeMap<OperationKind, Decimal> {
        &self.fees_by_kind
    }

    /// Per-node delivery instants of a pending operation; `None` for nodes
    /// that never receive it.
    pub fn delivery_times(&self, op_id: &str) -> Option<Vec<Option<SimTime>>> {
        self.pending
            .values()
            .find(|p| p.op.op_id == op_id)
            .map(|p| p.delivery.clone())
    }

    /// Queues `op` for evaluation by every node.
    pub fn broadcast_operation(&mut self, op: OperationInstance) -> Result<String, LedgerError> {
        if self.spec.resolve_kind(&op.kind).is_none() {
            return Err(crate::contract::ContractError::UnknownOperationKind(op.kind).into());
        }
        self.enqueue(op, None)
    }

    /// Queues `op` to be recorded with a verdict reached elsewhere. The nodes
    /// do not evaluate it.
    pub fn broadcast_record(
        &mut self,
        op: OperationInstance,
        verdict: Verdict,
    ) -> Result<String, LedgerError> {
        self.enqueue(op, Some(verdict))
    }

    fn enqueue(
        &mut self,
        op: OperationInstance,
        recorded: Option<Verdict>,
    ) -> Result<String, LedgerError> {
        if op.submitted_at < self.now {
            return Err(LedgerError::TimeRegression {
                now: self.now,
                requested: op.submitted_at,
            });
        }
        if !self.seen.insert(op.op_id.clone()) {
            return Err(LedgerError::DuplicateOperation(op.op_id));
        }
        let delivery = (0..self.nodes.len())
            .map(|i| {
                let delay = self.sample_delay();
                self.nodes[i].live().then_some(op.submitted_at + delay)
            })
            .collect();
        let id = op.op_id.clone();
        self.pending.insert(
            (op.submitted_at, id.clone()),
            Pending {
                op,
                recorded,
                delivery,
            },
        );
        Ok(id)
    }

    fn sample_delay(&mut self) -> SimTime {
        match self.config.latency {
            LatencyModel::Zero => 0,
            LatencyModel::Constant { delay_s } => delay_s,
            LatencyModel::Uniform { min_s, max_s } => self.rng.gen_range(min_s..=max_s),
        }
    }

    /// Runs the simulation up to `until` and returns the receipts that became
    /// final on the way, in commit order.
    pub fn step(&mut self, until: SimTime) -> Result<Vec<CommitReceipt>, LedgerError> {
        if until < self.now {
            return Err(LedgerError::TimeRegression {
                now: self.now,
                requested: until,
            });
        }
        self.advance(until, until);
        self.now = until;
        Ok(self.finalize(until))
    }

    /// Commits everything still pending, however long it takes, firing
    /// deadlines no later than `horizon`. Returns the receipts finalized.
    pub fn settle(&mut self, horizon: SimTime) -> Vec<CommitReceipt> {
        self.advance(SimTime::MAX, horizon.max(self.now));
        let out = self.finalize(SimTime::MAX);
        self.now = self.now.max(horizon).max(self.last_commit);
        out
    }

    fn finalize(&mut self, until: SimTime) -> Vec<CommitReceipt> {
        let mut out = Vec::new();
        while self
            .unfinalized
            .front()
            .is_some_and(|r| r.finalized_at <= until)
        {
            let r = self.unfinalized.pop_front().expect("front checked");
            self.receipts.push(r.clone());
            out.push(r);
        }
        out
    }

    fn live_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.live()).count()
    }

    fn advance(&mut self, commit_limit: SimTime, deadline_limit: SimTime) {
        loop {
            if self.live_count() < self.config.agreement_threshold() {
                return;
            }
            let next_deadline = self.reference_node().and_then(|n| n.state.next_expiry());
            let head = self.pending.keys().next().map(|(at, _)| *at);
            match (next_deadline, head) {
                (Some(d), h) if d <= deadline_limit && h.is_none_or(|s| d <= s) => {
                    self.fire_deadline(d)
                }
                (_, Some(_)) => {
                    if !self.commit_head(commit_limit) {
                        return;
                    }
                }
                _ => return,
            }
        }
    }

    fn fire_deadline(&mut self, at: SimTime) {
        let committed_at = at.max(self.last_commit);
        let mut event = None;
        for node in self.nodes.iter_mut().filter(|n| n.live()) {
            let (events, next) = expire_deadlines(&self.spec, &node.state, at);
            let fired = events.into_iter().next().expect("deadline due");
            node.state = next;
            let payload = EntryPayload::Timeout {
                event: fired.clone(),
            };
            node.append(&payload, None, committed_at);
            event = Some(fired);
        }
        self.last_commit = committed_at;
        self.timeouts.push(CommittedTimeout {
            event: event.expect("a live node exists"),
            committed_at,
        });
    }

    /// Tries to commit the earliest pending operation no later than `limit`.
    fn commit_head(&mut self, limit: SimTime) -> bool {
        let Some((key, pending)) = self.pending.first_key_value() else {
            return false;
        };
        let threshold = self.config.agreement_threshold();

        // (verdict voted, post state) per live node, with its vote instant.
        let mut votes: Vec<(NodeId, SimTime, Verdict, Option<ContractState>)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let (true, Some(delivered)) = (node.live(), pending.delivery[i]) else {
                continue;
            };
            let (honest, next) = match &pending.recorded {
                Some(v) => (v.clone(), None),
                None => {
                    let (v, next) = evaluate(&self.spec, &node.state, &pending.op)
                        .expect("kind checked at broadcast");
                    (v, Some(next))
                }
            };
            let voted = match node.fault {
                Some(Fault::VerdictFlip) => flip(&honest),
                _ => honest,
            };
            votes.push((NodeId(i), delivered, voted, next));
        }

        let mut groups: Vec<(Verdict, Vec<(NodeId, SimTime)>)> = Vec::new();
        for (id, at, verdict, _) in &votes {
            match groups.iter_mut().find(|(v, _)| v == verdict) {
                Some((_, members)) => members.push((*id, *at)),
                None => groups.push((verdict.clone(), vec![(*id, *at)])),
            }
        }
        let Some((winner, mut members)) = groups.into_iter().find(|(_, m)| m.len() >= threshold)
        else {
            return false;
        };
        members.sort_by_key(|(id, at)| (*at, *id));
        let voted_at = members[threshold - 1].1;
        let agreed_at = voted_at.max(self.last_commit);

        let (committed_at, finalized_at, attestation, confirmations) = match self.config.mode {
            ConsensusMode::PermissionedQuorum => {
                let signers = members
                    .iter()
                    .filter(|(_, at)| *at <= agreed_at)
                    .map(|(id, _)| *id)
                    .collect();
                (
                    agreed_at,
                    agreed_at,
                    Attestation::Signers { nodes: signers },
                    1,
                )
            }
            ConsensusMode::PublicEventual => {
                let interval = self.config.block_interval_s;
                // The first block after the vote, but never before the last
                // commit, and never into a full block.
                let boundary_from = |t: SimTime| t.div_ceil(interval) * interval;
                let mut at =
                    ((voted_at / interval + 1) * interval).max(boundary_from(self.last_commit));
                if let Some(b) = self.block {
                    if b.at == at && b.used >= self.config.block_capacity() {
                        at += interval;
                    }
                }
                let depth = self.config.confirmation_depth;
                let finality = at + interval * u64::from(depth - 1);
                (at, finality, Attestation::Depth { depth }, depth)
            }
        };
        if committed_at > limit {
            return false;
        }
        if self.config.mode == ConsensusMode::PublicEventual {
            self.block = Some(match self.block {
                Some(b) if b.at == committed_at => Block {
                    at: b.at,
                    used: b.used + 1,
                },
                _ => Block {
                    at: committed_at,
                    used: 1,
                },
            });
        }

        let key = key.clone();
        let pending = self.pending.remove(&key).expect("head exists");
        let chained = winner.is_cc() || pending.recorded.is_some();
        let payload = match pending.recorded {
            Some(_) => EntryPayload::Record {
                op: pending.op.clone(),
            },
            None => EntryPayload::Operation {
                op: pending.op.clone(),
            },
        };
        let mut entry_hash = None;
        for (id, _, verdict, next) in votes {
            if verdict != winner {
                self.flagged.insert(id);
            }
            let node = &mut self.nodes[id.0];
            if let Some(next) = next {
                node.state = next;
            }
            if chained {
                entry_hash = Some(node.append(&payload, Some(&winner), committed_at));
            }
        }
        if chained {
            self.chained += 1;
            *self
                .fees_by_kind
                .entry(pending.op.kind.clone())
                .or_insert(Decimal::ZERO) += self.config.fee_per_tx;
        }
        self.last_commit = committed_at;
        self.unfinalized.push_back(CommitReceipt {
            op_id: pending.op.op_id.clone(),
            kind: pending.op.kind.clone(),
            verdict: winner,
            submitted_at: pending.op.submitted_at,
            committed_at,
            finalized_at,
            entry_hash,
            confirmations,
            attestation,
        });
        true
    }
}

fn flip(v: &Verdict) -> Verdict {
    match v.outcome {
        Outcome::CC => Verdict::non_compliant(Reason::NotPermittedInState, v.state_hash_after),
        Outcome::NCC => Verdict::compliant(v.state_hash_after),
    }
}
