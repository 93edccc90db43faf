//! Runs a resolved scenario through one deployment on a single simulated
//! clock and collects the metrics report and exports.
//!
//! Operations are dispatched in trace order. Before each dispatch the ledger
//! is stepped to the operation's instant, so every commit that became final
//! by then has been acted on: the gateway answers deferred requests, and in
//! hybrid deployments the receipt is presented to the centralised enforcer as
//! evidence at its finality instant.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use hybrid_core::canonical::digest_of;
use hybrid_core::ccc::{Enforcer, EnforcerError, HistoryEvent};
use hybrid_core::contract::{
    ContractSpec, OperationInstance, OperationKind, Outcome, SimTime, TimeoutEvent,
};
use hybrid_core::gateway::{AccessResult, Gateway, GatewayError};
use hybrid_core::ledger::{Cluster, CommitReceipt, ConsensusConfig, Fault, LedgerError, NodeId};
use hybrid_core::router::{Evidence, HybridMode, OperationPartition, Router, RouterError};
use thiserror::Error;

use crate::report::{
    committed_tps, Fees, LatencyStats, MetricsReport, OpRecord, Route, TimeoutRecord,
};
use crate::scenario::{Deployment, ResolvedScenario};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Enforcer(#[from] EnforcerError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub report: MetricsReport,
    /// Centralised enforcer history, when the deployment has one.
    pub history: Option<String>,
    /// One chain export per node, when the deployment has a ledger.
    pub chains: Vec<String>,
}

impl RunOutput {
    /// Writes `report.json`, `history.ndjson` and `chain-node-<i>.ndjson`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut report = self.report.to_canonical_json();
        report.push('\n');
        fs::write(dir.join("report.json"), report)?;
        if let Some(history) = &self.history {
            fs::write(dir.join("history.ndjson"), history)?;
        }
        for (i, chain) in self.chains.iter().enumerate() {
            fs::write(dir.join(format!("chain-node-{i}.ndjson")), chain)?;
        }
        Ok(())
    }
}

pub fn run(scenario: &ResolvedScenario) -> Result<RunOutput, RunError> {
    let mut records = Records::new(scenario);
    let output = match scenario.deployment {
        Deployment::Centralised => run_centralised(scenario, &mut records)?,
        Deployment::Decentralised => run_decentralised(scenario, &mut records)?,
        Deployment::Hybrid => run_hybrid(scenario, &mut records)?,
    };
    Ok(output.finish(scenario, records))
}

fn is_request(spec: &ContractSpec, op: &OperationInstance) -> bool {
    spec.resolve_kind(&op.kind)
        .as_ref()
        .map(OperationKind::as_str)
        == Some(hybrid_core::contract::reference::kinds::PLACE_DATA_REQUEST)
}

/// Per-operation records, in trace order.
struct Records {
    ops: Vec<OpRecord>,
    index: HashMap<String, usize>,
}

impl Records {
    fn new(scenario: &ResolvedScenario) -> Self {
        let ops: Vec<OpRecord> = scenario
            .trace
            .ops
            .iter()
            .map(|op| OpRecord {
                op_id: op.op_id.clone(),
                kind: op.kind.clone(),
                initiator: op.initiator.name.clone(),
                submitted_at: op.submitted_at,
                decided_at: None,
                outcome: None,
                reason: None,
                route: Route::Ccc,
                served: None,
            })
            .collect();
        let index = ops
            .iter()
            .enumerate()
            .map(|(i, o)| (o.op_id.clone(), i))
            .collect();
        Records { ops, index }
    }

    fn get(&mut self, op_id: &str) -> Option<&mut OpRecord> {
        self.index.get(op_id).map(|&i| &mut self.ops[i])
    }

    fn decide(
        &mut self,
        op_id: &str,
        outcome: Outcome,
        reason: hybrid_core::contract::Reason,
        at: SimTime,
    ) {
        if let Some(r) = self.get(op_id) {
            r.outcome = Some(outcome);
            r.reason = Some(reason);
            r.decided_at = Some(at);
        }
    }

    fn route(&mut self, op_id: &str, route: Route) {
        if let Some(r) = self.get(op_id) {
            r.route = route;
        }
    }

    fn access(&mut self, op_id: &str, result: &AccessResult) {
        if let Some(r) = self.get(op_id) {
            r.served = match result {
                AccessResult::Served(_) => Some(true),
                AccessResult::Denied(_) => Some(false),
                AccessResult::Pending(_) => None,
            };
        }
    }
}

/// Deployment-specific results, before the common report assembly.
struct Partial {
    timeouts: Vec<TimeoutEvent>,
    fees: Fees,
    final_phase: hybrid_core::contract::Phase,
    final_digests: BTreeMap<String, hybrid_core::Digest>,
    flagged: Vec<NodeId>,
    served: usize,
    evidence: usize,
    history: Option<String>,
    chains: Vec<String>,
}

impl Partial {
    fn finish(self, scenario: &ResolvedScenario, records: Records) -> RunOutput {
        let ops = records.ops;
        let mut counts = BTreeMap::new();
        let mut bump = |k: &str, n: usize| *counts.entry(k.to_owned()).or_insert(0u64) += n as u64;
        bump("ops", ops.len());
        bump(
            "cc",
            ops.iter()
                .filter(|o| o.outcome == Some(Outcome::CC))
                .count(),
        );
        bump(
            "ncc",
            ops.iter()
                .filter(|o| o.outcome == Some(Outcome::NCC))
                .count(),
        );
        bump(
            "undecided",
            ops.iter().filter(|o| o.outcome.is_none()).count(),
        );
        bump("timeouts", self.timeouts.len());
        bump("served", self.served);
        bump(
            "refused",
            ops.iter().filter(|o| o.served == Some(false)).count(),
        );
        bump("evidence", self.evidence);

        let latency = LatencyStats::of(ops.iter().filter_map(OpRecord::latency).collect());
        let report = MetricsReport {
            scenario: scenario.name.clone(),
            deployment: scenario.deployment,
            trace_digest: digest_of(&scenario.trace),
            committed_tps: committed_tps(&ops),
            ops,
            timeouts: self
                .timeouts
                .iter()
                .map(|t| TimeoutRecord {
                    expected_kind: t.deadline.expected_kind.clone(),
                    effect: t.effect(),
                    fired_at: t.fired_at,
                    phase_before: t.phase_before.clone(),
                    phase_after: t.phase_after.clone(),
                })
                .collect(),
            latency,
            fees: self.fees,
            final_phase: self.final_phase,
            final_digests: self.final_digests,
            event_counts: counts,
            flagged_nodes: self.flagged,
        };
        RunOutput {
            report,
            history: self.history,
            chains: self.chains,
        }
    }
}

fn ccc_timeouts(enforcer: &Enforcer) -> Vec<TimeoutEvent> {
    enforcer
        .history()
        .iter()
        .filter_map(|r| match &r.event {
            HistoryEvent::Timeout { event } => Some(event.clone()),
            HistoryEvent::Operation { .. } => None,
        })
        .collect()
}

fn run_centralised(
    scenario: &ResolvedScenario,
    records: &mut Records,
) -> Result<Partial, RunError> {
    let mut gateway = Gateway::new(Enforcer::new(scenario.spec.clone())?);
    for op in &scenario.trace.ops {
        let (id, at) = (op.op_id.clone(), op.submitted_at);
        let verdict = if is_request(&scenario.spec, op) {
            let result = gateway.request_access(op.clone())?;
            records.access(&id, &result);
            last_verdict(gateway.enforcer())
        } else {
            gateway.enforcer_mut().submit_operation(op.clone())?
        };
        records.decide(&id, verdict.outcome, verdict.reason, at);
    }
    let end = scenario.trace.end().max(gateway.enforcer().now());
    gateway.enforcer_mut().advance_time(end)?;

    let ccc = gateway.enforcer();
    Ok(Partial {
        timeouts: ccc_timeouts(ccc),
        fees: Fees::default(),
        final_phase: ccc.state().phase.clone(),
        final_digests: BTreeMap::from([("ccc".to_owned(), ccc.state().digest())]),
        flagged: Vec::new(),
        served: gateway.served_count(),
        evidence: 0,
        history: Some(ccc.export_history()),
        chains: Vec::new(),
    })
}

fn cluster_digests(
    cluster: &Cluster,
    into: &mut BTreeMap<String, hybrid_core::Digest>,
) -> Result<(), LedgerError> {
    for i in 0..cluster.node_count() {
        into.insert(format!("node-{i}"), cluster.node_state(NodeId(i))?.digest);
    }
    Ok(())
}

fn cluster_exports(cluster: &Cluster) -> Result<Vec<String>, LedgerError> {
    (0..cluster.node_count())
        .map(|i| cluster.export_chain(NodeId(i)))
        .collect()
}

fn chain_fees(cluster: &Cluster, partition: Option<&OperationPartition>) -> Fees {
    let by_kind = cluster.fees_by_kind().clone();
    let mut fees = Fees {
        total: cluster.accrued_fees(),
        ..Fees::default()
    };
    for (kind, fee) in &by_kind {
        match partition {
            Some(p) if p.c_ops.contains(kind) => fees.c_op += fee,
            _ => fees.d_op += fee,
        }
    }
    fees.by_kind = by_kind;
    fees
}

/// Fault injections not yet applied, earliest first.
struct Faults<'a> {
    pending: std::slice::Iter<'a, (NodeId, Fault, SimTime)>,
    next: Option<&'a (NodeId, Fault, SimTime)>,
}

impl<'a> Faults<'a> {
    fn new(faults: &'a [(NodeId, Fault, SimTime)]) -> Self {
        let mut pending = faults.iter();
        let next = pending.next();
        Faults { pending, next }
    }

    /// Pops the next injection due at or before `t`.
    fn due(&mut self, t: SimTime) -> Option<(NodeId, Fault, SimTime)> {
        let f = *self.next.filter(|f| f.2 <= t)?;
        self.next = self.pending.next();
        Some(f)
    }
}

fn run_decentralised(
    scenario: &ResolvedScenario,
    records: &mut Records,
) -> Result<Partial, RunError> {
    let config: ConsensusConfig = scenario.consensus.clone().expect("resolved");
    let mut gateway = Gateway::new(Cluster::new(scenario.spec.clone(), config)?);

    let on_final =
        |gateway: &mut Gateway<Cluster>, records: &mut Records, receipts: Vec<CommitReceipt>| {
            for r in receipts {
                records.decide(
                    &r.op_id,
                    r.verdict.outcome,
                    r.verdict.reason,
                    r.finalized_at,
                );
                if let Some(result) =
                    gateway.resolve_deferred(&r.op_id, r.verdict.clone(), r.finalized_at)
                {
                    records.access(&r.op_id, &result);
                }
            }
        };

    let mut faults = Faults::new(&scenario.faults);
    for op in &scenario.trace.ops {
        let t = op.submitted_at;
        while let Some((node, fault, at)) = faults.due(t) {
            let now = gateway.enforcer().now();
            let receipts = gateway.enforcer_mut().step(at.max(now))?;
            on_final(&mut gateway, records, receipts);
            gateway.enforcer_mut().inject_fault(node, fault)?;
        }
        let receipts = gateway.enforcer_mut().step(t)?;
        on_final(&mut gateway, records, receipts);

        records.route(&op.op_id, Route::Chain);
        if is_request(&scenario.spec, op) {
            gateway.request_access(op.clone())?;
        } else {
            gateway.enforcer_mut().broadcast_operation(op.clone())?;
        }
        let receipts = gateway.enforcer_mut().step(t)?;
        on_final(&mut gateway, records, receipts);
    }
    let end = scenario.trace.end();
    while let Some((node, fault, at)) = faults.due(SimTime::MAX) {
        let now = gateway.enforcer().now();
        let receipts = gateway.enforcer_mut().step(at.max(now))?;
        on_final(&mut gateway, records, receipts);
        gateway.enforcer_mut().inject_fault(node, fault)?;
    }
    let receipts = gateway.enforcer_mut().settle(end);
    on_final(&mut gateway, records, receipts);

    let cluster = gateway.enforcer();
    let mut final_digests = BTreeMap::new();
    cluster_digests(cluster, &mut final_digests)?;
    let final_phase = match cluster.contract_state() {
        Some(s) => s.phase.clone(),
        None => cluster.node_state(NodeId(0))?.phase,
    };
    Ok(Partial {
        timeouts: cluster.timeouts().iter().map(|t| t.event.clone()).collect(),
        fees: chain_fees(cluster, None),
        final_phase,
        final_digests,
        flagged: cluster.flagged().iter().copied().collect(),
        served: gateway.served_count(),
        evidence: 0,
        history: None,
        chains: cluster_exports(cluster)?,
    })
}

fn run_hybrid(scenario: &ResolvedScenario, records: &mut Records) -> Result<Partial, RunError> {
    let config = scenario.consensus.clone().expect("resolved");
    let partition = scenario.partition.clone().expect("resolved");
    let mode = scenario.mode.unwrap_or(HybridMode::OffChainExecution);
    let router = Router::new(scenario.spec.clone(), partition, mode, config)?;
    let d_ops = router.partition().d_ops.clone();
    let mut gateway = Gateway::new(router);
    let mut evidence = 0;

    // Receipts for d-ops are presented to the enforcer the moment they are
    // final. Mirrored c-op records need no action.
    let mut on_final = |gateway: &mut Gateway<Router>,
                        records: &mut Records,
                        receipts: Vec<CommitReceipt>|
     -> Result<(), RunError> {
        for r in receipts {
            if !d_ops.contains(&r.kind) {
                continue;
            }
            let at = r.finalized_at;
            let verdict = if r.entry_hash.is_some() {
                let router = gateway.enforcer_mut();
                router.advance_ccc(at.max(router.ccc().now()))?;
                let claimed_obligation = r.kind.clone();
                evidence += 1;
                router.submit_evidence(Evidence {
                    receipt: r.clone(),
                    claimed_obligation,
                    presented_at: at.max(router.ccc().now()),
                })?
            } else {
                r.verdict.clone()
            };
            records.decide(&r.op_id, verdict.outcome, verdict.reason, at);
            if let Some(result) = gateway.resolve_deferred(&r.op_id, verdict, at) {
                records.access(&r.op_id, &result);
            }
        }
        Ok(())
    };

    let mut faults = Faults::new(&scenario.faults);
    for op in &scenario.trace.ops {
        let t = op.submitted_at;
        while let Some((node, fault, at)) = faults.due(t) {
            let now = gateway.enforcer().cluster().now();
            let receipts = gateway.enforcer_mut().step_chain(at.max(now))?;
            on_final(&mut gateway, records, receipts)?;
            gateway
                .enforcer_mut()
                .cluster_mut()
                .inject_fault(node, fault)?;
        }
        let receipts = gateway.enforcer_mut().step_chain(t)?;
        on_final(&mut gateway, records, receipts)?;

        let kind = scenario.spec.resolve_kind(&op.kind).expect("resolved");
        let on_chain = d_ops.contains(&kind);
        records.route(&op.op_id, if on_chain { Route::Chain } else { Route::Ccc });
        if is_request(&scenario.spec, op) {
            let result = gateway.request_access(op.clone())?;
            records.access(&op.op_id, &result);
            if !on_chain {
                let v = last_verdict(gateway.enforcer().ccc());
                records.decide(&op.op_id, v.outcome, v.reason, t);
            }
        } else {
            let outcome = gateway.enforcer_mut().route(op.clone())?;
            if let hybrid_core::router::RoutingOutcome::SentToCcc(v) = outcome {
                records.decide(&op.op_id, v.outcome, v.reason, t);
            }
        }
        let receipts = gateway.enforcer_mut().step_chain(t)?;
        on_final(&mut gateway, records, receipts)?;
    }
    let end = scenario.trace.end();
    while let Some((node, fault, at)) = faults.due(SimTime::MAX) {
        let now = gateway.enforcer().cluster().now();
        let receipts = gateway.enforcer_mut().step_chain(at.max(now))?;
        on_final(&mut gateway, records, receipts)?;
        gateway
            .enforcer_mut()
            .cluster_mut()
            .inject_fault(node, fault)?;
    }
    let receipts = gateway.enforcer_mut().settle_chain(end);
    on_final(&mut gateway, records, receipts)?;
    let router = gateway.enforcer_mut();
    router.advance_ccc(end.max(router.ccc().now()))?;

    let router = gateway.enforcer();
    let ccc = router.ccc();
    let cluster = router.cluster();
    let mut final_digests = BTreeMap::from([("ccc".to_owned(), ccc.state().digest())]);
    cluster_digests(cluster, &mut final_digests)?;
    let mut fees = chain_fees(cluster, Some(router.partition()));
    fees.total = fees.c_op + fees.d_op;
    debug_assert_eq!(router.accrued_fees().total(), fees.total);
    Ok(Partial {
        timeouts: ccc_timeouts(ccc),
        fees,
        final_phase: ccc.state().phase.clone(),
        final_digests,
        flagged: cluster.flagged().iter().copied().collect(),
        served: gateway.served_count(),
        evidence,
        history: Some(ccc.export_history()),
        chains: cluster_exports(cluster)?,
    })
}

fn last_verdict(ccc: &Enforcer) -> hybrid_core::contract::Verdict {
    ccc.history()
        .iter()
        .rev()
        .find_map(|r| r.verdict().cloned())
        .expect("a judged request is recorded")
}
