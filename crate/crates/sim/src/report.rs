//! The metrics report produced by a run, and its text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use hybrid_core::canonical::to_canonical_json;
use hybrid_core::contract::{OperationKind, Outcome, Phase, Reason, SimTime, TimeoutEffect};
use hybrid_core::ledger::NodeId;
use hybrid_core::Digest;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::scenario::Deployment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Ccc,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op_id: String,
    pub kind: OperationKind,
    pub initiator: String,
    pub submitted_at: SimTime,
    /// When the verdict became final. `None` if it never did.
    pub decided_at: Option<SimTime>,
    pub outcome: Option<Outcome>,
    pub reason: Option<Reason>,
    pub route: Route,
    /// Set for data requests: whether the gateway served the data.
    pub served: Option<bool>,
}

impl OpRecord {
    pub fn latency(&self) -> Option<u64> {
        self.decided_at.map(|d| d - self.submitted_at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutRecord {
    pub expected_kind: OperationKind,
    pub effect: TimeoutEffect,
    pub fired_at: SimTime,
    pub phase_before: Phase,
    pub phase_after: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub min_s: u64,
    /// Lower median.
    pub median_s: u64,
    pub max_s: u64,
}

impl LatencyStats {
    pub fn of(mut samples: Vec<u64>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        Some(LatencyStats {
            min_s: samples[0],
            median_s: samples[(samples.len() - 1) / 2],
            max_s: samples[samples.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fees {
    pub c_op: Decimal,
    pub d_op: Decimal,
    pub total: Decimal,
    pub by_kind: BTreeMap<OperationKind, Decimal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub deployment: Deployment,
    /// Digest of the trace that was run, so reports of different runs can be
    /// checked for comparability.
    pub trace_digest: Digest,
    pub ops: Vec<OpRecord>,
    pub timeouts: Vec<TimeoutRecord>,
    pub latency: Option<LatencyStats>,
    /// Decided operations per second, from the first submission to the last
    /// decision. `None` when that span is empty.
    pub committed_tps: Option<Decimal>,
    pub fees: Fees,
    pub final_phase: Phase,
    pub final_digests: BTreeMap<String, Digest>,
    pub event_counts: BTreeMap<String, u64>,
    pub flagged_nodes: Vec<NodeId>,
}

impl MetricsReport {
    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn verdicts(&self) -> impl Iterator<Item = (&str, Option<Outcome>, Option<Reason>)> {
        self.ops
            .iter()
            .map(|o| (o.op_id.as_str(), o.outcome, o.reason))
    }

    pub fn count(&self, key: &str) -> u64 {
        self.event_counts.get(key).copied().unwrap_or(0)
    }

    /// Text summary for a terminal.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario     {} ({:?})",
            self.scenario, self.deployment
        );
        for (label, value) in summary_rows(self) {
            let _ = writeln!(out, "{label:<12} {value}");
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:<36} {:<8} {:>9} {:>9} {:<5} {:<20} route",
            "op", "kind", "by", "submitted", "decided", "", "reason"
        );
        for op in &self.ops {
            let _ = writeln!(
                out,
                "{:<10} {:<36} {:<8} {:>9} {:>9} {:<5} {:<20} {:?}{}",
                op.op_id,
                op.kind.as_str(),
                op.initiator,
                op.submitted_at,
                op.decided_at.map_or("-".into(), |d| d.to_string()),
                op.outcome.map_or("-".into(), |o| format!("{o:?}")),
                op.reason.map_or("-".into(), |r| format!("{r:?}")),
                op.route,
                match op.served {
                    Some(true) => " served",
                    Some(false) => " refused",
                    None => "",
                }
            );
        }
        for t in &self.timeouts {
            let _ = writeln!(
                out,
                "timeout    {:<36} at {} {:?}: {} -> {}",
                t.expected_kind.as_str(),
                t.fired_at,
                t.effect,
                t.phase_before.as_str(),
                t.phase_after.as_str()
            );
        }
        out
    }
}

/// `(label, value)` rows shared by the single-report and comparison tables.
pub fn summary_rows(r: &MetricsReport) -> Vec<(&'static str, String)> {
    let latency = r.latency.map_or("-".into(), |l| {
        format!("{}/{}/{} s", l.min_s, l.median_s, l.max_s)
    });
    vec![
        ("final phase", r.final_phase.as_str().to_owned()),
        ("latency", latency),
        ("tps", r.committed_tps.map_or("-".into(), |t| t.to_string())),
        ("fees c-op", r.fees.c_op.to_string()),
        ("fees d-op", r.fees.d_op.to_string()),
        ("fees total", r.fees.total.to_string()),
        ("cc", r.count("cc").to_string()),
        ("ncc", r.count("ncc").to_string()),
        ("undecided", r.count("undecided").to_string()),
        ("timeouts", r.timeouts.len().to_string()),
        ("served", r.count("served").to_string()),
        (
            "flagged",
            r.flagged_nodes
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ),
    ]
}

/// Decided operations per second over `[first submission, last decision]`,
/// to six decimal places.
pub fn committed_tps(ops: &[OpRecord]) -> Option<Decimal> {
    let decided: Vec<&OpRecord> = ops.iter().filter(|o| o.decided_at.is_some()).collect();
    let start = decided.iter().map(|o| o.submitted_at).min()?;
    let end = decided.iter().filter_map(|o| o.decided_at).max()?;
    if end <= start {
        return None;
    }
    Some((Decimal::from(decided.len()) / Decimal::from(end - start)).round_dp(6))
}
