//! Side-by-side comparison of two deployments of the same trace.

use std::fmt::Write as _;

use hybrid_core::contract::{Outcome, Reason};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{summary_rows, MetricsReport};
use crate::runner::{run, RunError};
use crate::scenario::ResolvedScenario;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictDiff {
    pub op_id: String,
    pub a: (Option<Outcome>, Option<Reason>),
    pub b: (Option<Outcome>, Option<Reason>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: MetricsReport,
    pub b: MetricsReport,
    pub diffs: Vec<VerdictDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompareError {
    #[error("scenarios {a:?} and {b:?} run different traces")]
    TraceMismatch { a: String, b: String },
    #[error(transparent)]
    Run(#[from] RunError),
}

pub fn compare(a: &ResolvedScenario, b: &ResolvedScenario) -> Result<Comparison, CompareError> {
    if a.trace != b.trace {
        return Err(CompareError::TraceMismatch {
            a: a.name.clone(),
            b: b.name.clone(),
        });
    }
    Ok(compare_reports(run(a)?.report, run(b)?.report))
}

/// Pairs the operations of two reports over the same trace.
pub fn compare_reports(a: MetricsReport, b: MetricsReport) -> Comparison {
    let diffs = a
        .ops
        .iter()
        .zip(&b.ops)
        .filter(|(x, y)| (x.outcome, x.reason) != (y.outcome, y.reason))
        .map(|(x, y)| VerdictDiff {
            op_id: x.op_id.clone(),
            a: (x.outcome, x.reason),
            b: (y.outcome, y.reason),
        })
        .collect();
    Comparison { a, b, diffs }
}

impl Comparison {
    /// `b`'s total fees minus `a`'s.
    pub fn fee_delta(&self) -> Decimal {
        self.b.fees.total - self.a.fees.total
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let (ra, rb) = (summary_rows(&self.a), summary_rows(&self.b));
        let _ = writeln!(
            out,
            "{:<12} {:<28} {:<28}",
            "", self.a.scenario, self.b.scenario
        );
        for ((label, va), (_, vb)) in ra.iter().zip(&rb) {
            let _ = writeln!(out, "{label:<12} {va:<28} {vb:<28}");
        }
        let _ = writeln!(out, "{:<12} {}", "fee delta", self.fee_delta());
        let _ = writeln!(out);
        if self.diffs.is_empty() {
            let _ = writeln!(out, "no verdict differences");
        }
        for d in &self.diffs {
            let _ = writeln!(out, "{:<10} {:?} vs {:?}", d.op_id, d.a, d.b);
        }
        out
    }
}
