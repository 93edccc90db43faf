//! The centralised contract compliance checker.
//!
//! An [`Enforcer`] owns one contract instance, a clock driven only by
//! submitted timestamps and explicit [`Enforcer::advance_time`] calls, and an
//! append-only history of every operation (compliant or not) and every fired
//! deadline, each tagged with the post-state digest.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{to_canonical_json, Digest};
use crate::contract::{
    evaluate_at, expire_deadlines, validate_spec, ContractError, ContractSpec, ContractState,
    Deadline, OperationInstance, OperationKind, Phase, Reason, SimTime, SpecDefect, TimeoutEvent,
    Verdict, WindowCount,
};

pub const HISTORY_FORMAT: &str = "ccc-history";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnforcerError {
    #[error("time regression: clock is at {now}, requested {requested}")]
    TimeRegression { now: SimTime, requested: SimTime },
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("contract spec is invalid: {0:?}")]
    InvalidSpec(Vec<SpecDefect>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum HistoryEvent {
    Operation {
        op: OperationInstance,
        verdict: Verdict,
        /// Set when the operation was judged at a time other than its
        /// submission time (evidence replayed from a ledger).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        effective_at: Option<SimTime>,
    },
    Timeout {
        event: TimeoutEvent,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub seq: u64,
    pub event: HistoryEvent,
    pub digest_after: Digest,
}

impl HistoryRecord {
    /// The contractual instant of the record.
    pub fn at(&self) -> SimTime {
        match &self.event {
            HistoryEvent::Operation {
                op, effective_at, ..
            } => effective_at.unwrap_or(op.submitted_at),
            HistoryEvent::Timeout { event } => event.fired_at,
        }
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        match &self.event {
            HistoryEvent::Operation { verdict, .. } => Some(verdict),
            HistoryEvent::Timeout { .. } => None,
        }
    }
}

/// Read-only view of an enforcer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub now: SimTime,
    pub phase: Phase,
    pub active_deadlines: Vec<Deadline>,
    pub counters: Vec<(OperationKind, WindowCount)>,
    pub digest: Digest,
}

#[derive(Debug, Clone)]
pub struct Enforcer {
    spec: ContractSpec,
    state: ContractState,
    now: SimTime,
    history: Vec<HistoryRecord>,
    seen_ops: HashSet<String>,
}

impl Enforcer {
    pub fn new(spec: ContractSpec) -> Result<Self, EnforcerError> {
        let defects = validate_spec(&spec);
        if !defects.is_empty() {
            return Err(EnforcerError::InvalidSpec(defects));
        }
        Ok(Enforcer {
            state: spec.initial_state(),
            spec,
            now: 0,
            history: Vec::new(),
            seen_ops: HashSet::new(),
        })
    }

    pub fn spec(&self) -> &ContractSpec {
        &self.spec
    }

    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn current_state(&self) -> Snapshot {
        Snapshot {
            now: self.now,
            phase: self.state.phase.clone(),
            active_deadlines: self.state.active_deadlines.iter().cloned().collect(),
            counters: self
                .state
                .request_counters
                .iter()
                .map(|(k, c)| (k.clone(), *c))
                .collect(),
            digest: self.state.digest(),
        }
    }

    fn check_time(&self, requested: SimTime) -> Result<(), EnforcerError> {
        if requested < self.now {
            return Err(EnforcerError::TimeRegression {
                now: self.now,
                requested,
            });
        }
        Ok(())
    }

    fn push(&mut self, event: HistoryEvent) {
        self.history.push(HistoryRecord {
            seq: self.history.len() as u64,
            event,
            digest_after: self.state.digest(),
        });
    }

    fn fire_until(&mut self, until: SimTime) -> Vec<TimeoutEvent> {
        let (events, next) = expire_deadlines(&self.spec, &self.state, until);
        for event in &events {
            let (_, partial) = expire_deadlines(&self.spec, &self.state, event.fired_at);
            self.state = partial;
            self.push(HistoryEvent::Timeout {
                event: event.clone(),
            });
        }
        debug_assert_eq!(self.state, next);
        self.state = next;
        events
    }

    /// Moves the clock to `to`, firing and recording every deadline that
    /// expires on the way.
    pub fn advance_time(&mut self, to: SimTime) -> Result<Vec<TimeoutEvent>, EnforcerError> {
        self.check_time(to)?;
        let events = self.fire_until(to);
        self.now = to;
        Ok(events)
    }

    pub fn submit_operation(&mut self, op: OperationInstance) -> Result<Verdict, EnforcerError> {
        self.check_time(op.submitted_at)?;
        self.judge(op, None)
    }

    /// Submits an operation whose fulfilment instant was fixed elsewhere
    /// (typically a ledger commit). It is judged at `max(fulfilled_at, now)`
    /// and recorded at `op.submitted_at`, the presentation instant.
    pub fn submit_evidenced(
        &mut self,
        op: OperationInstance,
        fulfilled_at: SimTime,
    ) -> Result<Verdict, EnforcerError> {
        self.check_time(op.submitted_at)?;
        let effective = fulfilled_at.max(self.now).min(op.submitted_at);
        let presented = op.submitted_at;
        let verdict = self.judge(op, Some(effective))?;
        self.advance_time(presented)?;
        Ok(verdict)
    }

    fn judge(
        &mut self,
        op: OperationInstance,
        effective_at: Option<SimTime>,
    ) -> Result<Verdict, EnforcerError> {
        let at = effective_at.unwrap_or(op.submitted_at);
        if self.spec.resolve_kind(&op.kind).is_none() {
            return Err(ContractError::UnknownOperationKind(op.kind).into());
        }
        self.fire_until(at);
        self.now = at;
        let verdict = if self.seen_ops.contains(&op.op_id) {
            Verdict::non_compliant(Reason::DuplicateOperation, self.state.digest())
        } else {
            let (verdict, next) = evaluate_at(&self.spec, &self.state, &op, at)?;
            self.state = next;
            verdict
        };
        self.seen_ops.insert(op.op_id.clone());
        let effective_at = effective_at.filter(|e| *e != op.submitted_at);
        self.push(HistoryEvent::Operation {
            op,
            verdict: verdict.clone(),
            effective_at,
        });
        Ok(verdict)
    }

    /// Newline-delimited canonical export: a header line carrying the spec,
    /// then one line per history record.
    pub fn export_history(&self) -> String {
        let header = HistoryHeader {
            format: HISTORY_FORMAT.to_owned(),
            spec: self.spec.clone(),
        };
        let mut out = to_canonical_json(&header);
        out.push('\n');
        for record in &self.history {
            out.push_str(&to_canonical_json(record));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub format: String,
    pub spec: ContractSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("empty history file")]
    Empty,
}

pub fn parse_history(text: &str) -> Result<(ContractSpec, Vec<HistoryRecord>), HistoryParseError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(HistoryParseError::Empty)?;
    let header: HistoryHeader =
        serde_json::from_str(first).map_err(|e| HistoryParseError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    if header.format != HISTORY_FORMAT {
        return Err(HistoryParseError::Malformed {
            line: 1,
            message: format!("expected format {HISTORY_FORMAT}, found {}", header.format),
        });
    }
    let records = lines
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HistoryParseError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<HistoryRecord>, _>>()?;
    Ok((header.spec, records))
}

/// Where a replayed history first disagrees with the recorded one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryDivergence {
    /// Zero-based index into the record list.
    pub index: usize,
    pub detail: String,
}

/// Replays the operations of `records` through a fresh enforcer and checks
/// that the regenerated history is identical, record for record.
pub fn verify_history(
    spec: &ContractSpec,
    records: &[HistoryRecord],
) -> Result<Enforcer, HistoryDivergence> {
    let mut last = 0;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(HistoryDivergence {
                index: i,
                detail: format!("sequence number {} at position {i}", r.seq),
            });
        }
        if r.at() < last {
            return Err(HistoryDivergence {
                index: i,
                detail: format!("out-of-order timestamp {} after {last}", r.at()),
            });
        }
        last = r.at();
    }

    let mut enforcer = Enforcer::new(spec.clone()).map_err(|e| HistoryDivergence {
        index: 0,
        detail: e.to_string(),
    })?;
    for (i, r) in records.iter().enumerate() {
        let result = match &r.event {
            HistoryEvent::Operation {
                op,
                effective_at: Some(at),
                ..
            } => enforcer.submit_evidenced(op.clone(), *at),
            HistoryEvent::Operation { op, .. } => enforcer.submit_operation(op.clone()),
            HistoryEvent::Timeout { .. } => continue,
        };
        if let Err(e) = result {
            return Err(HistoryDivergence {
                index: i,
                detail: e.to_string(),
            });
        }
    }
    let _ = enforcer.advance_time(last.max(enforcer.now));

    let regenerated = enforcer.history();
    for (i, expected) in records.iter().enumerate() {
        match regenerated.get(i) {
            Some(actual) if actual == expected => {}
            Some(actual) => {
                return Err(HistoryDivergence {
                    index: i,
                    detail: format!(
                        "recorded {} but replay produced {}",
                        to_canonical_json(expected),
                        to_canonical_json(actual)
                    ),
                })
            }
            None => {
                return Err(HistoryDivergence {
                    index: i,
                    detail: "record has no counterpart in the replay".into(),
                })
            }
        }
    }
    if regenerated.len() > records.len() {
        return Err(HistoryDivergence {
            index: records.len(),
            detail: "replay produced records missing from the history".into(),
        });
    }
    Ok(enforcer)
}
