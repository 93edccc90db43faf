use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{ContractState, OperationKind, Phase, Role, TimeoutEffect};
use crate::canonical::{digest_of, to_canonical_json, Digest};

/// Who may issue the operation of a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Initiator {
    DataSeller,
    DataBuyer,
    AnyParty,
}

impl Initiator {
    pub fn admits(self, role: Role) -> bool {
        match self {
            Initiator::AnyParty => true,
            Initiator::DataSeller => role == Role::DataSeller,
            Initiator::DataBuyer => role == Role::DataBuyer,
        }
    }

    fn overlaps(self, other: Initiator) -> bool {
        [Role::DataSeller, Role::DataBuyer]
            .into_iter()
            .any(|r| self.admits(r) && other.admits(r))
    }
}

impl From<Role> for Initiator {
    fn from(role: Role) -> Self {
        match role {
            Role::DataSeller => Initiator::DataSeller,
            Role::DataBuyer => Initiator::DataBuyer,
        }
    }
}

/// Predicate over the contract state evaluated when a transition is matched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Guard {
    Always,
    /// An armed deadline expects this kind.
    Awaiting(OperationKind),
    /// No armed deadline expects this kind.
    NotAwaiting(OperationKind),
    RepositoryNotClosed,
}

impl Guard {
    pub fn holds(&self, state: &ContractState) -> bool {
        match self {
            Guard::Always => true,
            Guard::Awaiting(k) => state.awaits(k),
            Guard::NotAwaiting(k) => !state.awaits(k),
            Guard::RepositoryNotClosed => state.repository_closed_at.is_none(),
        }
    }

    fn excludes(&self, other: &Guard) -> bool {
        matches!(
            (self, other),
            (Guard::Awaiting(a), Guard::NotAwaiting(b)) | (Guard::NotAwaiting(a), Guard::Awaiting(b)) if a == b
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    CancelDeadline(OperationKind),
    CancelAllDeadlines,
    /// Records the opening instant and restarts rate windows from it.
    OpenRepositoryWindow,
    /// Records the closing instant of the repository.
    CloseRepository,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GuardedTransition {
    pub from: Phase,
    pub kind: OperationKind,
    pub initiator: Initiator,
    pub guard: Guard,
    pub to: Phase,
    #[serde(default)]
    pub effects: Vec<Effect>,
}

/// Deadline template armed whenever the state machine enters `phase` from a
/// different phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeoutRule {
    pub phase: Phase,
    pub owed_by: Role,
    pub expected_kind: OperationKind,
    pub duration_s: u64,
    pub on_expiry: TimeoutEffect,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RateLimit {
    pub kind: OperationKind,
    pub max_count: u32,
    pub window_length_s: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartyDecl {
    pub role: Role,
    pub title: String,
}

/// Declarative table of phases, guarded transitions, deadlines and rate
/// limits encoding a contract's clauses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub name: String,
    pub parties: Vec<PartyDecl>,
    pub operation_kinds: BTreeSet<OperationKind>,
    #[serde(default)]
    pub kind_aliases: BTreeMap<String, OperationKind>,
    pub phases: BTreeSet<Phase>,
    pub initial_phase: Phase,
    pub terminal_phases: BTreeSet<Phase>,
    pub abnormal_phase: Phase,
    pub completed_phase: Phase,
    pub transitions: Vec<GuardedTransition>,
    #[serde(default)]
    pub timeout_rules: Vec<TimeoutRule>,
    #[serde(default)]
    pub rate_limits: Vec<RateLimit>,
    /// The kind that discharges the payment obligation, if any.
    #[serde(default)]
    pub payment_kind: Option<OperationKind>,
}

impl ContractSpec {
    pub fn initial_state(&self) -> ContractState {
        ContractState::initial(self.initial_phase.clone())
    }

    /// Resolves aliases to the declared kind; `None` for unknown names.
    pub fn resolve_kind(&self, kind: &OperationKind) -> Option<OperationKind> {
        if self.operation_kinds.contains(kind) {
            return Some(kind.clone());
        }
        self.kind_aliases
            .get(kind.as_str())
            .filter(|k| self.operation_kinds.contains(*k))
            .cloned()
    }

    pub fn is_terminal(&self, phase: &Phase) -> bool {
        self.terminal_phases.contains(phase)
    }

    pub fn rate_limit_for(&self, kind: &OperationKind) -> Option<&RateLimit> {
        self.rate_limits.iter().find(|r| &r.kind == kind)
    }

    pub fn timeout_rules_for<'a>(
        &'a self,
        phase: &'a Phase,
    ) -> impl Iterator<Item = &'a TimeoutRule> + 'a {
        self.timeout_rules.iter().filter(move |r| &r.phase == phase)
    }

    /// Kinds that drive at least one transition. Declared kinds outside this
    /// set are record-keeping kinds with no contractual effect.
    pub fn contractual_kinds(&self) -> BTreeSet<OperationKind> {
        self.transitions.iter().map(|t| t.kind.clone()).collect()
    }

    /// Length of the window armed on entering `phase` whose expiry completes
    /// the contract.
    pub fn completion_window(&self, phase: &Phase) -> Option<u64> {
        self.timeout_rules_for(phase)
            .find(|r| {
                matches!(
                    r.on_expiry,
                    TimeoutEffect::SuccessfulCompletion | TimeoutEffect::CloseWindow
                )
            })
            .map(|r| r.duration_s)
    }

    /// The phase a timeout of the given effect moves the contract to.
    pub fn phase_after_timeout(&self, effect: TimeoutEffect) -> &Phase {
        match effect {
            TimeoutEffect::TreatAsRejection => &self.initial_phase,
            TimeoutEffect::AbnormalTermination => &self.abnormal_phase,
            TimeoutEffect::SuccessfulCompletion | TimeoutEffect::CloseWindow => {
                &self.completed_phase
            }
        }
    }

    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self)
    }

    pub fn digest(&self) -> Digest {
        digest_of(self)
    }

    /// A spec in which every given kind is always permitted to any party in
    /// a single phase. Used by ledgers that record rather than judge.
    pub fn record_only(
        name: impl Into<String>,
        kinds: impl IntoIterator<Item = OperationKind>,
    ) -> Self {
        let phase = Phase::new("Recording");
        let closed = Phase::new("Closed");
        let operation_kinds: BTreeSet<_> = kinds.into_iter().collect();
        let transitions = operation_kinds
            .iter()
            .map(|k| GuardedTransition {
                from: phase.clone(),
                kind: k.clone(),
                initiator: Initiator::AnyParty,
                guard: Guard::Always,
                to: phase.clone(),
                effects: Vec::new(),
            })
            .collect();
        ContractSpec {
            name: name.into(),
            parties: vec![
                PartyDecl {
                    role: Role::DataSeller,
                    title: "seller".into(),
                },
                PartyDecl {
                    role: Role::DataBuyer,
                    title: "buyer".into(),
                },
            ],
            operation_kinds,
            kind_aliases: BTreeMap::new(),
            phases: [phase.clone(), closed.clone()].into_iter().collect(),
            initial_phase: phase,
            terminal_phases: [closed.clone()].into_iter().collect(),
            abnormal_phase: closed.clone(),
            completed_phase: closed,
            transitions,
            timeout_rules: Vec::new(),
            rate_limits: Vec::new(),
            payment_kind: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecDefect {
    NondeterministicTransition {
        phase: Phase,
        kind: OperationKind,
        initiator: Initiator,
    },
    UnknownPhase {
        phase: Phase,
        context: String,
    },
    UnknownKind {
        kind: OperationKind,
        context: String,
    },
    DuplicateDeadline {
        phase: Phase,
        owed_by: Role,
        kind: OperationKind,
    },
    NonPositiveDuration {
        phase: Phase,
        kind: OperationKind,
    },
    InvalidRateLimit {
        kind: OperationKind,
    },
    PartyRoleCount {
        role: Role,
        count: usize,
    },
    TerminalNotDeclared {
        phase: Phase,
    },
}

impl fmt::Display for SpecDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecDefect::NondeterministicTransition {
                phase,
                kind,
                initiator,
            } => write!(
                f,
                "more than one transition may match ({phase}, {kind}, {initiator:?})"
            ),
            SpecDefect::UnknownPhase { phase, context } => {
                write!(f, "undeclared phase {phase} referenced by {context}")
            }
            SpecDefect::UnknownKind { kind, context } => {
                write!(
                    f,
                    "undeclared operation kind {kind} referenced by {context}"
                )
            }
            SpecDefect::DuplicateDeadline {
                phase,
                owed_by,
                kind,
            } => write!(
                f,
                "phase {phase} arms two deadlines for ({owed_by}, {kind})"
            ),
            SpecDefect::NonPositiveDuration { phase, kind } => {
                write!(f, "deadline for {kind} in phase {phase} has zero duration")
            }
            SpecDefect::InvalidRateLimit { kind } => {
                write!(f, "rate limit on {kind} needs a positive window and count")
            }
            SpecDefect::PartyRoleCount { role, count } => {
                write!(
                    f,
                    "role {role} declared {count} times, expected exactly once"
                )
            }
            SpecDefect::TerminalNotDeclared { phase } => {
                write!(f, "outcome phase {phase} must be a declared terminal phase")
            }
        }
    }
}

/// Checks every structural invariant of a spec. An empty list means the spec
/// is well formed.
pub fn validate_spec(spec: &ContractSpec) -> Vec<SpecDefect> {
    let mut defects = Vec::new();
    let phase_known = |p: &Phase, context: String, defects: &mut Vec<SpecDefect>| {
        if !spec.phases.contains(p) {
            defects.push(SpecDefect::UnknownPhase {
                phase: p.clone(),
                context,
            });
        }
    };
    let kind_known = |k: &OperationKind, context: String, defects: &mut Vec<SpecDefect>| {
        if !spec.operation_kinds.contains(k) {
            defects.push(SpecDefect::UnknownKind {
                kind: k.clone(),
                context,
            });
        }
    };

    for role in [Role::DataSeller, Role::DataBuyer] {
        let count = spec.parties.iter().filter(|p| p.role == role).count();
        if count != 1 {
            defects.push(SpecDefect::PartyRoleCount { role, count });
        }
    }

    phase_known(&spec.initial_phase, "initial_phase".into(), &mut defects);
    for p in &spec.terminal_phases {
        phase_known(p, "terminal_phases".into(), &mut defects);
    }
    for (p, label) in [
        (&spec.abnormal_phase, "abnormal_phase"),
        (&spec.completed_phase, "completed_phase"),
    ] {
        phase_known(p, label.into(), &mut defects);
        if spec.phases.contains(p) && !spec.is_terminal(p) {
            defects.push(SpecDefect::TerminalNotDeclared { phase: p.clone() });
        }
    }
    for (alias, target) in &spec.kind_aliases {
        kind_known(target, format!("alias {alias}"), &mut defects);
    }
    if let Some(k) = &spec.payment_kind {
        kind_known(k, "payment_kind".into(), &mut defects);
    }

    for (i, t) in spec.transitions.iter().enumerate() {
        let ctx = format!("transition #{i} ({} -> {} on {})", t.from, t.to, t.kind);
        phase_known(&t.from, ctx.clone(), &mut defects);
        phase_known(&t.to, ctx.clone(), &mut defects);
        kind_known(&t.kind, ctx.clone(), &mut defects);
        let guard_kind = match &t.guard {
            Guard::Awaiting(k) | Guard::NotAwaiting(k) => Some(k),
            _ => None,
        };
        if let Some(k) = guard_kind {
            kind_known(k, format!("guard of {ctx}"), &mut defects);
        }
        for e in &t.effects {
            if let Effect::CancelDeadline(k) = e {
                kind_known(k, format!("effect of {ctx}"), &mut defects);
            }
        }
    }

    let mut reported = BTreeSet::new();
    for (i, a) in spec.transitions.iter().enumerate() {
        for b in &spec.transitions[i + 1..] {
            if a.from == b.from
                && a.kind == b.kind
                && a.initiator.overlaps(b.initiator)
                && !a.guard.excludes(&b.guard)
                && reported.insert((a.from.clone(), a.kind.clone(), a.initiator))
            {
                defects.push(SpecDefect::NondeterministicTransition {
                    phase: a.from.clone(),
                    kind: a.kind.clone(),
                    initiator: a.initiator,
                });
            }
        }
    }

    let mut armed: BTreeSet<(Phase, Role, OperationKind)> = BTreeSet::new();
    for r in &spec.timeout_rules {
        let ctx = format!("timeout rule for {} in {}", r.expected_kind, r.phase);
        phase_known(&r.phase, ctx.clone(), &mut defects);
        kind_known(&r.expected_kind, ctx, &mut defects);
        if r.duration_s == 0 {
            defects.push(SpecDefect::NonPositiveDuration {
                phase: r.phase.clone(),
                kind: r.expected_kind.clone(),
            });
        }
        if !armed.insert((r.phase.clone(), r.owed_by, r.expected_kind.clone())) {
            defects.push(SpecDefect::DuplicateDeadline {
                phase: r.phase.clone(),
                owed_by: r.owed_by,
                kind: r.expected_kind.clone(),
            });
        }
    }

    for rl in &spec.rate_limits {
        kind_known(&rl.kind, "rate limit".into(), &mut defects);
        if rl.max_count == 0 || rl.window_length_s == 0 {
            defects.push(SpecDefect::InvalidRateLimit {
                kind: rl.kind.clone(),
            });
        }
    }

    defects
}
