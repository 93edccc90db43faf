use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical::{digest_of, Digest};

/// Simulated time: integer seconds since the simulation epoch.
pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    DataSeller,
    DataBuyer,
}

impl Role {
    pub fn counterpart(self) -> Role {
        match self {
            Role::DataSeller => Role::DataBuyer,
            Role::DataBuyer => Role::DataSeller,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub name: String,
    pub role: Role,
}

impl PartyId {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        PartyId {
            name: name.into(),
            role,
        }
    }
}

macro_rules! name_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(name: impl Into<String>) -> Self {
                $name(name.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl PartialEq<str> for $name {
            fn eq(&self, other: &str) -> bool {
                self.0 == other
            }
        }

        impl PartialEq<&str> for $name {
            fn eq(&self, other: &&str) -> bool {
                self.0 == *other
            }
        }
    };
}

name_newtype!(
    /// Symbolic name of a contractual operation, declared by the contract spec.
    OperationKind
);
name_newtype!(
    /// A phase of the contract state machine, declared by the contract spec.
    Phase
);

/// One operation submitted against the contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperationInstance {
    pub op_id: String,
    pub kind: OperationKind,
    pub initiator: PartyId,
    pub submitted_at: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl OperationInstance {
    pub fn new(
        op_id: impl Into<String>,
        kind: impl Into<OperationKind>,
        initiator: PartyId,
        submitted_at: SimTime,
    ) -> Self {
        OperationInstance {
            op_id: op_id.into(),
            kind: kind.into(),
            initiator,
            submitted_at,
            payload: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    CC,
    NCC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reason {
    Permitted,
    NotPermittedInState,
    WrongInitiator,
    RateLimitExceeded,
    /// Not produced by the built-in evaluator: expiries are processed before
    /// matching, so a late operation surfaces as the phase it finds.
    DeadlineMissed,
    ContractTerminated,
    DuplicateOperation,
}

/// The cc/ncc outcome of evaluating one operation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub reason: Reason,
    pub state_hash_after: Digest,
}

impl Verdict {
    pub fn compliant(state_hash_after: Digest) -> Self {
        Verdict {
            outcome: Outcome::CC,
            reason: Reason::Permitted,
            state_hash_after,
        }
    }

    pub fn non_compliant(reason: Reason, state_hash_after: Digest) -> Self {
        debug_assert_ne!(reason, Reason::Permitted);
        Verdict {
            outcome: Outcome::NCC,
            reason,
            state_hash_after,
        }
    }

    pub fn is_cc(&self) -> bool {
        self.outcome == Outcome::CC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimeoutEffect {
    TreatAsRejection,
    AbnormalTermination,
    SuccessfulCompletion,
    CloseWindow,
}

/// An armed obligation. Field order matters: the derived ordering is the
/// firing order `(expires_at, owed_by, expected_kind)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Deadline {
    pub expires_at: SimTime,
    pub owed_by: Role,
    pub expected_kind: OperationKind,
    pub on_expiry: TimeoutEffect,
}

/// A deadline that fired, with the phase change it caused.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeoutEvent {
    pub deadline: Deadline,
    pub fired_at: SimTime,
    pub phase_before: Phase,
    pub phase_after: Phase,
}

impl TimeoutEvent {
    pub fn effect(&self) -> TimeoutEffect {
        self.deadline.on_expiry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WindowCount {
    pub window_index: u64,
    pub count_in_window: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractState {
    pub phase: Phase,
    pub active_deadlines: BTreeSet<Deadline>,
    pub request_counters: BTreeMap<OperationKind, WindowCount>,
    pub repository_opened_at: Option<SimTime>,
    pub repository_closed_at: Option<SimTime>,
    pub last_applied_op: Option<String>,
}

impl ContractState {
    pub fn initial(phase: Phase) -> Self {
        ContractState {
            phase,
            active_deadlines: BTreeSet::new(),
            request_counters: BTreeMap::new(),
            repository_opened_at: None,
            repository_closed_at: None,
            last_applied_op: None,
        }
    }

    pub fn next_expiry(&self) -> Option<SimTime> {
        self.active_deadlines.iter().next().map(|d| d.expires_at)
    }

    pub fn awaits(&self, kind: &OperationKind) -> bool {
        self.active_deadlines
            .iter()
            .any(|d| &d.expected_kind == kind)
    }

    pub fn digest(&self) -> Digest {
        state_digest(self)
    }
}

/// SHA-256 over the canonical serialization of the state.
pub fn state_digest(state: &ContractState) -> Digest {
    digest_of(state)
}
