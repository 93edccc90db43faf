//! Deterministic contract semantics: the transition function mapping
//! `(spec, state, operation, time)` to `(verdict, next state)`.

mod eval;
pub mod reference;
mod spec;
mod types;

pub use eval::{evaluate, evaluate_at, expire_deadlines, ContractError};
pub use reference::reference_contract;
pub use spec::{
    validate_spec, ContractSpec, Effect, Guard, GuardedTransition, Initiator, PartyDecl, RateLimit,
    SpecDefect, TimeoutRule,
};
pub use types::{
    state_digest, ContractState, Deadline, OperationInstance, OperationKind, Outcome, PartyId,
    Phase, Reason, Role, SimTime, TimeoutEffect, TimeoutEvent, Verdict, WindowCount,
};
