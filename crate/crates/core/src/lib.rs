//! Hybrid smart-contract enforcement.
//!
//! * [`contract`]: the contract compliance state machine and the built-in
//!   data-trading contract.
//! * [`ccc`]: the centralised enforcer binding the state machine to a clock
//!   and an append-only history.
//! * [`ledger`]: a simulated replicated ledger whose nodes each host the
//!   state machine and agree on verdicts under a consensus model.
//! * [`router`]: splits operations between the centralised enforcer and the
//!   ledger.
//! * [`gateway`]: admits data requests against the enforcer's verdicts.

pub mod canonical;
pub mod ccc;
pub mod contract;
pub mod gateway;
pub mod ledger;
pub mod router;

pub use canonical::Digest;
