//! Scenario harness: deterministic end-to-end runs of a contract under
//! centralised, decentralised or hybrid enforcement.

pub mod compare;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod trace;
pub mod verify;
