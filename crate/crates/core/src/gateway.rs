//! Gateway in front of the seller's data repository. Every data request is
//! forwarded to the enforcer and served only on a compliant verdict for that
//! exact request; the gateway is closed again after each response.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::Digest;
use crate::ccc::{Enforcer, EnforcerError};
use crate::contract::reference::kinds::PLACE_DATA_REQUEST;
use crate::contract::{
    ContractSpec, ContractState, OperationInstance, OperationKind, Reason, SimTime, Verdict,
};
use crate::ledger::{Cluster, LedgerError};
use crate::router::{Router, RouterError, RoutingOutcome};

/// What the enforcer answers to a forwarded request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessDecision {
    Verdict(Verdict),
    /// The verdict arrives with a later ledger commit.
    Deferred(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{0} is not a data request")]
    WrongKind(OperationKind),
    #[error(transparent)]
    Enforcer(#[from] EnforcerError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// An enforcer the gateway can consult.
pub trait AccessEnforcer {
    fn spec(&self) -> &ContractSpec;
    fn state(&self) -> Option<&ContractState>;
    fn decide(&mut self, op: OperationInstance) -> Result<AccessDecision, GatewayError>;
}

impl AccessEnforcer for Enforcer {
    fn spec(&self) -> &ContractSpec {
        Enforcer::spec(self)
    }

    fn state(&self) -> Option<&ContractState> {
        Some(Enforcer::state(self))
    }

    fn decide(&mut self, op: OperationInstance) -> Result<AccessDecision, GatewayError> {
        Ok(AccessDecision::Verdict(self.submit_operation(op)?))
    }
}

impl AccessEnforcer for Router {
    fn spec(&self) -> &ContractSpec {
        self.ccc().spec()
    }

    fn state(&self) -> Option<&ContractState> {
        Some(self.ccc().state())
    }

    fn decide(&mut self, op: OperationInstance) -> Result<AccessDecision, GatewayError> {
        Ok(match self.route(op)? {
            RoutingOutcome::SentToCcc(v) => AccessDecision::Verdict(v),
            RoutingOutcome::SentToChain(id) => AccessDecision::Deferred(id),
        })
    }
}

impl AccessEnforcer for Cluster {
    fn spec(&self) -> &ContractSpec {
        Cluster::spec(self)
    }

    fn state(&self) -> Option<&ContractState> {
        self.contract_state()
    }

    fn decide(&mut self, op: OperationInstance) -> Result<AccessDecision, GatewayError> {
        Ok(AccessDecision::Deferred(self.broadcast_operation(op)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Position {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayState {
    pub position: Position,
    pub last_verdict: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServedData {
    pub request_id: String,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub served_at: SimTime,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessResult {
    Served(ServedData),
    Denied(Reason),
    Pending(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_id: String,
    pub at: SimTime,
    pub result: AccessResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryStatus {
    pub open: bool,
    pub window_remaining_s: u64,
}

/// Synthetic repository contents for a request.
pub fn repository_payload(request_id: &str) -> Vec<u8> {
    Digest::of(request_id.as_bytes()).as_bytes().to_vec()
}

/// Whether the repository window is open at `now`, and how long it has left.
pub fn repository_status(
    spec: &ContractSpec,
    state: &ContractState,
    now: SimTime,
) -> RepositoryStatus {
    let remaining = match (
        state.repository_opened_at,
        spec.completion_window(&state.phase),
    ) {
        (Some(opened), Some(window)) => (opened + window).saturating_sub(now),
        _ => 0,
    };
    RepositoryStatus {
        open: remaining > 0,
        window_remaining_s: remaining,
    }
}

#[derive(Debug, Clone)]
pub struct Gateway<E> {
    enforcer: E,
    request_kind: OperationKind,
    state: GatewayState,
    pending: Vec<OperationInstance>,
    audit: Vec<AuditRecord>,
}

impl<E: AccessEnforcer> Gateway<E> {
    pub fn new(enforcer: E) -> Self {
        Gateway {
            enforcer,
            request_kind: OperationKind::new(PLACE_DATA_REQUEST),
            state: GatewayState {
                position: Position::Closed,
                last_verdict: None,
            },
            pending: Vec::new(),
            audit: Vec::new(),
        }
    }

    pub fn enforcer(&self) -> &E {
        &self.enforcer
    }

    pub fn enforcer_mut(&mut self) -> &mut E {
        &mut self.enforcer
    }

    pub fn state(&self) -> &GatewayState {
        &self.state
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn served_count(&self) -> usize {
        self.audit
            .iter()
            .filter(|r| matches!(r.result, AccessResult::Served(_)))
            .count()
    }

    /// Forwards a data request to the enforcer and serves it on CC.
    pub fn request_access(&mut self, op: OperationInstance) -> Result<AccessResult, GatewayError> {
        let kind = self.enforcer.spec().resolve_kind(&op.kind);
        if kind.as_ref() != Some(&self.request_kind) {
            return Err(GatewayError::WrongKind(op.kind));
        }
        let at = op.submitted_at;
        let request_id = op.op_id.clone();
        let result = match self.enforcer.decide(op.clone())? {
            AccessDecision::Verdict(v) => self.answer(&request_id, v, at),
            AccessDecision::Deferred(id) => {
                self.pending.push(op);
                AccessResult::Pending(id)
            }
        };
        self.record(request_id, at, result.clone());
        Ok(result)
    }

    /// Answers a deferred request once its verdict is known: the committed
    /// verdict of a decentralised enforcer, or the centralised verdict reached
    /// on the request's evidence in a hybrid one.
    pub fn resolve_deferred(
        &mut self,
        request_id: &str,
        verdict: Verdict,
        at: SimTime,
    ) -> Option<AccessResult> {
        let idx = self.pending.iter().position(|op| op.op_id == request_id)?;
        let op = self.pending.remove(idx);
        let result = self.answer(&op.op_id, verdict, at);
        self.record(op.op_id, at, result.clone());
        Some(result)
    }

    fn answer(&mut self, request_id: &str, verdict: Verdict, at: SimTime) -> AccessResult {
        self.state.last_verdict = Some(verdict.clone());
        if !verdict.is_cc() {
            return AccessResult::Denied(verdict.reason);
        }
        self.state.position = Position::Open;
        let served = ServedData {
            request_id: request_id.to_owned(),
            bytes: repository_payload(request_id),
            served_at: at,
        };
        self.state.position = Position::Closed;
        AccessResult::Served(served)
    }

    fn record(&mut self, request_id: String, at: SimTime, result: AccessResult) {
        self.audit.push(AuditRecord {
            request_id,
            at,
            result,
        });
    }

    pub fn repository_status(&self, now: SimTime) -> RepositoryStatus {
        match self.enforcer.state() {
            Some(state) => repository_status(self.enforcer.spec(), state, now),
            None => RepositoryStatus {
                open: false,
                window_remaining_s: 0,
            },
        }
    }
}
