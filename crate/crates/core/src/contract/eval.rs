use thiserror::Error;

use super::spec::{ContractSpec, Effect, GuardedTransition};
use super::types::{
    ContractState, Deadline, OperationInstance, OperationKind, Phase, Reason, Role, SimTime,
    TimeoutEvent, Verdict, WindowCount,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("operation kind {0} is not declared by the contract")]
    UnknownOperationKind(OperationKind),
}

/// Evaluates `op` at its own submission time.
pub fn evaluate(
    spec: &ContractSpec,
    state: &ContractState,
    op: &OperationInstance,
) -> Result<(Verdict, ContractState), ContractError> {
    evaluate_at(spec, state, op, op.submitted_at)
}

/// Evaluates `op` as if it arrived at `at`.
///
/// Deadlines with `expires_at <= at` are expired first, so an operation that
/// arrives exactly on its deadline is late. An NCC verdict returns the
/// post-expiry state untouched.
pub fn evaluate_at(
    spec: &ContractSpec,
    state: &ContractState,
    op: &OperationInstance,
    at: SimTime,
) -> Result<(Verdict, ContractState), ContractError> {
    let kind = spec
        .resolve_kind(&op.kind)
        .ok_or_else(|| ContractError::UnknownOperationKind(op.kind.clone()))?;
    let (_, current) = expire_deadlines(spec, state, at);
    let role = op.initiator.role;

    if current.last_applied_op.as_deref() == Some(op.op_id.as_str()) {
        return Ok(reject(Reason::DuplicateOperation, current));
    }

    let in_phase: Vec<&GuardedTransition> = spec
        .transitions
        .iter()
        .filter(|t| t.from == current.phase && t.kind == kind)
        .collect();
    let by_role: Vec<&GuardedTransition> = in_phase
        .iter()
        .copied()
        .filter(|t| t.initiator.admits(role))
        .collect();
    let enabled = by_role.iter().copied().find(|t| t.guard.holds(&current));

    let rate = enabled.map(|_| rate_check(spec, &current, &kind, at));
    let counted = match rate {
        Some(RateCheck::Unlimited) => Some(None),
        Some(RateCheck::Admit(c)) => Some(Some(c)),
        Some(RateCheck::Full) | None => None,
    };
    if let (Some(transition), Some(counted)) = (enabled, counted) {
        let next = apply(spec, &current, transition, &kind, counted, op, at);
        return Ok((Verdict::compliant(next.digest()), next));
    }
    let rate_blocked = matches!(rate, Some(RateCheck::Full));

    let reason = if spec.is_terminal(&current.phase) {
        Reason::ContractTerminated
    } else if by_role.is_empty() && (!in_phase.is_empty() || !anyone_of_role_may(spec, &kind, role))
    {
        Reason::WrongInitiator
    } else if rate_blocked {
        Reason::RateLimitExceeded
    } else {
        Reason::NotPermittedInState
    };
    Ok(reject(reason, current))
}

fn reject(reason: Reason, state: ContractState) -> (Verdict, ContractState) {
    (Verdict::non_compliant(reason, state.digest()), state)
}

fn anyone_of_role_may(spec: &ContractSpec, kind: &OperationKind, role: Role) -> bool {
    spec.transitions
        .iter()
        .any(|t| &t.kind == kind && t.initiator.admits(role))
}

enum RateCheck {
    Unlimited,
    /// Counter value after admitting one more operation.
    Admit(WindowCount),
    Full,
}

/// Windows are consecutive fixed-length intervals anchored at the repository
/// opening instant.
fn rate_check(
    spec: &ContractSpec,
    state: &ContractState,
    kind: &OperationKind,
    at: SimTime,
) -> RateCheck {
    let Some(limit) = spec.rate_limit_for(kind) else {
        return RateCheck::Unlimited;
    };
    let anchor = state.repository_opened_at.unwrap_or(0);
    let window_index = at.saturating_sub(anchor) / limit.window_length_s;
    let count = match state.request_counters.get(kind) {
        Some(c) if c.window_index == window_index => c.count_in_window,
        _ => 0,
    };
    if count >= limit.max_count {
        return RateCheck::Full;
    }
    RateCheck::Admit(WindowCount {
        window_index,
        count_in_window: count + 1,
    })
}

fn apply(
    spec: &ContractSpec,
    state: &ContractState,
    transition: &GuardedTransition,
    kind: &OperationKind,
    counted: Option<WindowCount>,
    op: &OperationInstance,
    at: SimTime,
) -> ContractState {
    let mut next = state.clone();
    for effect in &transition.effects {
        match effect {
            Effect::CancelDeadline(k) => next.active_deadlines.retain(|d| &d.expected_kind != k),
            Effect::CancelAllDeadlines => next.active_deadlines.clear(),
            Effect::OpenRepositoryWindow | Effect::CloseRepository => {}
        }
    }
    if transition.to != state.phase {
        enter_phase(spec, &mut next, &transition.to, at);
    }
    for effect in &transition.effects {
        match effect {
            Effect::OpenRepositoryWindow => {
                next.repository_opened_at = Some(at);
                next.request_counters.clear();
            }
            Effect::CloseRepository => next.repository_closed_at = Some(at),
            Effect::CancelDeadline(_) | Effect::CancelAllDeadlines => {}
        }
    }
    if let Some(c) = counted {
        next.request_counters.insert(kind.clone(), c);
    }
    next.last_applied_op = Some(op.op_id.clone());
    next
}

/// Moves to `phase` and arms its deadline templates relative to `at`. Terminal
/// phases carry no deadlines.
fn enter_phase(spec: &ContractSpec, state: &mut ContractState, phase: &Phase, at: SimTime) {
    state.phase = phase.clone();
    if spec.is_terminal(phase) {
        state.active_deadlines.clear();
        return;
    }
    for rule in spec.timeout_rules_for(phase) {
        state
            .active_deadlines
            .retain(|d| !(d.owed_by == rule.owed_by && d.expected_kind == rule.expected_kind));
        state.active_deadlines.insert(Deadline {
            expires_at: at + rule.duration_s,
            owed_by: rule.owed_by,
            expected_kind: rule.expected_kind.clone(),
            on_expiry: rule.on_expiry,
        });
    }
}

/// Fires every deadline with `expires_at <= now`, earliest first.
///
/// A deadline fires at its own `expires_at`, so calling this once at a late
/// time yields the same events as calling it repeatedly at intermediate times.
pub fn expire_deadlines(
    spec: &ContractSpec,
    state: &ContractState,
    now: SimTime,
) -> (Vec<TimeoutEvent>, ContractState) {
    let mut events = Vec::new();
    let mut next = state.clone();
    while let Some(deadline) = next.active_deadlines.first().cloned() {
        if deadline.expires_at > now {
            break;
        }
        next.active_deadlines.remove(&deadline);
        let phase_before = next.phase.clone();
        let target = spec.phase_after_timeout(deadline.on_expiry).clone();
        next.active_deadlines.clear();
        enter_phase(spec, &mut next, &target, deadline.expires_at);
        events.push(TimeoutEvent {
            fired_at: deadline.expires_at,
            phase_before,
            phase_after: target,
            deadline,
        });
    }
    (events, next)
}
