//! The built-in data-trading contract between a data seller and a data buyer.

use std::collections::{BTreeMap, BTreeSet};

use super::spec::{
    ContractSpec, Effect, Guard, GuardedTransition, Initiator, PartyDecl, RateLimit, TimeoutRule,
};
use super::types::{OperationKind, Phase, Role, TimeoutEffect};

pub mod kinds {
    pub const OFFER_TO_BUY_DATA: &str = "OfferToBuyData";
    pub const REJECT_OFFER: &str = "RejectOffer";
    pub const ACCEPT_OFFER: &str = "AcceptOffer";
    pub const SEND_NOTIFICATION_OF_OFFER_ACCEPTANCE: &str = "SendNotificationOfOfferAcceptance";
    pub const SEND_PAYMENT: &str = "SendPayment";
    pub const SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE: &str = "SendNotificationOfPaymentAcceptance";
    pub const MAKE_DATA_AVAILABLE: &str = "MakeDataAvailable";
    pub const PLACE_DATA_REQUEST: &str = "PlaceDataRequest";
    pub const CLOSE_REPOSITORY: &str = "CloseRepository";

    pub const ALL: [&str; 8] = [
        OFFER_TO_BUY_DATA,
        REJECT_OFFER,
        ACCEPT_OFFER,
        SEND_PAYMENT,
        SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE,
        MAKE_DATA_AVAILABLE,
        PLACE_DATA_REQUEST,
        CLOSE_REPOSITORY,
    ];
}

pub mod phases {
    pub const START: &str = "Start";
    pub const OFFER_PENDING: &str = "OfferPending";
    pub const ACCEPTED: &str = "Accepted";
    pub const PAID: &str = "Paid";
    pub const PAYMENT_ACKNOWLEDGED: &str = "PaymentAcknowledged";
    pub const REPOSITORY_OPEN: &str = "RepositoryOpen";
    pub const SUCCESSFULLY_COMPLETED: &str = "SuccessfullyCompleted";
    pub const ABNORMALLY_TERMINATED: &str = "AbnormallyTerminated";

    pub const ALL: [&str; 8] = [
        START,
        OFFER_PENDING,
        ACCEPTED,
        PAID,
        PAYMENT_ACKNOWLEDGED,
        REPOSITORY_OPEN,
        SUCCESSFULLY_COMPLETED,
        ABNORMALLY_TERMINATED,
    ];
}

pub const HOUR: u64 = 3600;
pub const DAY: u64 = 24 * HOUR;

pub const OFFER_ACCEPTANCE_DEADLINE_S: u64 = 36 * HOUR;
pub const PAYMENT_DEADLINE_S: u64 = DAY;
pub const PAYMENT_ACK_DEADLINE_S: u64 = DAY;
pub const DATA_AVAILABLE_DEADLINE_S: u64 = DAY;
pub const REPOSITORY_WINDOW_S: u64 = 7 * DAY;
pub const MAX_REQUESTS_PER_WINDOW: u32 = 24;
pub const REQUEST_WINDOW_S: u64 = DAY;

/// The role entitled (or obliged) to issue each reference kind. Repository
/// closure is open to either party.
pub fn entitled_initiator(kind: &str) -> Option<Initiator> {
    use kinds::*;
    Some(match kind {
        OFFER_TO_BUY_DATA | SEND_PAYMENT | PLACE_DATA_REQUEST => Initiator::DataBuyer,
        REJECT_OFFER
        | ACCEPT_OFFER
        | SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE
        | MAKE_DATA_AVAILABLE => Initiator::DataSeller,
        CLOSE_REPOSITORY => Initiator::AnyParty,
        _ => return None,
    })
}

fn transition(
    from: &str,
    kind: &str,
    initiator: Initiator,
    guard: Guard,
    to: &str,
    effects: Vec<Effect>,
) -> GuardedTransition {
    GuardedTransition {
        from: Phase::new(from),
        kind: OperationKind::new(kind),
        initiator,
        guard,
        to: Phase::new(to),
        effects,
    }
}

fn rule(
    phase: &str,
    owed_by: Role,
    kind: &str,
    duration_s: u64,
    on_expiry: TimeoutEffect,
) -> TimeoutRule {
    TimeoutRule {
        phase: Phase::new(phase),
        owed_by,
        expected_kind: OperationKind::new(kind),
        duration_s,
        on_expiry,
    }
}

pub fn reference_contract() -> ContractSpec {
    use kinds::*;
    use phases::*;
    use Initiator::{AnyParty, DataBuyer as Buyer, DataSeller as Seller};

    let cancel = |k: &str| Effect::CancelDeadline(OperationKind::new(k));
    let awaiting = |k: &str| Guard::Awaiting(OperationKind::new(k));
    let not_awaiting = |k: &str| Guard::NotAwaiting(OperationKind::new(k));

    let transitions = vec![
        transition(
            START,
            OFFER_TO_BUY_DATA,
            Buyer,
            Guard::Always,
            OFFER_PENDING,
            vec![],
        ),
        transition(
            OFFER_PENDING,
            REJECT_OFFER,
            Seller,
            Guard::Always,
            START,
            vec![cancel(ACCEPT_OFFER)],
        ),
        transition(
            OFFER_PENDING,
            ACCEPT_OFFER,
            Seller,
            Guard::Always,
            ACCEPTED,
            vec![cancel(ACCEPT_OFFER)],
        ),
        transition(
            ACCEPTED,
            SEND_PAYMENT,
            Buyer,
            Guard::Always,
            PAID,
            vec![cancel(SEND_PAYMENT)],
        ),
        // The acknowledgement and the data release are owed independently
        // once payment is collected; whichever arrives last opens the window.
        transition(
            PAID,
            SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE,
            Seller,
            awaiting(MAKE_DATA_AVAILABLE),
            PAYMENT_ACKNOWLEDGED,
            vec![cancel(SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE)],
        ),
        transition(
            PAID,
            SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE,
            Seller,
            not_awaiting(MAKE_DATA_AVAILABLE),
            REPOSITORY_OPEN,
            vec![
                cancel(SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE),
                Effect::OpenRepositoryWindow,
            ],
        ),
        transition(
            PAID,
            MAKE_DATA_AVAILABLE,
            Seller,
            awaiting(MAKE_DATA_AVAILABLE),
            PAID,
            vec![cancel(MAKE_DATA_AVAILABLE)],
        ),
        transition(
            PAYMENT_ACKNOWLEDGED,
            MAKE_DATA_AVAILABLE,
            Seller,
            Guard::Always,
            REPOSITORY_OPEN,
            vec![cancel(MAKE_DATA_AVAILABLE), Effect::OpenRepositoryWindow],
        ),
        transition(
            REPOSITORY_OPEN,
            PLACE_DATA_REQUEST,
            Buyer,
            Guard::Always,
            REPOSITORY_OPEN,
            vec![],
        ),
        // Closing is only possible once the window has expired, and is
        // recorded once.
        transition(
            SUCCESSFULLY_COMPLETED,
            CLOSE_REPOSITORY,
            AnyParty,
            Guard::RepositoryNotClosed,
            SUCCESSFULLY_COMPLETED,
            vec![Effect::CloseRepository],
        ),
    ];

    let timeout_rules = vec![
        rule(
            OFFER_PENDING,
            Role::DataSeller,
            ACCEPT_OFFER,
            OFFER_ACCEPTANCE_DEADLINE_S,
            TimeoutEffect::TreatAsRejection,
        ),
        rule(
            ACCEPTED,
            Role::DataBuyer,
            SEND_PAYMENT,
            PAYMENT_DEADLINE_S,
            TimeoutEffect::AbnormalTermination,
        ),
        rule(
            PAID,
            Role::DataSeller,
            SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE,
            PAYMENT_ACK_DEADLINE_S,
            TimeoutEffect::AbnormalTermination,
        ),
        rule(
            PAID,
            Role::DataSeller,
            MAKE_DATA_AVAILABLE,
            DATA_AVAILABLE_DEADLINE_S,
            TimeoutEffect::AbnormalTermination,
        ),
        rule(
            REPOSITORY_OPEN,
            Role::DataSeller,
            CLOSE_REPOSITORY,
            REPOSITORY_WINDOW_S,
            TimeoutEffect::SuccessfulCompletion,
        ),
    ];

    ContractSpec {
        name: "data-trading".into(),
        parties: vec![
            PartyDecl {
                role: Role::DataSeller,
                title: "data seller".into(),
            },
            PartyDecl {
                role: Role::DataBuyer,
                title: "data buyer".into(),
            },
        ],
        operation_kinds: kinds::ALL.iter().map(|k| OperationKind::new(*k)).collect(),
        kind_aliases: BTreeMap::from([(
            SEND_NOTIFICATION_OF_OFFER_ACCEPTANCE.to_owned(),
            OperationKind::new(ACCEPT_OFFER),
        )]),
        phases: phases::ALL.iter().map(|p| Phase::new(*p)).collect(),
        initial_phase: Phase::new(START),
        terminal_phases: BTreeSet::from([
            Phase::new(SUCCESSFULLY_COMPLETED),
            Phase::new(ABNORMALLY_TERMINATED),
        ]),
        abnormal_phase: Phase::new(ABNORMALLY_TERMINATED),
        completed_phase: Phase::new(SUCCESSFULLY_COMPLETED),
        transitions,
        timeout_rules,
        rate_limits: vec![RateLimit {
            kind: OperationKind::new(PLACE_DATA_REQUEST),
            max_count: MAX_REQUESTS_PER_WINDOW,
            window_length_s: REQUEST_WINDOW_S,
        }],
        payment_kind: Some(OperationKind::new(SEND_PAYMENT)),
    }
}

/// Returns a copy of `spec` with the deadline for `kind` in `phase` replaced.
pub fn with_deadline(
    mut spec: ContractSpec,
    phase: &str,
    kind: &str,
    duration_s: u64,
) -> ContractSpec {
    for r in &mut spec.timeout_rules {
        if r.phase == phase && r.expected_kind == kind {
            r.duration_s = duration_s;
        }
    }
    spec
}
