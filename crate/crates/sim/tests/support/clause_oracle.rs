//! Independent model of the data-trading agreement, written clause by clause
//! with one explicit timer per obligation. Used to cross-check the table-driven
//! state machine; it shares no code with it.

#![allow(dead_code)]

pub const HOUR: u64 = 3600;
pub const DAY: u64 = 24 * HOUR;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Start,
    OfferPending,
    Accepted,
    Paid,
    PaymentAcknowledged,
    RepositoryOpen,
    SuccessfullyCompleted,
    AbnormallyTerminated,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Start => "Start",
            Phase::OfferPending => "OfferPending",
            Phase::Accepted => "Accepted",
            Phase::Paid => "Paid",
            Phase::PaymentAcknowledged => "PaymentAcknowledged",
            Phase::RepositoryOpen => "RepositoryOpen",
            Phase::SuccessfullyCompleted => "SuccessfullyCompleted",
            Phase::AbnormallyTerminated => "AbnormallyTerminated",
        }
    }

    fn finished(self) -> bool {
        matches!(
            self,
            Phase::SuccessfullyCompleted | Phase::AbnormallyTerminated
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Seller,
    Buyer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Ok,
    Duplicate,
    Finished,
    WrongParty,
    TooManyRequests,
    NotNow,
}

/// Who may perform each action under the agreement. `None`: either party.
pub fn performer(kind: &str) -> Option<Party> {
    match kind {
        "OfferToBuyData" | "SendPayment" | "PlaceDataRequest" => Some(Party::Buyer),
        "CloseRepository" => None,
        _ => Some(Party::Seller),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Terms {
    pub accept_within: u64,
    pub pay_within: u64,
    pub acknowledge_within: u64,
    pub deliver_within: u64,
    pub repository_days: u64,
    pub requests_per_day: u32,
}

impl Default for Terms {
    fn default() -> Self {
        Terms {
            accept_within: 36 * HOUR,
            pay_within: DAY,
            acknowledge_within: DAY,
            deliver_within: DAY,
            repository_days: 7,
            requests_per_day: 24,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agreement {
    pub terms: Terms,
    pub phase: Phase,
    accept_by: Option<u64>,
    pay_by: Option<u64>,
    acknowledge_by: Option<u64>,
    deliver_by: Option<u64>,
    repository_until: Option<u64>,
    opened_at: Option<u64>,
    closed: bool,
    day_requests: Option<(u64, u32)>,
    last_accepted_id: Option<String>,
}

impl Agreement {
    pub fn new(terms: Terms) -> Self {
        Agreement {
            terms,
            phase: Phase::Start,
            accept_by: None,
            pay_by: None,
            acknowledge_by: None,
            deliver_by: None,
            repository_until: None,
            opened_at: None,
            closed: false,
            day_requests: None,
            last_accepted_id: None,
        }
    }

    fn timers(&self) -> [Option<u64>; 5] {
        [
            self.accept_by,
            self.pay_by,
            self.acknowledge_by,
            self.deliver_by,
            self.repository_until,
        ]
    }

    /// Earliest pending obligation instant.
    pub fn next_deadline(&self) -> Option<u64> {
        self.timers().into_iter().flatten().min()
    }

    fn clear_timers(&mut self) {
        self.accept_by = None;
        self.pay_by = None;
        self.acknowledge_by = None;
        self.deliver_by = None;
        self.repository_until = None;
    }

    /// Lets time run to `t`. An obligation due at `t` is already missed.
    /// Returns the instants at which something lapsed.
    pub fn pass_time(&mut self, t: u64) -> Vec<(u64, Phase)> {
        let mut lapsed = Vec::new();
        while let Some(due) = self.next_deadline().filter(|d| *d <= t) {
            let outcome = if self.accept_by == Some(due) {
                Phase::Start
            } else if self.repository_until == Some(due) {
                Phase::SuccessfullyCompleted
            } else {
                Phase::AbnormallyTerminated
            };
            self.clear_timers();
            self.phase = outcome;
            lapsed.push((due, outcome));
        }
        lapsed
    }

    fn open_repository(&mut self, t: u64) {
        self.phase = Phase::RepositoryOpen;
        self.opened_at = Some(t);
        self.repository_until = Some(t + self.terms.repository_days * DAY);
        self.day_requests = None;
    }

    pub fn submit(&mut self, id: &str, kind: &str, by: Party, t: u64) -> Answer {
        self.pass_time(t);
        if self.last_accepted_id.as_deref() == Some(id) {
            return Answer::Duplicate;
        }
        let answer = self.act(kind, by, t);
        if answer == Answer::Ok {
            self.last_accepted_id = Some(id.to_owned());
        }
        answer
    }

    fn act(&mut self, kind: &str, by: Party, t: u64) -> Answer {
        let allowed = performer(kind).is_none_or(|p| p == by);
        if !allowed && !self.phase.finished() {
            return Answer::WrongParty;
        }
        match (self.phase, kind) {
            // An offer opens a 36 hour window for the seller's answer.
            (Phase::Start, "OfferToBuyData") => {
                self.phase = Phase::OfferPending;
                self.accept_by = Some(t + self.terms.accept_within);
            }
            (Phase::OfferPending, "RejectOffer") => {
                self.accept_by = None;
                self.phase = Phase::Start;
            }
            (Phase::OfferPending, "AcceptOffer") => {
                self.accept_by = None;
                self.phase = Phase::Accepted;
                self.pay_by = Some(t + self.terms.pay_within);
            }
            (Phase::Accepted, "SendPayment") => {
                self.pay_by = None;
                self.phase = Phase::Paid;
                self.acknowledge_by = Some(t + self.terms.acknowledge_within);
                self.deliver_by = Some(t + self.terms.deliver_within);
            }
            (Phase::Paid, "SendNotificationOfPaymentAcceptance") => {
                self.acknowledge_by = None;
                if self.deliver_by.is_some() {
                    self.phase = Phase::PaymentAcknowledged;
                } else {
                    self.open_repository(t);
                }
            }
            (Phase::Paid, "MakeDataAvailable") if self.deliver_by.is_some() => {
                self.deliver_by = None;
            }
            (Phase::PaymentAcknowledged, "MakeDataAvailable") => {
                self.deliver_by = None;
                self.open_repository(t);
            }
            (Phase::RepositoryOpen, "PlaceDataRequest") => {
                let day = (t - self.opened_at.unwrap_or(0)) / DAY;
                let used = match self.day_requests {
                    Some((d, n)) if d == day => n,
                    _ => 0,
                };
                if used >= self.terms.requests_per_day {
                    return Answer::TooManyRequests;
                }
                self.day_requests = Some((day, used + 1));
            }
            (Phase::SuccessfullyCompleted, "CloseRepository") if !self.closed => {
                self.closed = true;
            }
            (phase, _) if phase.finished() => return Answer::Finished,
            _ => return Answer::NotNow,
        }
        Answer::Ok
    }
}
