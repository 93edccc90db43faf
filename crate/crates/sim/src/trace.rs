//! Timestamped operation traces and the built-in trace profiles.

use std::fmt;
use std::str::FromStr;

use hybrid_core::contract::reference::kinds::{self, ALL as KINDS};
use hybrid_core::contract::reference::{
    entitled_initiator, DAY, HOUR, OFFER_ACCEPTANCE_DEADLINE_S, PAYMENT_DEADLINE_S,
    REPOSITORY_WINDOW_S,
};
use hybrid_core::contract::{Initiator, OperationInstance, PartyId, Role, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SELLER: &str = "alice";
pub const BUYER: &str = "bob";

/// Operations in submission order, plus the instant the run ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub ops: Vec<OperationInstance>,
    pub horizon: SimTime,
}

impl Trace {
    /// Index of the first operation submitted before its predecessor.
    pub fn first_regression(&self) -> Option<usize> {
        self.ops
            .windows(2)
            .position(|w| w[1].submitted_at < w[0].submitted_at)
            .map(|i| i + 1)
    }

    pub fn end(&self) -> SimTime {
        self.ops
            .last()
            .map_or(self.horizon, |o| o.submitted_at.max(self.horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    HappyPath,
    SilentSeller,
    LatePayer,
    GreedyBuyer,
    Random(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown trace profile {0:?} (expected happy-path, silent-seller, late-payer, greedy-buyer or random:N)")]
pub struct UnknownProfile(pub String);

impl FromStr for Profile {
    type Err = UnknownProfile;

    /// Accepts `happy-path` or `HappyPath`, and `random:20` or `Random(20)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let unknown = || UnknownProfile(s.to_owned());
        Ok(match key.as_str() {
            "happypath" => Profile::HappyPath,
            "silentseller" => Profile::SilentSeller,
            "latepayer" => Profile::LatePayer,
            "greedybuyer" => Profile::GreedyBuyer,
            _ => {
                let n = key.strip_prefix("random").ok_or_else(unknown)?;
                Profile::Random(n.parse().map_err(|_| unknown())?)
            }
        })
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::HappyPath => f.write_str("happy-path"),
            Profile::SilentSeller => f.write_str("silent-seller"),
            Profile::LatePayer => f.write_str("late-payer"),
            Profile::GreedyBuyer => f.write_str("greedy-buyer"),
            Profile::Random(n) => write!(f, "random:{n}"),
        }
    }
}

pub fn party(role: Role) -> PartyId {
    match role {
        Role::DataSeller => PartyId::new(SELLER, role),
        Role::DataBuyer => PartyId::new(BUYER, role),
    }
}

pub const OFFER_AT: SimTime = 0;
pub const ACCEPT_AT: SimTime = HOUR;
pub const PAY_AT: SimTime = 2 * HOUR;
pub const ACK_AT: SimTime = 3 * HOUR;
pub const OPEN_AT: SimTime = 4 * HOUR;
/// A minute after the repository window has expired.
pub const CLOSE_AT: SimTime = OPEN_AT + REPOSITORY_WINDOW_S + 60;
pub const GREEDY_REQUESTS_PER_DAY: u64 = 30;
const RANDOM_SPAN_S: SimTime = 3 * DAY;

struct Builder {
    ops: Vec<OperationInstance>,
}

impl Builder {
    fn new() -> Self {
        Builder { ops: Vec::new() }
    }

    fn push(&mut self, kind: &str, role: Role, at: SimTime) -> &mut Self {
        let id = format!("op-{:06}", self.ops.len());
        self.ops
            .push(OperationInstance::new(id, kind, party(role), at));
        self
    }

    fn happy_prefix(&mut self) -> &mut Self {
        self.push(kinds::OFFER_TO_BUY_DATA, Role::DataBuyer, OFFER_AT)
            .push(kinds::ACCEPT_OFFER, Role::DataSeller, ACCEPT_AT)
            .push(kinds::SEND_PAYMENT, Role::DataBuyer, PAY_AT)
            .push(
                kinds::SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE,
                Role::DataSeller,
                ACK_AT,
            )
            .push(kinds::MAKE_DATA_AVAILABLE, Role::DataSeller, OPEN_AT)
    }

    fn build(&mut self, horizon: SimTime) -> Trace {
        Trace {
            ops: std::mem::take(&mut self.ops),
            horizon,
        }
    }
}

/// Deterministic trace for `(profile, seed)`. Only `Random` uses the seed.
pub fn gen_trace(profile: Profile, seed: u64) -> Trace {
    let mut b = Builder::new();
    match profile {
        Profile::HappyPath => {
            b.happy_prefix();
            for k in 1..=5 {
                b.push(
                    kinds::PLACE_DATA_REQUEST,
                    Role::DataBuyer,
                    OPEN_AT + k * HOUR,
                );
            }
            b.push(kinds::CLOSE_REPOSITORY, Role::DataBuyer, CLOSE_AT);
            b.build(CLOSE_AT)
        }
        Profile::SilentSeller => {
            b.push(kinds::OFFER_TO_BUY_DATA, Role::DataBuyer, OFFER_AT);
            b.build(OFFER_AT + OFFER_ACCEPTANCE_DEADLINE_S)
        }
        Profile::LatePayer => {
            b.push(kinds::OFFER_TO_BUY_DATA, Role::DataBuyer, OFFER_AT)
                .push(kinds::ACCEPT_OFFER, Role::DataSeller, ACCEPT_AT)
                .push(
                    kinds::SEND_PAYMENT,
                    Role::DataBuyer,
                    ACCEPT_AT + PAYMENT_DEADLINE_S,
                );
            b.build(ACCEPT_AT + PAYMENT_DEADLINE_S)
        }
        Profile::GreedyBuyer => {
            b.happy_prefix();
            let spacing = DAY / GREEDY_REQUESTS_PER_DAY;
            for day in 0..REPOSITORY_WINDOW_S / DAY {
                for j in 0..GREEDY_REQUESTS_PER_DAY {
                    b.push(
                        kinds::PLACE_DATA_REQUEST,
                        Role::DataBuyer,
                        OPEN_AT + day * DAY + j * spacing,
                    );
                }
            }
            b.push(kinds::CLOSE_REPOSITORY, Role::DataBuyer, CLOSE_AT);
            b.build(CLOSE_AT)
        }
        Profile::Random(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draws: Vec<(SimTime, &str, Role)> = (0..n)
                .map(|_| {
                    let kind = KINDS[rng.gen_range(0..KINDS.len())];
                    let canonical = match entitled_initiator(kind) {
                        Some(Initiator::DataSeller) => Role::DataSeller,
                        Some(Initiator::DataBuyer) => Role::DataBuyer,
                        _ if rng.gen_bool(0.5) => Role::DataSeller,
                        _ => Role::DataBuyer,
                    };
                    let role = if rng.gen_bool(0.75) {
                        canonical
                    } else {
                        canonical.counterpart()
                    };
                    (rng.gen_range(0..=RANDOM_SPAN_S), kind, role)
                })
                .collect();
            draws.sort_by_key(|(at, _, _)| *at);
            for (at, kind, role) in draws {
                b.push(kind, role, at);
            }
            b.build(RANDOM_SPAN_S + REPOSITORY_WINDOW_S + DAY)
        }
    }
}
