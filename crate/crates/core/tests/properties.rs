use std::collections::BTreeMap;

use hybrid_core::ccc::{parse_history, verify_history, Enforcer, HistoryEvent};
use hybrid_core::contract::reference::kinds::{self, ALL as KINDS};
use hybrid_core::contract::reference::{entitled_initiator, phases, reference_contract};
use hybrid_core::contract::{
    evaluate, expire_deadlines, Initiator, OperationInstance, OperationKind, PartyId, Role,
    SimTime, Verdict,
};
use hybrid_core::ledger::{
    verify_chain, Cluster, ConsensusConfig, EntryPayload, Fault, LatencyModel, NodeId,
};
use hybrid_core::router::{Evidence, HybridMode, OperationPartition, Router, RoutingOutcome};
use proptest::prelude::*;
use rust_decimal::Decimal;

fn party(role: Role) -> PartyId {
    match role {
        Role::DataSeller => PartyId::new("alice", role),
        Role::DataBuyer => PartyId::new("bob", role),
    }
}

fn canonical_role(kind: &str, coin: bool) -> Role {
    match entitled_initiator(kind) {
        Some(Initiator::DataSeller) => Role::DataSeller,
        Some(Initiator::DataBuyer) => Role::DataBuyer,
        _ if coin => Role::DataSeller,
        _ => Role::DataBuyer,
    }
}

fn happy_prefix() -> Vec<(&'static str, SimTime)> {
    vec![
        (kinds::OFFER_TO_BUY_DATA, 0),
        (kinds::ACCEPT_OFFER, 3600),
        (kinds::SEND_PAYMENT, 7200),
        (kinds::SEND_NOTIFICATION_OF_PAYMENT_ACCEPTANCE, 10800),
        (kinds::MAKE_DATA_AVAILABLE, 14400),
    ]
}

/// Timestamped reference-contract traces: an optional happy prefix followed by
/// random operations, mostly issued by the entitled party.
fn trace() -> impl Strategy<Value = Vec<OperationInstance>> {
    (
        any::<bool>(),
        prop::collection::vec((0..KINDS.len(), 0u8..4, any::<bool>(), 0u64..40_000), 0..24),
    )
        .prop_map(|(prefix, steps)| {
            let mut out = Vec::new();
            let mut t = 0;
            if prefix {
                for (kind, at) in happy_prefix() {
                    t = at;
                    out.push((kind, canonical_role(kind, false), at));
                }
            }
            for (k, wrong, coin, dt) in steps {
                t += dt;
                let kind = KINDS[k];
                let mut role = canonical_role(kind, coin);
                if wrong == 0 {
                    role = role.counterpart();
                }
                out.push((kind, role, t));
            }
            out.into_iter()
                .enumerate()
                .map(|(i, (kind, role, at))| {
                    OperationInstance::new(format!("op-{i:04}"), kind, party(role), at)
                })
                .collect()
        })
}

fn centralised(ops: &[OperationInstance]) -> (Vec<Verdict>, Enforcer) {
    let mut ccc = Enforcer::new(reference_contract()).unwrap();
    let verdicts = ops
        .iter()
        .map(|o| ccc.submit_operation(o.clone()).unwrap())
        .collect();
    (verdicts, ccc)
}

fn decentralised(
    ops: &[OperationInstance],
    config: ConsensusConfig,
    flip: Option<usize>,
) -> Cluster {
    let mut c = Cluster::new(reference_contract(), config).unwrap();
    if let Some(i) = flip {
        c.inject_fault(NodeId(i), Fault::VerdictFlip).unwrap();
    }
    for o in ops {
        c.step(o.submitted_at).unwrap();
        c.broadcast_operation(o.clone()).unwrap();
    }
    let end = c.now();
    c.settle(end);
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn evaluation_is_deterministic(ops in trace()) {
        let spec = reference_contract();
        let mut a = spec.initial_state();
        let mut b = spec.initial_state();
        for o in &ops {
            let (va, na) = evaluate(&spec, &a, o).unwrap();
            let (vb, nb) = evaluate(&spec, &b, o).unwrap();
            prop_assert_eq!(va, vb);
            prop_assert_eq!(&na, &nb);
            a = na;
            b = nb;
        }
    }

    #[test]
    fn ncc_only_expires_deadlines(ops in trace()) {
        let spec = reference_contract();
        let mut state = spec.initial_state();
        for o in &ops {
            let (v, next) = evaluate(&spec, &state, o).unwrap();
            if !v.is_cc() {
                let (_, expired) = expire_deadlines(&spec, &state, o.submitted_at);
                prop_assert_eq!(&next, &expired);
                prop_assert_eq!(v.state_hash_after, expired.digest());
            }
            state = next;
        }
    }

    #[test]
    fn terminal_phases_absorb(ops in trace(), extra in prop::collection::vec((0..KINDS.len(), any::<bool>()), 1..10)) {
        let spec = reference_contract();
        let (_, mut ccc) = centralised(&ops);
        let end = ops.last().map_or(0, |o| o.submitted_at) + 10 * 86_400;
        ccc.advance_time(end).unwrap();
        let terminal = ccc.state().phase.clone();
        prop_assume!(spec.is_terminal(&terminal));
        let mut closes = 0;
        for (i, (k, coin)) in extra.into_iter().enumerate() {
            let kind = KINDS[k];
            let o = OperationInstance::new(format!("late-{i}"), kind, party(canonical_role(kind, coin)), end + i as u64);
            let v = ccc.submit_operation(o).unwrap();
            if v.is_cc() {
                prop_assert_eq!(kind, kinds::CLOSE_REPOSITORY);
                prop_assert_eq!(terminal.as_str(), phases::SUCCESSFULLY_COMPLETED);
                closes += 1;
            }
            prop_assert_eq!(&ccc.state().phase, &terminal);
            prop_assert!(ccc.state().active_deadlines.is_empty());
        }
        prop_assert!(closes <= 1);
    }

    #[test]
    fn history_replays_to_the_same_verdicts(ops in trace()) {
        let (verdicts, ccc) = centralised(&ops);
        let (spec, records) = parse_history(&ccc.export_history()).unwrap();
        let replayed = verify_history(&spec, &records).unwrap();
        prop_assert_eq!(replayed.state(), ccc.state());
        let from_history: Vec<Verdict> = records
            .iter()
            .filter_map(|r| r.verdict().cloned())
            .collect();
        prop_assert_eq!(from_history, verdicts);
        if let Some(last) = records.last() {
            prop_assert_eq!(last.digest_after, ccc.state().digest());
        }
    }

    #[test]
    fn history_is_time_ordered(ops in trace()) {
        let (_, mut ccc) = centralised(&ops);
        let end = ops.last().map_or(0, |o| o.submitted_at) + 10 * 86_400;
        ccc.advance_time(end).unwrap();
        let times: Vec<SimTime> = ccc.history().iter().map(|r| r.at()).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
        for r in ccc.history() {
            if let HistoryEvent::Timeout { event } = &r.event {
                prop_assert_eq!(event.fired_at, event.deadline.expires_at);
            }
        }
    }

    #[test]
    fn explicit_clock_advances_do_not_change_verdicts(ops in trace(), pauses in prop::collection::vec(any::<bool>(), 24 + 5)) {
        let (expected, _) = centralised(&ops);
        let mut ccc = Enforcer::new(reference_contract()).unwrap();
        let mut got = Vec::new();
        for (i, o) in ops.iter().enumerate() {
            if pauses[i % pauses.len()] && o.submitted_at > ccc.now() {
                ccc.advance_time((ccc.now() + o.submitted_at) / 2).unwrap();
            }
            got.push(ccc.submit_operation(o.clone()).unwrap());
        }
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn rate_limit_admits_exactly_the_quota(n in 0usize..=50, spacing in 1u64..1700) {
        let mut ccc = Enforcer::new(reference_contract()).unwrap();
        for (i, (kind, at)) in happy_prefix().into_iter().enumerate() {
            let o = OperationInstance::new(format!("p{i}"), kind, party(canonical_role(kind, false)), at);
            prop_assert!(ccc.submit_operation(o).unwrap().is_cc());
        }
        let open = 14400;
        let mut cc = 0;
        for i in 0..n {
            let at = open + (i as u64 * spacing) % 86_400;
            let at = at.max(ccc.now());
            let o = OperationInstance::new(format!("r{i}"), kinds::PLACE_DATA_REQUEST, party(Role::DataBuyer), at);
            if ccc.submit_operation(o).unwrap().is_cc() {
                cc += 1;
            }
        }
        prop_assert_eq!(cc, n.min(24));
    }
}

fn latency_config(seed: u64, max_s: u64) -> ConsensusConfig {
    let mut config = ConsensusConfig::permissioned(4);
    config.latency = LatencyModel::Uniform { min_s: 0, max_s };
    config.rng_seed = seed;
    config
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_matches_the_centralised_enforcer(ops in trace(), seed in any::<u64>(), max_s in 0u64..120, flip in prop::option::of(0usize..4)) {
        let (expected, ccc) = centralised(&ops);
        let c = decentralised(&ops, latency_config(seed, max_s), flip);
        let got: Vec<Verdict> = c.receipts().iter().map(|r| r.verdict.clone()).collect();
        let ids: Vec<&str> = c.receipts().iter().map(|r| r.op_id.as_str()).collect();
        let expected_ids: Vec<&str> = ops.iter().map(|o| o.op_id.as_str()).collect();
        prop_assert_eq!(ids, expected_ids);
        prop_assert_eq!(got, expected);
        let correct: Vec<usize> = (0..4).filter(|i| Some(*i) != flip).collect();
        let reference = c.node_state(NodeId(correct[0])).unwrap();
        let reference_chain = c.chain(NodeId(correct[0])).unwrap();
        for &i in &correct[1..] {
            prop_assert_eq!(c.node_state(NodeId(i)).unwrap(), reference.clone());
            prop_assert_eq!(c.chain(NodeId(i)).unwrap(), reference_chain);
        }
        let ccc_timeouts: Vec<_> = ccc
            .history()
            .iter()
            .filter_map(|r| match &r.event {
                HistoryEvent::Timeout { event } => Some(event.clone()),
                _ => None,
            })
            .collect();
        let chain_timeouts: Vec<_> = c.timeouts().iter().map(|t| t.event.clone()).collect();
        prop_assert_eq!(chain_timeouts, ccc_timeouts);
        if let Some(f) = flip {
            prop_assert!(c.flagged().contains(&NodeId(f)) || c.receipts().is_empty());
        } else {
            prop_assert!(c.flagged().is_empty());
        }
    }

    #[test]
    fn correct_chains_stay_prefix_related(ops in trace(), seed in any::<u64>(), cut in 0usize..24) {
        let mut c = Cluster::new(reference_contract(), latency_config(seed, 90)).unwrap();
        for (i, o) in ops.iter().enumerate() {
            c.step(o.submitted_at).unwrap();
            c.broadcast_operation(o.clone()).unwrap();
            if i == cut {
                let chains: Vec<&[_]> = (0..4).map(|n| c.chain(NodeId(n)).unwrap()).collect();
                for pair in chains.windows(2) {
                    let (a, b) = (pair[0], pair[1]);
                    let k = a.len().min(b.len());
                    prop_assert_eq!(&a[..k], &b[..k]);
                }
            }
        }
    }

    #[test]
    fn any_bit_flip_is_located(ops in trace(), pick in any::<prop::sample::Index>(), byte in any::<prop::sample::Index>(), bit in 0u8..8) {
        let c = decentralised(&ops, ConsensusConfig::permissioned(4), None);
        let chain = c.chain(NodeId(0)).unwrap().to_vec();
        prop_assume!(!chain.is_empty());
        prop_assert_eq!(verify_chain(&chain), Ok(()));
        let h = pick.index(chain.len());
        let mut tampered = chain;
        let b = byte.index(tampered[h].preimage.len());
        tampered[h].preimage[b] ^= 1 << bit;
        prop_assert_eq!(verify_chain(&tampered).unwrap_err().height, h as u64);
    }

    #[test]
    fn identical_inputs_give_identical_chains(ops in trace(), seed in any::<u64>()) {
        let a = decentralised(&ops, latency_config(seed, 60), None);
        let b = decentralised(&ops, latency_config(seed, 60), None);
        prop_assert_eq!(a.receipts(), b.receipts());
        prop_assert_eq!(a.export_chain(NodeId(0)).unwrap(), b.export_chain(NodeId(0)).unwrap());
    }

    #[test]
    fn block_throughput_is_capped(times in prop::collection::vec(0u64..30, 1..200)) {
        let mut config = ConsensusConfig::public_ethereum_like();
        config.block_interval_s = 1;
        config.confirmation_depth = 1;
        let spec = hybrid_core::contract::ContractSpec::record_only(
            "log",
            [OperationKind::new(kinds::PLACE_DATA_REQUEST)],
        );
        let mut times = times;
        times.sort_unstable();
        let mut c = Cluster::new(spec, config).unwrap();
        for (i, t) in times.iter().enumerate() {
            c.step(*t).unwrap();
            c.broadcast_operation(OperationInstance::new(format!("r{i:03}"), kinds::PLACE_DATA_REQUEST, party(Role::DataBuyer), *t)).unwrap();
        }
        c.settle(30);
        prop_assert_eq!(c.receipts().len(), times.len());
        let mut per_second: BTreeMap<SimTime, u32> = BTreeMap::new();
        for r in c.receipts() {
            prop_assert!(r.committed_at > r.submitted_at);
            *per_second.entry(r.committed_at).or_default() += 1;
        }
        prop_assert!(per_second.values().all(|n| *n <= 7));
    }
}

fn router_for(d_ops: &[&str], config: ConsensusConfig) -> Router {
    let c: Vec<&str> = KINDS
        .iter()
        .copied()
        .filter(|k| !d_ops.contains(k))
        .collect();
    Router::new(
        reference_contract(),
        OperationPartition::new(c, d_ops.iter().copied()),
        HybridMode::OffChainExecution,
        config,
    )
    .unwrap()
}

/// Routes a trace with instant evidence: each d-op receipt is presented as
/// soon as it is final.
fn run_hybrid(router: &mut Router, ops: &[OperationInstance]) -> Vec<Verdict> {
    let mut verdicts = Vec::new();
    for o in ops {
        match router.route(o.clone()).unwrap() {
            RoutingOutcome::SentToCcc(v) => verdicts.push(v),
            RoutingOutcome::SentToChain(_) => {
                for receipt in router.step_chain(o.submitted_at).unwrap() {
                    let claimed = receipt.kind.clone();
                    let presented_at = receipt.finalized_at;
                    verdicts.push(
                        router
                            .submit_evidence(Evidence {
                                receipt,
                                claimed_obligation: claimed,
                                presented_at,
                            })
                            .unwrap(),
                    );
                }
            }
        }
    }
    verdicts
}

fn subset() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(any::<bool>(), KINDS.len()).prop_map(|mask| {
        KINDS
            .iter()
            .zip(mask)
            .filter(|(_, m)| *m)
            .map(|(k, _)| *k)
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hybrid_verdicts_match_centralised(ops in trace(), d_ops in subset()) {
        let (expected, _) = centralised(&ops);
        let mut router = router_for(&d_ops, ConsensusConfig::permissioned(4));
        prop_assert_eq!(run_hybrid(&mut router, &ops), expected);
    }

    #[test]
    fn moving_a_kind_off_chain_never_raises_fees(ops in trace(), d_ops in subset(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!d_ops.is_empty());
        let moved = d_ops[pick.index(d_ops.len())];
        let fewer: Vec<&str> = d_ops.iter().copied().filter(|k| *k != moved).collect();
        let fees = |d: &[&str]| {
            let mut r = router_for(d, ConsensusConfig::public_ethereum_like());
            for o in &ops {
                r.step_chain(o.submitted_at).unwrap();
                r.route(o.clone()).unwrap();
            }
            let end = r.cluster().now();
            r.settle_chain(end);
            r.accrued_fees()
        };
        let (before, after) = (fees(&d_ops), fees(&fewer));
        prop_assert_eq!(before.c_op, Decimal::ZERO);
        prop_assert!(after.total() <= before.total());
    }

    #[test]
    fn indelible_log_mirrors_only_ccc_verdicts(ops in trace()) {
        let spec = reference_contract();
        let mut r = Router::new(
            spec.clone(),
            OperationPartition::all_off_chain(&spec),
            HybridMode::IndelibleLog,
            ConsensusConfig::permissioned(4),
        )
        .unwrap();
        let mut ccc_verdicts = BTreeMap::new();
        for o in &ops {
            r.step_chain(o.submitted_at).unwrap();
            if let RoutingOutcome::SentToCcc(v) = r.route(o.clone()).unwrap() {
                ccc_verdicts.insert(o.op_id.clone(), v);
            }
        }
        let end = r.cluster().now();
        r.settle_chain(end);
        let chain = r.cluster().chain(NodeId(0)).unwrap();
        prop_assert_eq!(chain.len(), ops.len());
        for raw in chain {
            let entry = raw.decode().unwrap();
            let EntryPayload::Record { op } = &entry.payload else {
                return Err(TestCaseError::fail("only records expected"));
            };
            prop_assert_eq!(entry.verdict.as_ref(), ccc_verdicts.get(&op.op_id));
        }
    }
}
