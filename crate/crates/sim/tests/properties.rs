use hybrid_core::contract::reference::kinds::{self, ALL as KINDS};
use hybrid_sim::compare::compare_reports;
use hybrid_sim::runner::run;
use hybrid_sim::scenario::Scenario;
use hybrid_sim::trace::{gen_trace, Profile};
use proptest::prelude::*;
use serde_json::{json, Value};

fn run_json(scenario: Value) -> hybrid_sim::runner::RunOutput {
    let s = Scenario::from_json(&scenario.to_string()).unwrap();
    run(&s.resolve().unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_reproducible(seed in any::<u64>(), n in 1usize..40, max_s in 0u64..60) {
        let scenario = json!({
            "deployment": "Decentralised", "seed": seed,
            "consensus": {"node_count": 4, "quorum": 3, "latency": {"kind": "Uniform", "min_s": 0, "max_s": max_s}},
            "trace": {"profile": format!("random:{n}")}
        });
        prop_assert_eq!(run_json(scenario.clone()), run_json(scenario));
    }

    #[test]
    fn any_partition_preserves_centralised_verdicts(seed in any::<u64>(), on_chain in prop::collection::vec(any::<bool>(), KINDS.len())) {
        let (mut c_ops, mut d_ops) = (Vec::new(), Vec::new());
        for (kind, chain) in KINDS.iter().zip(&on_chain) {
            if *chain { d_ops.push(*kind) } else { c_ops.push(*kind) }
        }
        let trace = json!({"profile": "random:25"});
        let central = run_json(json!({"deployment": "Centralised", "seed": seed, "trace": trace})).report;
        let hybrid = run_json(json!({
            "deployment": "Hybrid", "mode": "OffChainExecution", "seed": seed,
            "consensus": {"node_count": 4, "quorum": 3},
            "partition": {"c_ops": c_ops, "d_ops": d_ops}, "trace": trace
        })).report;
        prop_assert_eq!(&central.final_phase, &hybrid.final_phase);
        prop_assert_eq!(compare_reports(central, hybrid).diffs, vec![]);
    }

    #[test]
    fn gateway_serves_exactly_the_compliant_requests(seed in any::<u64>()) {
        let report = run_json(json!({"deployment": "Centralised", "seed": seed, "trace": {"profile": "random:40"}})).report;
        for op in report.ops.iter().filter(|o| o.kind.as_str() == kinds::PLACE_DATA_REQUEST) {
            prop_assert_eq!(op.served, Some(op.outcome == Some(hybrid_core::contract::Outcome::CC)));
        }
    }

    #[test]
    fn random_traces_are_ordered(seed in any::<u64>(), n in 0usize..60) {
        let t = gen_trace(Profile::Random(n), seed);
        prop_assert_eq!(t.ops.len(), n);
        prop_assert_eq!(t.first_regression(), None);
        prop_assert!(t.horizon >= t.end());
    }
}
