use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hybrid_sim::report::MetricsReport;
use hybrid_sim::trace::Trace;
use serde_json::{json, Value};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

fn run_scenario(dir: &Path, name: &str, scenario: Value) -> (Output, PathBuf) {
    let path = write(dir, &format!("{name}.json"), &scenario);
    let out = dir.join(name);
    let output = sim(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    (output, out)
}

fn read_report(out: &Path) -> MetricsReport {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn happy_path_completes_centralised() {
    let dir = tempfile::tempdir().unwrap();
    let (output, out) = run_scenario(
        dir.path(),
        "central",
        json!({"deployment": "Centralised", "trace": {"profile": "happy-path"}}),
    );
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("SuccessfullyCompleted"));
    let report = read_report(&out);
    assert_eq!(report.final_phase.as_str(), "SuccessfullyCompleted");
    assert_eq!(report.count("served"), 5);
    assert!(out.join("history.ndjson").exists());
}

#[test]
fn decentralised_happy_path_matches_and_nodes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (_, central) = run_scenario(
        dir.path(),
        "central",
        json!({"deployment": "Centralised", "trace": {"profile": "happy-path"}}),
    );
    let (output, decentral) = run_scenario(
        dir.path(),
        "decentral",
        json!({"deployment": "Decentralised", "consensus": {"node_count": 4, "quorum": 3},
               "trace": {"profile": "happy-path"}}),
    );
    assert!(output.status.success());
    let (a, b) = (read_report(&central), read_report(&decentral));
    assert!(a.verdicts().eq(b.verdicts()));
    let digests: Vec<_> = b.final_digests.values().collect();
    assert_eq!(digests.len(), 4);
    assert!(digests.iter().all(|d| *d == &a.final_digests["ccc"]));
    for i in 0..4 {
        assert!(decentral.join(format!("chain-node-{i}.ndjson")).exists());
    }
}

#[test]
fn silent_seller_returns_to_start() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = run_scenario(
        dir.path(),
        "silent",
        json!({"deployment": "Centralised", "trace": {"profile": "silent-seller"}}),
    );
    let report = read_report(&out);
    assert_eq!(report.final_phase.as_str(), "Start");
    assert_eq!(report.timeouts.len(), 1);
    assert_eq!(report.timeouts[0].fired_at, 129_600);
}

#[test]
fn configuration_defects_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (output, _) = run_scenario(
        dir.path(),
        "bad-quorum",
        json!({"deployment": "Decentralised", "consensus": {"node_count": 4, "quorum": 2},
               "trace": {"profile": "happy-path"}}),
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("quorum"));

    let (output, _) = run_scenario(
        dir.path(),
        "bad-partition",
        json!({"deployment": "Hybrid", "mode": "PaymentChannel", "consensus": {},
               "partition": {"c_ops": [], "d_ops": ["SendPayment"]},
               "trace": {"profile": "happy-path"}}),
    );
    assert_eq!(output.status.code(), Some(2));

    let missing = dir.path().join("nope.json");
    let output = sim(&["run", "--scenario", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gen_trace_is_seeded() {
    let a = sim(&["gen-trace", "--profile", "random:5", "--seed", "9"]);
    let b = sim(&["gen-trace", "--profile", "random:5", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let trace: Trace = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(trace.ops.len(), 5);

    let greedy = sim(&["gen-trace", "--profile", "greedy-buyer"]);
    let trace: Trace = serde_json::from_slice(&greedy.stdout).unwrap();
    assert_eq!(trace.ops.len(), 5 + 7 * 30 + 1);

    assert!(!sim(&["gen-trace", "--profile", "nobody"]).status.success());
}

#[test]
fn verify_accepts_exports_and_rejects_edits() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = run_scenario(
        dir.path(),
        "decentral",
        json!({"deployment": "Decentralised", "consensus": {"node_count": 4, "quorum": 3},
               "trace": {"profile": "late-payer"}}),
    );
    let chain = out.join("chain-node-2.ndjson");
    let output = sim(&["verify", chain.to_str().unwrap()]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(String::from_utf8_lossy(&output.stdout).starts_with("ok: chain"));

    let text = std::fs::read_to_string(&chain).unwrap();
    let edited = text.replacen("\"submitted_at\":3600", "\"submitted_at\":3500", 1);
    assert_ne!(edited, text);
    let forged = write(dir.path(), "forged.ndjson", &Value::Null);
    std::fs::write(&forged, edited).unwrap();
    let output = sim(&["verify", forged.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("record 1"));

    std::fs::write(&forged, "{\"format\":\"ledger-chain\"\n").unwrap();
    let output = sim(&["verify", forged.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 1"));
}

#[test]
fn compare_reports_fee_delta_and_refuses_other_traces() {
    let dir = tempfile::tempdir().unwrap();
    let consensus = json!({"node_count": 4, "quorum": 3, "fee_per_tx": "4.15"});
    let central = write(
        dir.path(),
        "a.json",
        &json!({"name": "central", "deployment": "Centralised", "trace": {"profile": "happy-path"}}),
    );
    let hybrid = write(
        dir.path(),
        "b.json",
        &json!({"name": "hybrid", "deployment": "Hybrid", "mode": "OffChainExecution", "consensus": consensus,
                "partition": {"c_ops": ["OfferToBuyData", "RejectOffer", "AcceptOffer",
                    "SendNotificationOfPaymentAcceptance", "MakeDataAvailable", "PlaceDataRequest"],
                    "d_ops": ["SendPayment", "CloseRepository"]},
                "trace": {"profile": "happy-path"}}),
    );
    let output = sim(&[
        "compare",
        central.to_str().unwrap(),
        hybrid.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let table = String::from_utf8_lossy(&output.stdout);
    assert!(table.contains("no verdict differences"));
    assert!(table.contains("fee delta    8.30"), "{table}");

    let other = write(
        dir.path(),
        "c.json",
        &json!({"deployment": "Centralised", "trace": {"profile": "late-payer"}}),
    );
    let output = sim(&[
        "compare",
        central.to_str().unwrap(),
        other.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}
