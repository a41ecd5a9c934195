use std::process::Command;

fn qmpc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qmpc"))
}

#[test]
fn run_writes_metrics_summary_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.kv");
    std::fs::write(&cfg, "n = 16\nseed = 3\nstrategy = maxchain\n").unwrap();
    let out = dir.path().join("out");
    let st = qmpc()
        .args(["run", "--circuit", "inner_product", "--adversary", "mixed", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,good,msgs_sent,field_elements_sent,computation_steps"));
    assert_eq!(lines.count(), 16);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["audits"].as_array().map(Vec::len), Some(0));
    assert!(summary["metrics"]["max_chain_depth"].as_u64().unwrap() > 0);
    let trace = std::fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(trace.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(out.join("quorums.json").is_file());
}

#[test]
fn run_accepts_a_circuit_file() {
    let dir = tempfile::tempdir().unwrap();
    let circ = dir.path().join("c.txt");
    // output node 17 = (x1 + x2) * x3 + x4
    std::fs::write(&circ, "16 3 2147483647\n17 ADD 18 4\n18 MUL 19 3\n19 ADD 1 2\n").unwrap();
    let out = dir.path().join("out");
    let st = qmpc().arg("run").arg("--circuit").arg(&circ).args(["--seed", "5", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
}

#[test]
fn counter_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("counter");
    let st = qmpc().args(["counter", "--n", "256", "--ones", "200", "--out"]).arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("events.jsonl").is_file());

    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"n":[16],"families":["addition_tree"],"seeds":1}"#).unwrap();
    let sweep = dir.path().join("sweep");
    let st = qmpc().arg("sweep").arg("--grid").arg(&grid).arg("--out").arg(&sweep).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = std::fs::read_to_string(sweep.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let st = qmpc().args(["sweep", "--grid", "/nonexistent.json", "--out"]).arg(&sweep).status().unwrap();
    assert_eq!(st.code(), Some(2));
}
