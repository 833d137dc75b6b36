use std::path::Path;
use std::process::{Command, Output};

fn asap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asap"))
        .args(args)
        .env_remove("ASAP_THREADS")
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path) -> String {
    let path = dir.join("s.atnb").display().to_string();
    let out = asap(&[
        "synth", "--out", &path, "--n", "16", "--layers", "12", "--margin", "0.3", "--sink", "5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn pool_run_reports_sink_and_cluster_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let dist = dir.path().join("d.csv");
    let mask = dir.path().join("m.csv");
    let v = json(&asap(&[
        "run",
        "--input",
        &input,
        "--mode",
        "pool",
        "--dump-distances",
        dist.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
    ]));
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["sink_report"]["sink_index"], 5);
    assert_eq!(v["sink_report"]["detected"], true);
    let sizes = v["cluster_sizes"].as_array().unwrap();
    assert_eq!(sizes.len(), 6);
    assert_eq!(sizes.iter().map(|s| s.as_u64().unwrap()).sum::<u64>(), 15);
    assert!(v["timings_per_stage_ms"]["accumulate_ms"].is_number());

    let d = std::fs::read_to_string(dist).unwrap();
    assert_eq!(d.lines().count(), 16);
    let m = std::fs::read_to_string(mask).unwrap();
    assert_eq!(m.lines().count(), 17);
}

#[test]
fn hybrid_without_budget_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let out = asap(&["run", "--input", &input, "--mode", "hybrid"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "ConfigError");
}

#[test]
fn hybrid_with_budget_logs_removals() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let v = json(&asap(&[
        "run",
        "--input",
        &input,
        "--mode",
        "hybrid",
        "--budget",
        "3",
        "--removal-batch",
        "2",
    ]));
    assert!(v["budget_used"]["survivors"].as_u64().unwrap() <= 3);
    assert!(v["reduced"]["tokens"].as_array().unwrap().len() <= 5);
}

#[test]
fn report_only_without_early_stop_records_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let v = json(&asap(&[
        "run",
        "--input",
        &input,
        "--mode",
        "report-only",
        "--no-early-stop",
    ]));
    assert_eq!(v["column_sum_history"].as_array().unwrap().len(), 12);
    assert!(v.get("reduced").is_none());
}

#[test]
fn random_anchor_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let args = [
        "run",
        "--input",
        &input,
        "--anchor",
        "random",
        "--seed",
        "7",
        "--no-tokens",
    ];
    let a = json(&asap(&args));
    let b = json(&asap(&args));
    assert_eq!(a["anchor"], b["anchor"]);
    assert_eq!(a["cluster_sizes"], b["cluster_sizes"]);
}

#[test]
fn validate_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path());
    let v = json(&asap(&["validate", "--input", &input]));
    assert_eq!(v["tokens"], 16);

    let bad = dir.path().join("bad.atnb");
    std::fs::write(&bad, b"XXXX\x01\x00\x00\x00").unwrap();
    let out = asap(&["validate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(10));

    let missing = dir.path().join("nope.atnb");
    let out = asap(&["validate", "--input", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_rejects_infeasible_margin() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.atnb");
    let out = asap(&[
        "synth",
        "--out",
        path.to_str().unwrap(),
        "--n",
        "4",
        "--margin",
        "0.9",
        "--sink",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(50));
}

#[test]
fn bench_writes_csv() {
    let out = asap(&[
        "bench",
        "--sizes",
        "8,16",
        "--warmup",
        "1",
        "--iterations",
        "2",
        "--min-sample-ms",
        "0.05",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n,stage,median_ms"));
    assert_eq!(text.lines().count(), 7);
}
