//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! determinism under a fixed seed, and chain persistence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockpki(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockpki"))
        .args(args)
        .current_dir(dir)
        .env_remove("BLOCKPKI_SEED")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const BASIC: &str = r#"{ "threshold_t": 3, "chain": { "rng_seed": 21, "confirmation_depth": 0 } }"#;

#[test]
fn issue_then_verify_accepts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), "scenario.json", BASIC);

    let out = blockpki(&["issue", "--config", &config, "--out", "run"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in [
        "certificate.json",
        "truststore.json",
        "metrics.csv",
        "metrics.json",
    ] {
        assert!(dir.path().join("run").join(file).exists(), "{file}");
    }

    for mode in ["unaware", "light", "full"] {
        let out = blockpki(
            &[
                "verify",
                "--cert",
                "run/certificate.json",
                "--truststore",
                "run/truststore.json",
                "--domain",
                "www.example.com",
                "--mode",
                mode,
                "--now",
                "50000",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "mode {mode}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("accept certificate"));
    }
}

#[test]
fn verify_rejections_use_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), "scenario.json", BASIC);
    blockpki(&["issue", "--config", &config, "--out", "run"], dir.path());

    let out = blockpki(
        &[
            "verify",
            "--cert",
            "run/certificate.json",
            "--truststore",
            "run/truststore.json",
            "--domain",
            "www.other.com",
            "--mode",
            "light",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("WrongDomain"));
}

#[test]
fn unaware_mode_accepts_corrupted_proof_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), "scenario.json", BASIC);
    blockpki(&["issue", "--config", &config, "--out", "run"], dir.path());

    // Corrupt the inclusion proof in place by grafting on a bogus sibling.
    let cert_path = dir.path().join("run/certificate.json");
    let text = fs::read_to_string(&cert_path).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let bogus = serde_json::json!({ "hash_hex": "00".repeat(32), "side": "left" });
    value["domainCertificate"]["inclusionProof"]["siblings"]
        .as_array_mut()
        .unwrap()
        .push(bogus);
    fs::write(&cert_path, serde_json::to_string_pretty(&value).unwrap()).unwrap();

    let verify = |mode: &str| {
        blockpki(
            &[
                "verify",
                "--cert",
                "run/certificate.json",
                "--truststore",
                "run/truststore.json",
                "--domain",
                "www.example.com",
                "--mode",
                mode,
                "--now",
                "50000",
            ],
            dir.path(),
        )
    };
    let light = verify("light");
    assert_eq!(light.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&light.stdout).contains("BadInclusion"));

    let unaware = verify("unaware");
    assert_eq!(unaware.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&unaware.stderr).contains("inclusion proof not checked"));
}

#[test]
fn fixed_seed_reproduces_certificate_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), "scenario.json", BASIC);
    blockpki(
        &["issue", "--config", &config, "--seed", "99", "--out", "a"],
        dir.path(),
    );
    blockpki(
        &["issue", "--config", &config, "--seed", "99", "--out", "b"],
        dir.path(),
    );
    let a = fs::read(dir.path().join("a/certificate.json")).unwrap();
    let b = fs::read(dir.path().join("b/certificate.json")).unwrap();
    assert_eq!(a, b);

    // The environment variable is the seed fallback.
    let out = Command::new(env!("CARGO_BIN_EXE_blockpki"))
        .args(["issue", "--config", &config, "--out", "c"])
        .current_dir(dir.path())
        .env("BLOCKPKI_SEED", "99")
        .output()
        .unwrap();
    assert!(out.status.success());
    let c = fs::read(dir.path().join("c/certificate.json")).unwrap();
    assert_eq!(a, c);
}

#[test]
fn unfunded_requester_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(
        dir.path(),
        "poor.json",
        r#"{ "threshold_t": 2, "requester_balance": 5 }"#,
    );
    let out = blockpki(&["issue", "--config", &config, "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InsufficientBalance"));
}

#[test]
fn unresponsive_ca_times_out_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(
        dir.path(),
        "stall.json",
        r#"{
            "threshold_t": 2,
            "ca_behaviors": ["honest", "unresponsive"],
            "chain": { "rng_seed": 4, "confirmation_depth": 0 }
        }"#,
    );
    let out = blockpki(&["issue", "--config", &config, "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CA2"));
}

#[test]
fn chain_dump_load_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(dir.path(), "scenario.json", BASIC);

    let out = blockpki(
        &["chain", "dump", "--config", &config, "--out", "chain.jsonl"],
        dir.path(),
    );
    assert!(out.status.success());

    let out = blockpki(
        &[
            "chain",
            "load",
            "--path",
            "chain.jsonl",
            "--redump",
            "chain2.jsonl",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let first = fs::read(dir.path().join("chain.jsonl")).unwrap();
    let second = fs::read(dir.path().join("chain2.jsonl")).unwrap();
    assert_eq!(first, second);

    // Corrupt one block's parent hash: load must name the line.
    let text = String::from_utf8(first).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut block: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    block["header"]["parent_hash"] = serde_json::Value::String("11".repeat(32));
    lines[2] = serde_json::to_string(&block).unwrap();
    fs::write(dir.path().join("broken.jsonl"), lines.join("\n") + "\n").unwrap();

    let out = blockpki(&["chain", "load", "--path", "broken.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn attack_grid_reports_threshold_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_scenario(
        dir.path(),
        "grid.json",
        r#"{ "grid": { "threshold_t": 3, "max_sum": 3, "seed": 13 } }"#,
    );
    let out = blockpki(
        &["attack", "--scenario", &config, "--out", "report.json"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for cell in report.as_array().unwrap() {
        let i = cell["compromised"].as_u64().unwrap();
        let j = cell["impersonated"].as_u64().unwrap();
        let constructible = cell["constructible"].as_bool().unwrap();
        assert_eq!(constructible, i + j >= 3, "i={i} j={j}");
    }
}

#[test]
fn bench_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockpki(
        &[
            "bench",
            "--thresholds",
            "2,5",
            "--repetitions",
            "1",
            "--iterations",
            "50",
            "--seed",
            "3",
            "--out",
            "bench",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let issuance = fs::read_to_string(dir.path().join("bench/bench_issuance.csv")).unwrap();
    assert_eq!(issuance.lines().count(), 3);
    assert!(dir.path().join("bench/bench_verification.csv").exists());
    assert!(dir.path().join("bench/bench.json").exists());
}
