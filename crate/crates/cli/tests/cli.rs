//! End-to-end runs of the `iconf` binary.

use serde_json::Value;
use std::path::PathBuf;
use std::process::{Command, Output};

fn spec(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "specs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn fixture(name: &str, text: &str) -> String {
    let dir = std::env::temp_dir().join(format!("iconf-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn iconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iconf"))
        .args(args)
        .env_remove("ICONF_SEED")
        .output()
        .unwrap()
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut all = vec!["--format", "json"];
    all.extend_from_slice(args);
    let out = iconf(&all);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout}"));
    (out.status.code().unwrap(), v)
}

const FK_INSERTS: &str = r#"
name = "fk-inserts"

[schema.dept]
key = ["id"]

[schema.emp]
key = ["name"]
fields = ["dept"]

[[invariants]]
name = "employee-department"
class = "foreign-key"
from = { table = "emp", fields = ["dept"] }
to = { table = "dept", fields = ["id"] }

[[transactions]]
name = "add-dept"
params = { d = { range = [1, 3] } }
ops = [{ op = "insert", table = "dept", fields = { id = "$d" } }]

[[transactions]]
name = "hire"
params = { n = { choice = ["a", "b", "c"] }, d = { range = [1, 3] } }
ops = [{ op = "insert", table = "emp", fields = { name = "$n", dept = "$d" } }]

[[initial-state]]
table = "dept"
fields = { id = 1 }
"#;

#[test]
fn reports_embed_tool_version_seed_and_command() {
    let (_, v) = json(&["--seed", "9", "analyze", &spec("bank.toml")]);
    assert_eq!(v["tool"], "iconf");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["seed"], 9);
    assert!(v["command"].as_str().unwrap().contains("analyze"));
}

#[test]
fn seed_defaults_from_the_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_iconf"))
        .args(["--format", "json", "analyze", &spec("bank.toml")])
        .env("ICONF_SEED", "77")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 77);
}

#[test]
fn analyze_payroll_flags_only_hiring_with_chosen_ids() {
    let (code, v) = json(&["analyze", &spec("payroll.toml")]);
    assert_eq!(code, 1);
    assert_eq!(v["results"]["coordination_required"], serde_json::json!(["hire-with-id"]));
    let remove = v["results"]["transactions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|t| t["transaction"] == "remove-employee")
        .unwrap();
    assert_eq!(remove["coordination_free"], true);
}

#[test]
fn analyze_tpcc_flags_only_the_order_id_conditions() {
    let (code, v) = json(&["analyze", &spec("tpcc.toml")]);
    assert_eq!(code, 1);
    for t in v["results"]["transactions"].as_array().unwrap() {
        for inv in t["invariants"].as_array().unwrap() {
            let name = inv["invariant"].as_str().unwrap();
            if inv["verdict"] != "i-confluent" {
                assert!(name.starts_with("c2-") || name.starts_with("c3-"), "{t}");
            }
        }
    }
    let new_order = &v["results"]["transactions"][0];
    assert_eq!(new_order["transaction"], "new-order");
    assert_eq!(new_order["coordination_free"], false);
}

#[test]
fn analyze_without_transactions_is_all_clear() {
    let path = fixture(
        "empty.toml",
        "[schema.t]\nkey = [\"k\"]\n\n[[invariants]]\nname = \"u\"\nclass = \"uniqueness\"\ntable = \"t\"\nfield = \"k\"\n",
    );
    let out = iconf(&["analyze", &path]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all transactions are coordination-free"));
}

#[test]
fn check_finds_the_uniqueness_diamond_and_repeats_exactly() {
    let args = ["check", &spec("payroll.toml"), "--trials", "1000", "--depth", "2", "--seed", "3"];
    let first = iconf(&args);
    let second = iconf(&args);
    assert_eq!(first.status.code(), Some(1));
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("counterexample-found"));
    assert!(text.contains("branch 1 end state is valid"));
    assert!(text.contains("branch 2 end state is valid"));
    assert!(text.contains("violates unique-employee-id"), "{text}");
}

#[test]
fn check_fk_inserts_finds_no_counterexample_in_ten_thousand_trials() {
    let path = fixture("fk.toml", FK_INSERTS);
    let (code, v) = json(&["check", &path, "--trials", "10000", "--depth", "4", "--seed", "11"]);
    assert_eq!(code, 0);
    let row = &v["results"]["verdicts"][0];
    assert_eq!(row["outcome"], "no-counterexample-found");
    assert_eq!(row["trials"], 10000);
}

#[test]
fn simulate_with_a_partition_exposes_uniqueness_violations() {
    let (code, v) = json(&[
        "simulate",
        &spec("payroll.toml"),
        "--partition",
        "0-1@0..500",
        "--duration-ms",
        "1000",
    ]);
    assert_eq!(code, 1);
    assert!(v["results"]["violations"].as_u64().unwrap() > 0);
    assert_eq!(v["results"]["converged"], serde_json::json!([true, true]));
}

#[test]
fn tpcc_run_reports_metrics_and_a_clean_audit() {
    let (code, v) = json(&["tpcc", "--servers", "2", "--warehouses", "2", "--duration", "50"]);
    assert_eq!(code, 0);
    let conditions = v["results"]["audit"]["conditions"].as_array().unwrap();
    assert_eq!(conditions.len(), 12);
    assert!(conditions.iter().all(|c| c["holds"] == true));
    assert_eq!(v["results"]["metrics"]["violations"], 0);
    let yes = v["results"]["classification"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["verdict"] == "i-confluent")
        .count();
    assert_eq!(yes, 10);
}

#[test]
fn tpcc_text_and_json_carry_the_same_numbers() {
    let args = ["tpcc", "--duration", "30", "--strategy", "2pl"];
    let text = String::from_utf8(iconf(&args).stdout).unwrap();
    let (_, v) = json(&args);
    let committed = v["results"]["metrics"]["committed"].as_u64().unwrap();
    let line = text.lines().find(|l| l.starts_with("committed")).unwrap();
    assert_eq!(line.split_whitespace().last().unwrap(), committed.to_string());
}

#[test]
fn distributed_sweep_under_locking_declines_steeply() {
    let out = iconf(&[
        "--format",
        "csv",
        "sweep",
        "tpcc",
        "--over",
        "distributed-fraction",
        "--values",
        "0,50,100",
        "--strategy",
        "2pl",
        "--duration",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let thr: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(thr[1] < thr[0] && thr[2] < thr[1], "{csv}");
    assert!(thr[2] <= 0.2 * thr[0], "{csv}");
}

#[test]
fn server_sweep_scales_coordination_free_throughput() {
    let (code, v) = json(&[
        "sweep", "tpcc", "--over", "servers", "--values", "1..3", "--warehouses", "1", "--clients", "2", "--duration",
        "50",
    ]);
    assert_eq!(code, 0);
    let thr: Vec<f64> = v["results"]["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["metrics"]["throughput"].as_f64().unwrap())
        .collect();
    assert!(thr[0] > 0.0);
    assert!((thr[1] / thr[0] - 2.0).abs() < 0.2 && (thr[2] / thr[0] - 3.0).abs() < 0.3, "{thr:?}");
}

#[test]
fn commit_sweep_reproduces_twelve_commits_per_second() {
    let (code, v) = json(&["sweep", "commit", "--protocol", "d2pc", "--rtt-ms", "166", "--servers", "2"]);
    assert_eq!(code, 0);
    let thr = v["results"]["rows"][0]["throughput"].as_f64().unwrap();
    assert!((thr - 12.0).abs() <= 1.0, "{thr}");
}

#[test]
fn report_file_matches_standard_output() {
    let path = std::env::temp_dir().join(format!("iconf-report-{}.json", std::process::id()));
    let p = path.to_string_lossy().into_owned();
    let out = iconf(&["--format", "json", "--output", &p, "analyze", &spec("bank.toml")]);
    assert_eq!(std::fs::read(&path).unwrap(), out.stdout);
    std::fs::remove_file(path).unwrap();
}

#[test]
fn errors_exit_with_status_two() {
    assert_eq!(iconf(&["analyze", "/definitely/not/here.toml"]).status.code(), Some(2));
    assert_eq!(iconf(&["bogus-command"]).status.code(), Some(2));
    let bad = fixture("bad.toml", "[schema.t\n");
    let out = iconf(&["analyze", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert_eq!(
        iconf(&["tpcc", "--distributed-fraction", "1.5"]).status.code(),
        Some(2)
    );
}
