mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn dpsql(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dpsql"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn dpsql");
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    let line = text.lines().last().unwrap_or_else(|| panic!("no stderr"));
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn catalog() -> String {
    common::corpus_dir().join("catalog.json").display().to_string()
}

fn init_ledger(path: &Path, total: &str) {
    let o = dpsql(&["budget", "init", "--ledger", path.to_str().unwrap(), "--total-epsilon", total], "");
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn rewrite_prints_sql_and_charges() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.json");
    init_ledger(&ledger, "2.0");
    let cat = catalog();
    let args = ["rewrite", "--catalog", &cat, "--epsilon", "0.1", "--ledger", ledger.to_str().unwrap()];
    let o = dpsql(&args, "SELECT COUNT(*) FROM trips");
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("LN(1-2*ABS("));
    let meta = stderr_json(&o);
    assert!(["restricted", "elastic"].contains(&meta["mechanism"].as_str().unwrap()));
    assert!((meta["receipt"]["remainingEpsilon"].as_f64().unwrap() - 1.9).abs() < 1e-12);

    let show = dpsql(&["budget", "show", "--ledger", ledger.to_str().unwrap()], "");
    let shown: serde_json::Value = serde_json::from_str(&stdout(&show)).unwrap();
    assert_eq!(shown["charges"], 1);
    assert_eq!(shown["version"], 1);
}

#[test]
fn exhausted_ledger_exits_4_without_sql() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.json");
    init_ledger(&ledger, "0.15");
    let cat = catalog();
    let args = ["rewrite", "--catalog", &cat, "--epsilon", "0.1", "--ledger", ledger.to_str().unwrap()];
    assert!(dpsql(&args, "SELECT COUNT(*) FROM trips").status.success());
    let o = dpsql(&args, "SELECT COUNT(*) FROM trips");
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).is_empty());
    assert_eq!(stderr_json(&o)["error"]["code"], "budget_exhausted");
}

#[test]
fn forced_saa_on_join_exits_3() {
    let cat = catalog();
    let o = dpsql(
        &["rewrite", "--catalog", &cat, "--epsilon", "0.1", "--mechanism", "saa"],
        "SELECT COUNT(*) FROM trips JOIN drivers ON trips.driver_id = drivers.id",
    );
    assert_eq!(o.status.code(), Some(3));
    let err = stderr_json(&o);
    assert!(err["error"]["message"].as_str().unwrap().contains("join"), "{err}");
}

#[test]
fn analyze_sends_averages_to_saa() {
    let cat = catalog();
    let o = dpsql(&["analyze", "--catalog", &cat, "--epsilon", "0.5", "--json"], "SELECT AVG(distance) FROM trips");
    assert!(o.status.success(), "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["chosen"], "saa");
    for v in report["verdicts"].as_array().unwrap() {
        assert_eq!(v["excluded"].is_null(), v["mechanism"] == "saa", "{v}");
    }
}

#[test]
fn error_exit_codes() {
    let cat = catalog();
    let base = ["rewrite", "--catalog", cat.as_str(), "--epsilon", "0.1"];
    assert_eq!(dpsql(&base, "SELECT COUNT(*) FROM nowhere").status.code(), Some(5));
    assert_eq!(dpsql(&base, "SELECT COUNT(* FROM trips").status.code(), Some(2));
    let o = dpsql(&["analyze", "--catalog", &cat, "--epsilon", "0.1"], "SELECT COUNT(*) FROM drivers");
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(dpsql(&["rewrite", "--catalog", "/nonexistent.json", "--epsilon", "0.1"], "").status.code(), Some(5));
}

fn run_args<'a>(cat: &'a str, data: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--catalog", cat, "--data", data, "--epsilon", "0.1"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn run_is_deterministic_per_seed() {
    let (cat, data) = (catalog(), common::corpus_dir().join("data").display().to_string());
    let sql = "SELECT COUNT(*) FROM trips WHERE kind = 'pool'";
    let a = dpsql(&run_args(&cat, &data, &["--seed", "42"]), sql);
    let b = dpsql(&run_args(&cat, &data, &["--seed", "42"]), sql);
    let c = dpsql(&run_args(&cat, &data, &["--seed", "43"]), sql);
    assert!(a.status.success(), "{a:?}");
    assert_eq!(stdout(&a), stdout(&b));
    assert_ne!(stdout(&a), stdout(&c));
}

#[test]
fn run_histogram_lists_every_domain_bin() {
    let (cat, data) = (catalog(), common::corpus_dir().join("data").display().to_string());
    let o = dpsql(&run_args(&cat, &data, &["--seed", "1"]), "SELECT city_id, COUNT(*) FROM trips GROUP BY city_id");
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let bins: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(bins, ["1", "2", "3", "4", "5", "6", "7", "8"]);
}

#[test]
fn run_trials_spread_matches_laplace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("catalog.json"),
        r#"{"tables":[{"name":"trips","protected":true,"rowCount":5,"columns":[{"name":"trip_id","type":"int"}]}]}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("trips.csv"), "trip_id\n1\n2\n3\n4\n5\n").unwrap();
    let cat = dir.path().join("catalog.json").display().to_string();
    let data = dir.path().display().to_string();
    let o = dpsql(&run_args(&cat, &data, &["--seed", "9", "--trials", "100000", "--mechanism", "elastic"]), "SELECT COUNT(*) FROM trips");
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let cell = text.lines().nth(1).unwrap();
    let (mean, sd) = cell.split_once('±').unwrap();
    let (mean, sd): (f64, f64) = (mean.parse().unwrap(), sd.parse().unwrap());
    let want = 2f64.sqrt() * 10.0;
    assert!((sd - want).abs() <= 0.05 * want, "sd {sd}");
    assert!((mean - 5.0).abs() < 0.5, "mean {mean}");
}
