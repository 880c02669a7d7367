use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use incropt_core::workload::{fixture, synthetic, Shape};

fn incropt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incropt"))
        .args(args)
        .env_remove("INCROPT_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_fixture(dir: &Path, name: &str) -> (String, String) {
    let w = fixture(name).unwrap();
    let c = dir.join("catalog.json");
    let q = dir.join("query.json");
    fs::write(&c, w.catalog.to_json()).unwrap();
    fs::write(&q, w.query.to_json()).unwrap();
    (s(&c).into(), s(&q).into())
}

#[test]
fn optimize_writes_plan_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (c, q) = write_fixture(dir.path(), "q3s");
    let plan = dir.path().join("plan.json");
    let metrics = dir.path().join("metrics.json");
    let o = incropt(&["optimize", "--catalog", &c, "--query", &q, "--strategies", "all", "--emit-plan", s(&plan), "--metrics", s(&metrics)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = json(&plan);
    assert_eq!(p["op"], "Join");
    assert_eq!(p["children"].as_array().unwrap().len(), 2);
    let m = json(&metrics);
    assert_eq!(m["engine"], "declarative");
    assert_eq!(m["cost"], p["cost"]);
    assert!(m["pruning_ratio_and"].as_f64().unwrap() > 0.0);

    for engine in ["volcano", "systemr", "oracle"] {
        let m2 = dir.path().join(format!("{engine}.json"));
        let o = incropt(&["optimize", "--fixture", "q3s", "--engine", engine, "--metrics", s(&m2)]);
        assert_eq!(code(&o), 0);
        assert_eq!(json(&m2)["cost"], m["cost"], "{engine}");
    }
}

#[test]
fn validation_and_infeasibility_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = incropt(&["optimize", "--fixture", "q3s", "--strategies", "bounding"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bounding requires aggsel"));

    let w = synthetic(Shape::Chain, 9, 3);
    let c = dir.path().join("c9.json");
    let q = dir.path().join("q9.json");
    fs::write(&c, w.catalog.to_json()).unwrap();
    fs::write(&q, w.query.to_json()).unwrap();
    assert_eq!(code(&incropt(&["optimize", "--catalog", s(&c), "--query", s(&q), "--engine", "oracle"])), 1);
    assert_eq!(code(&incropt(&["optimize", "--catalog", s(&c), "--query", s(&q)])), 0);

    let (cat, _) = write_fixture(dir.path(), "q5s");
    let disc = dir.path().join("disc.json");
    fs::write(&disc, r#"{"relations": ["customer", "region"]}"#).unwrap();
    assert_eq!(code(&incropt(&["optimize", "--catalog", &cat, "--query", s(&disc)])), 2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"relations\": [").unwrap();
    assert_eq!(code(&incropt(&["optimize", "--catalog", s(&bad), "--query", s(&disc)])), 1);
    assert_eq!(code(&incropt(&["optimize", "--fixture", "q3s", "--bogus"])), 1);
}

#[test]
fn reoptimize_from_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.json");
    assert_eq!(code(&incropt(&["optimize", "--fixture", "q5s", "--save-state", s(&state)])), 0);

    let up = dir.path().join("up.json");
    fs::write(&up, r#"[{"kind": "scan_cost", "target": "lineitem", "factor": 8}]"#).unwrap();
    let m = dir.path().join("m.json");
    let next = dir.path().join("next.json");
    let o = incropt(&["reoptimize", "--state", s(&state), "--updates", s(&up), "--metrics", s(&m), "--save-state", s(&next)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&m);
    assert!(r["update_ratio_and"].as_f64().unwrap() < 1.0);
    assert!(r["touched_and"].as_u64().unwrap() > 0);

    let noop = dir.path().join("noop.json");
    fs::write(&noop, r#"[{"kind": "join_selectivity", "target": "orders.o_orderkey=lineitem.l_orderkey", "factor": 1.0}]"#).unwrap();
    let o = incropt(&["reoptimize", "--state", s(&next), "--updates", s(&noop), "--metrics", s(&m)]);
    assert_eq!(code(&o), 0);
    let r = json(&m);
    assert_eq!(r["plan_changed"], false);
    assert_eq!(r["update_ratio_and"], 0.0);
    assert_eq!(r["update_ratio_or"], 0.0);

    let text = fs::read_to_string(&state).unwrap();
    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, text.replacen("60000.0", "60001.0", 1)).unwrap();
    assert_eq!(code(&incropt(&["reoptimize", "--state", s(&corrupt), "--updates", s(&up)])), 1);
    fs::write(&corrupt, &text[..text.len() / 2]).unwrap();
    assert_eq!(code(&incropt(&["reoptimize", "--state", s(&corrupt), "--updates", s(&up)])), 1);
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(2).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_report() {
    let o = incropt(&["bench", "--shapes", "chain", "--sizes", "5", "--trials", "4", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("#schema-version=1\nengine,"));
    let rows = rows(&csv);
    assert_eq!(rows.len(), 16);
    for r in &rows {
        let ratio: f64 = r[7].parse().unwrap();
        match r[0].as_str() {
            "declarative" => assert!(ratio > 0.0, "{r:?}"),
            "oracle" | "systemr" => assert_eq!((r[6].as_str(), r[7].as_str()), ("0.000000", "0.000000")),
            _ => {}
        }
    }
    let again = incropt(&["bench", "--shapes", "chain", "--sizes", "5", "--trials", "4", "--seed", "9"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), csv);

    let other = Command::new(env!("CARGO_BIN_EXE_incropt"))
        .args(["bench", "--shapes", "chain", "--sizes", "5", "--trials", "4", "--seed", "1"])
        .env("INCROPT_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(other.stdout).unwrap(), csv);

    let o = incropt(&["--schema-version"]);
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "schema-version=1");
}

#[test]
fn verify_suite() {
    let dir = tempfile::tempdir().unwrap();
    let repro = dir.path().join("repro.json");
    let o = incropt(&["verify", "--trials", "2", "--reproducer", s(&repro)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!repro.exists());

    let o = incropt(&["verify", "--trials", "2", "--inject-fault", "systemr", "--reproducer", s(&repro)]);
    assert_eq!(code(&o), 3);
    let r = json(&repro);
    assert_eq!(r["engine"], "systemr");
    assert_eq!(r["query"]["relations"].as_array().unwrap().len(), 3);
    assert!(r["updates"].as_array().unwrap().is_empty());

    let o = incropt(&["verify", "--trials", "0"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn fixture_files_round_trip_through_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let o = incropt(&["fixture", "q8joins", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let c = dir.path().join("q8joins.catalog.json");
    let q = dir.path().join("q8joins.query.json");
    let o = incropt(&["optimize", "--catalog", s(&c), "--query", s(&q)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 15);
}
