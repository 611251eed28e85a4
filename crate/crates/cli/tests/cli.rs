use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const LENNON: &str = "In what city was the subject of the film Nowhere Boy born?";

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn frem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frem"))
        .arg("--config")
        .arg(data("lennon.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn template_prints_slots() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&frem(&["template", "-q", LENNON]))).unwrap();
    assert_eq!(v["display"], "In what city was the subject of the film [other] born?");
}

#[test]
fn synth_then_select() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.json");
    let pool = pool.to_str().unwrap();
    frem(&["--pool", pool, "synth", "-q", LENNON]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(pool).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["demos"].as_array().unwrap().len(), 3);

    let trace: serde_json::Value = serde_json::from_str(&stdout(&frem(&["--pool", pool, "select", "-q", LENNON]))).unwrap();
    assert_eq!(trace["selected"], "demo-000000");
    // the delta flag overrides the config file
    let trace: serde_json::Value =
        serde_json::from_str(&stdout(&frem(&["--pool", pool, "--delta", "10", "select", "-q", LENNON]))).unwrap();
    assert_eq!(trace["fallbacks"][1]["kind"], "no_judge");
}

#[test]
fn answer_from_document() {
    let out = stdout(&frem(&["answer", "-q", LENNON, "-d", data("lennon_document.txt").to_str().unwrap()]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["answer"], "Liverpool");
}

#[test]
fn eval_and_ablate_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let ds = data("lennon.jsonl");
    let line = stdout(&frem(&["eval", "--dataset", ds.to_str().unwrap(), "-o", report.to_str().unwrap()]));
    assert!(line.contains("EM=100.00"), "{line}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["header"]["rouge_variant"], "lcs-f1-maxgold");

    let out_dir = dir.path().join("ab");
    stdout(&frem(&[
        "ablate",
        "--dataset",
        ds.to_str().unwrap(),
        "--flags",
        "full,no_suw",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]));
    assert!(out_dir.join("full.json").exists() && out_dir.join("no_suw.json").exists());
}

#[test]
fn usage_errors_fail() {
    assert!(!frem(&["--backend", "replay", "template", "-q", "x"]).status.success());
    let ds = data("lennon.jsonl");
    let bad = frem(&["ablate", "--dataset", ds.to_str().unwrap(), "--flags", "bogus", "--out-dir", "/tmp/x"]);
    assert!(!bad.status.success());
    assert!(!frem(&["select", "-q", "x"]).status.success());
}
