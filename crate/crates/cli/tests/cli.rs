use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_atomret"))
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = bin()
        .args(["run", "--quiet", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    status.code().unwrap()
}

const SGNSPIKE: &str = r#"{"version": 1, "seed": 2, "experiment": {"kind": "bpdn", "problem": "sgnspike"}}"#;

#[test]
fn smoke_config_succeeds_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "smoke.json", r#"{"version": 1, "experiment": {"kind": "bpdn", "problem": "smoke"}}"#);
    let out = tmp.path().join("out");
    assert_eq!(run(&cfg, &out, &[]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "feasible_found");
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,d_value,eps_bound,f_reduced,feasible,nMat\n"));
}

#[test]
fn malformed_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for (i, text) in [
        "{ not json",
        r#"{"version": 7, "experiment": {"kind": "bpdn", "problem": "smoke"}}"#,
        r#"{"version": 1, "experiment": {"kind": "matrix_completion", "m": 6, "n": 4, "rank": 1, "fraction": 1.5}}"#,
        // spectral sets need a positive retrieval tolerance
        r#"{"version": 1, "experiment": {"kind": "rpca", "m": 6, "n": 6, "rank": 1, "sparsity": 0.1, "eps_tol_rel": 0.0}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = config(tmp.path(), &format!("bad{i}.json"), text);
        assert_eq!(run(&cfg, &out, &[]), 2, "{text}");
    }
    assert_eq!(run(&tmp.path().join("missing.json"), &out, &[]), 2);
}

#[test]
fn one_iteration_on_a_hard_instance_reports_max_iter() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "s.json", SGNSPIKE);
    let out = tmp.path().join("out");
    assert_eq!(run(&cfg, &out, &["--max-iter", "1"]), 1);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "max_iter");
    assert_eq!(report["iterations"], 1);
}

#[test]
fn same_seed_gives_identical_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "s.json", SGNSPIKE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--seed", "4"]), 0);
    assert_eq!(run(&cfg, &b, &["--seed", "4"]), 0);
    let ta = fs::read(a.join("trace.csv")).unwrap();
    assert_eq!(ta, fs::read(b.join("trace.csv")).unwrap());
    let c = tmp.path().join("c");
    run(&cfg, &c, &["--seed", "5"]);
    assert_ne!(ta, fs::read(c.join("trace.csv")).unwrap());
}
