use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use biskm::fixedpoint::PrecisionLevel;
use biskm::harness::{load_csv, SweepReport};
use biskm::weave::{unweave, WeavedMatrix};

fn biskm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biskm")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_gen_weave_kmeans_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let bisw = dir.path().join("data.bisw");
    let kreport = dir.path().join("k.json");
    let sreport = dir.path().join("s.json");
    let scsv = dir.path().join("s.csv");

    let out = biskm(&[
        "gen-data",
        "--n",
        "500",
        "--d",
        "20",
        "--k",
        "3",
        "--seed",
        "4",
        "--spread",
        "0.5",
        "--out",
        s(&data),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_csv(&data, false).unwrap();
    assert_eq!((m.rows(), m.cols()), (500, 20));

    let out = biskm(&["weave", "--in", s(&data), "--out", s(&bisw)]);
    assert!(out.status.success());
    let w = WeavedMatrix::load(&bisw).unwrap();
    assert_eq!((w.n(), w.d()), (500, 20));
    assert_eq!(&fs::read(&bisw).unwrap()[..4], b"BISW");
    assert_eq!(unweave(&w, PrecisionLevel::FULL).rows(), 500);

    let out =
        biskm(&["kmeans", "--in", s(&bisw), "--k", "3", "--precision", "6", "--seed", "2", "--report", s(&kreport)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let k: serde_json::Value = serde_json::from_str(&fs::read_to_string(&kreport).unwrap()).unwrap();
    assert_eq!(k["precision"], 6);
    assert_eq!(k["assignments"].as_array().unwrap().len(), 500);
    assert_eq!(k["loss_trace"].as_array().unwrap().len() as u64, k["iterations"].as_u64().unwrap());

    let out = biskm(&[
        "sweep",
        "--in",
        s(&data),
        "--precisions",
        "4,8,32",
        "--k",
        "3",
        "--seed",
        "2",
        "--report",
        s(&sreport),
        "--csv",
        s(&scsv),
        "--workers",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&sreport).unwrap()).unwrap();
    assert_eq!(report.schema, "biskm-report/1");
    assert_eq!(report.entries.len(), 3);
    let rows = fs::read_to_string(&scsv).unwrap().lines().count();
    assert_eq!(rows, 1 + report.entries.iter().map(|e| e.iterations).sum::<usize>());
    assert!(dir.path().join("s.summary.csv").exists());
}

#[test]
fn explicit_init_centers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let init = dir.path().join("init.csv");
    let bisw = dir.path().join("d.bisw");
    let report = dir.path().join("r.json");
    fs::write(&data, "0,0\n0.1,0.2\n0.9,1\n1,0.8\n").unwrap();
    fs::write(&init, "0,0\n1,1\n").unwrap();
    assert!(biskm(&["weave", "--in", s(&data), "--out", s(&bisw)]).status.success());
    let out = biskm(&[
        "kmeans",
        "--in",
        s(&bisw),
        "--k",
        "2",
        "--precision",
        "32",
        "--init",
        s(&init),
        "--report",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["assignments"], serde_json::json!([0, 0, 1, 1]));

    // three centers for k = 2 is a usage error
    fs::write(&init, "0,0\n1,1\n0.5,0.5\n").unwrap();
    let out = biskm(&[
        "kmeans",
        "--in",
        s(&bisw),
        "--k",
        "2",
        "--precision",
        "32",
        "--init",
        s(&init),
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn model_prints_estimate() {
    let out = biskm(&["model", "--n", "111280", "--d", "128", "--k", "8", "--precision", "8"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["compute_cycles"], 222_592);
    assert_eq!(v["speedup_vs_32"], 4.0);

    let dir = tempfile::tempdir().unwrap();
    let hw = dir.path().join("hw.json");
    fs::write(&hw, r#"{"row_buffer": {"enabled": true}}"#).unwrap();
    let out = biskm(&["model", "--n", "111280", "--d", "128", "--k", "8", "--precision", "4", "--hw", s(&hw)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["speedup_vs_32"].as_f64().unwrap() < 8.0);

    let out = biskm(&["model", "--n", "10", "--d", "4", "--k", "9", "--precision", "8"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn exit_codes() {
    assert_eq!(biskm(&["model", "--n", "10"]).status.code(), Some(1));
    assert_eq!(biskm(&["model", "--n", "10", "--d", "4", "--k", "2", "--precision", "33"]).status.code(), Some(1));
    assert_eq!(biskm(&["bogus"]).status.code(), Some(1));
    assert_eq!(biskm(&["--help"]).status.code(), Some(0));
    assert_eq!(biskm(&["model", "--n", "10", "--d", "2000", "--k", "2", "--precision", "8"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = biskm(&["weave", "--in", s(&missing), "--out", s(&dir.path().join("x.bisw"))]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("g.bisw");
    fs::write(&garbage, b"NOPE").unwrap();
    let out = biskm(&[
        "kmeans",
        "--in",
        s(&garbage),
        "--k",
        "2",
        "--precision",
        "8",
        "--seed",
        "1",
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let ragged = dir.path().join("r.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    let out = biskm(&["weave", "--in", s(&ragged), "--out", s(&dir.path().join("y.bisw"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
