use std::path::Path;
use std::process::{Command, Output};

fn volfield(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volfield"))
        .args(args)
        .current_dir(dir)
        .env("VOLFIELD_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const TRAIN: &str = "steps = 6\nquery_points = 64\npairs = 32\neval_every = 3\n[model]\nres = 8\nfeature_dim = 8\nwidth = 8\ndepth = 3\nembed_dim = 4\n";

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        ok(&volfield(&["simulate", "--mesh", "box", "--actions", "2", "--seed", "7", "--out", name], dir.path()));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"version\"") && text.contains("\"config_hash\""));
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("train.toml"), TRAIN).unwrap();
    std::fs::write(d.join("eval.toml"), "miou_samples = 2000\ncandidates = 3\n").unwrap();
    std::fs::write(d.join("plan.toml"), "[plan]\nmiou_samples = 2000\ngrid = 8\n# keep every grid point so an untrained model still yields a state\ntau = 0.001\n").unwrap();
    ok(&volfield(&["simulate", "--mesh", "box", "--actions", "3", "--seed", "1", "--out", "t.jsonl"], d));
    for run in ["1", "2"] {
        let ck = format!("ck{run}.json");
        ok(&volfield(
            &["train", "--mesh", "box", "--data", "t.jsonl", "--config", "train.toml", "--out", &ck, "--log", &format!("loss{run}.csv")],
            d,
        ));
        ok(&volfield(
            &["evaluate", "--mesh", "box", "--checkpoint", &ck, "--data", "t.jsonl", "--config", "eval.toml", "--out", &format!("eval{run}.csv")],
            d,
        ));
        ok(&volfield(
            &[
                "plan", "--mesh", "box", "--start-seed", "3", "--target-seed", "4", "--k", "4", "--horizon", "1",
                "--dynamics", "learned", "--checkpoint", &ck, "--config", "plan.toml",
                "--out", &format!("plan{run}.json"), "--metrics-out", &format!("plan{run}.csv"),
            ],
            d,
        ));
    }
    for stem in ["ck", "loss", "eval", "plan"] {
        let ext = if stem == "ck" { "json" } else { "csv" };
        let a = std::fs::read(d.join(format!("{stem}1.{ext}"))).unwrap();
        let b = std::fs::read(d.join(format!("{stem}2.{ext}"))).unwrap();
        assert_eq!(a, b, "{stem} differs between runs");
    }
    assert_eq!(std::fs::read(d.join("plan1.json")).unwrap(), std::fs::read(d.join("plan2.json")).unwrap());

    let out = volfield(&["report", "--dir", "."], d);
    ok(&out);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("eval1.csv") && table.contains("learned"));
}

#[test]
fn empty_report_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = volfield(&["report", "--dir", "."], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no metrics files"));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("evaluation") && table.contains("success"));
}

#[test]
fn schema_violation_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[model]\nwidth = \"wide\"\n").unwrap();
    ok(&volfield(&["simulate", "--mesh", "box", "--actions", "1", "--out", "t.jsonl"], d));
    let out = volfield(&["train", "--mesh", "box", "--data", "t.jsonl", "--config", "bad.toml", "--out", "c", "--log", "l"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.width"));

    let text = std::fs::read_to_string(d.join("t.jsonl")).unwrap().replace("\"missed_grasp\":false", "\"missed_grasp\":3");
    std::fs::write(d.join("broken.jsonl"), text).unwrap();
    let out = volfield(&["train", "--mesh", "box", "--data", "broken.jsonl", "--out", "c", "--log", "l"], d);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1") && err.contains("missed_grasp"), "{err}");

    std::fs::write(d.join("mesh.json"), r#"{"vertices": [[0,0,0]], "tets": [[0, 1, 2, "x"]]}"#).unwrap();
    let out = volfield(&["simulate", "--mesh", "mesh.json", "--actions", "1", "--out", "t.jsonl"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tets"));
}

#[test]
fn missing_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = volfield(&["evaluate", "--mesh", "box", "--checkpoint", "nope.json", "--data", "nope.jsonl", "--out", "e.csv"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(volfield(&["plan", "--mesh", "box"], dir.path()).status.code(), Some(2));
    let out = volfield(&["plan", "--mesh", "box", "--start-seed", "1", "--target-seed", "2", "--dynamics", "learned", "--out", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_documents_every_command() {
    let out = volfield(&["--help"], Path::new("."));
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["simulate", "train", "evaluate", "plan", "report"] {
        assert!(text.contains(cmd));
    }
}
