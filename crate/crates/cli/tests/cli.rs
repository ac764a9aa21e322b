use std::path::Path;
use std::process::{Command, Output};

fn drapenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drapenet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = drapenet(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = drapenet(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL_DATA: &str = r#"
[dataset]
seed = 7
count = 6

[dataset.garment]
kind = "grid"
nx = 8
nz = 8
width = 0.8
depth = 0.8
clearance = 0.03
"#;

#[test]
fn grad_check_table_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["grad-check", "--out", "gc"]);
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert!(rows.len() >= 30);
    assert!(rows.iter().all(|r| r.ends_with("PASS")), "{stdout}");
    for name in ["feastnet_conv", "stn", "loss.total"] {
        assert!(rows.iter().any(|r| r.starts_with(name)));
    }
    assert!(dir.path().join("gc/grad_check.json").exists());
    assert!(dir.path().join("gc/config.toml").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("gen.toml"), SMALL_DATA).unwrap();
    ok(dir.path(), &["gen-data", "--config", "gen.toml", "--seed", "7", "--out", "a"]);
    ok(dir.path(), &["gen-data", "--config", "gen.toml", "--seed", "7", "--out", "b"]);
    let a = tree(&dir.path().join("a"));
    assert_eq!(a, tree(&dir.path().join("b")));
    assert!(a.iter().any(|(f, _)| f == "manifest.json"));
    let echoed = std::fs::read_to_string(dir.path().join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));
}

#[test]
fn infer_with_fresh_model_returns_skinned_garment() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["infer", "--variant", "global", "--out", "inf"]);
    let inf = dir.path().join("inf");
    let pred = std::fs::read(inf.join("predicted.obj")).unwrap();
    assert_eq!(pred, std::fs::read(inf.join("skinned.obj")).unwrap());
    assert!(inf.join("body.obj").exists());
}

#[test]
fn pipeline_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("gen.toml"), SMALL_DATA).unwrap();
    ok(d, &["gen-data", "--config", "gen.toml", "--out", "data"]);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dropped"].as_array().unwrap().len(), 0);
    std::fs::write(d.join("train.toml"), "data = \"data\"\n[model]\npreset = \"tiny\"\n[train]\nepochs = 2\n").unwrap();
    ok(d, &["train", "--config", "train.toml", "--variant", "local", "--seed", "3", "--out", "run"]);
    for f in ["best.dnck", "last.dnck", "train_log.jsonl", "train_summary.json", "config.toml"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    // The echoed config alone reproduces the run.
    ok(d, &["train", "--config", "run/config.toml", "--out", "replay"]);
    for f in ["best.dnck", "last.dnck", "train_log.jsonl"] {
        assert_eq!(std::fs::read(d.join("run").join(f)).unwrap(), std::fs::read(d.join("replay").join(f)).unwrap());
    }

    std::fs::write(d.join("eval.toml"), "data = \"data\"\ncheckpoint = \"run/best.dnck\"\nsplit = \"val\"\n").unwrap();
    ok(d, &["eval", "--config", "eval.toml", "--out", "ev"]);
    for f in ["eval_report.json", "model_distance_curve.csv", "baseline_normal_curve.csv", "config.toml"] {
        assert!(d.join("ev").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ev/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["split"], "val");

    std::fs::write(
        d.join("bench.toml"),
        "checkpoint = \"run/best.dnck\"\n[bench]\nscenes = 1\nrepetitions = 1\n[bench.garment]\nkind = \"grid\"\nnx = 6\nnz = 6\nwidth = 0.8\ndepth = 0.8\nclearance = 0.03\n",
    )
    .unwrap();
    ok(d, &["bench", "--config", "bench.toml", "--out", "bench"]);
    assert!(d.join("bench/bench_report.json").exists());

    let err = fails(d, &["eval", "--config", "eval.toml", "--variant", "late"]);
    assert!(err.contains("--variant"), "{err}");
}

#[test]
fn invalid_input_exits_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let err = fails(d, &["train", "--config", "bad.toml"]);
    assert!(err.contains("unknown field `epoch`"), "{err}");
    let err = fails(d, &["train"]);
    assert!(err.contains("set `data`"), "{err}");
    let err = fails(d, &["infer", "--variant", "medium"]);
    assert!(err.contains("expected late, global or local"), "{err}");
    let err = fails(d, &["eval", "--config", "missing.toml"]);
    assert!(err.contains("missing.toml"), "{err}");
    std::fs::write(d.join("cp.toml"), "checkpoint = \"nope.dnck\"\n").unwrap();
    let err = fails(d, &["infer", "--config", "cp.toml"]);
    assert!(err.contains("nope.dnck"), "{err}");
    std::fs::write(d.join("g.toml"), "[dataset]\ncount = 0\n").unwrap();
    fails(d, &["gen-data", "--config", "g.toml"]);
}
