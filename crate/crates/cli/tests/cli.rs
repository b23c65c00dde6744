use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn synthaug(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthaug"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = synthaug(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    synthaug(args, cwd).status.code().expect("exit code")
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn staged_commands_match_a_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-corpus", "--out", "origin", "--images", "40", "--seed", "2"], d);
    assert_eq!(lines(&d.join("origin/manifest.jsonl")), 40);

    ok(&["train-classifier", "--data", "origin/manifest.jsonl", "--out", "staged/model.json", "--desk"], d);
    ok(&["generate", "--origin", "origin/manifest.jsonl", "--out-dir", "staged", "--param", "noise_rate=0.3"], d);
    let said = ok(
        &["select", "--candidates", "staged/candidates.jsonl", "--origin", "origin/manifest.jsonl", "--model", "staged/model.json"],
        d,
    );
    assert!(said.starts_with("accepted "), "{said}");
    ok(&["merge", "--origin", "origin/manifest.jsonl", "--aug", "staged/aug.jsonl", "--out", "staged/final.jsonl"], d);

    let table = ok(
        &["run", "--origin", "origin/manifest.jsonl", "--out-dir", "full", "--desk", "--param", "noise_rate=0.3"],
        d,
    );
    assert!(table.contains("accepted"), "{table}");
    for f in ["model.json", "candidates.jsonl", "audit.jsonl", "aug.jsonl", "final.jsonl"] {
        assert_eq!(
            fs::read(d.join("staged").join(f)).unwrap(),
            fs::read(d.join("full").join(f)).unwrap(),
            "{f} differs between staged and full runs"
        );
    }

    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("full/report.json")).unwrap()).unwrap();
    let accepted = report["accepted"].as_u64().unwrap() as usize;
    assert_eq!(lines(&d.join("full/aug.jsonl")), accepted);
    assert_eq!(lines(&d.join("full/final.jsonl")), 40 + accepted);
    assert_eq!(lines(&d.join("full/audit.jsonl")), 40);
}

#[test]
fn eval_and_sweep_read_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-corpus", "--out", "origin", "--images", "30"], d);
    ok(&["make-corpus", "--out", "held", "--images", "30", "--seed", "1", "--id-prefix", "held"], d);
    ok(&["run", "--origin", "origin/manifest.jsonl", "--out-dir", "run", "--desk", "--param", "noise_rate=0.5"], d);

    let v: Value = serde_json::from_str(&ok(
        &["eval", "--model", "run/model.json", "--data", "held/manifest.jsonl", "--run-dir", "run"],
        d,
    ))
    .unwrap();
    assert_eq!(v["classifier"]["images"], 30);
    assert!(v["classifier"]["per_class_accuracy"].as_f64().unwrap() > 0.8);
    assert_eq!(v["selection"]["candidates"], 30);

    let rows: Value = serde_json::from_str(&ok(
        &["sweep", "--run-dir", "run", "--grid", "0.5,0.9", "--csv", "sweep.csv"],
        d,
    ))
    .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["epsilon"], 0.9);
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("epsilon,accepted,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-corpus", "--out", "data", "--images", "20"], d);
    fs::write(
        d.join("run.toml"),
        r#"origin = "data/manifest.jsonl"
output_dir = "out"
seed = 3

[train]
epochs = 5

[train.grid]
height = 64
width = 64
patch = 8

[selection]
epsilon = 0.8

[generation]
backend = "procedural"
params = { noise_rate = 0.2 }
"#,
    )
    .unwrap();
    // Run from elsewhere: paths resolve against the config file.
    let elsewhere = tempfile::tempdir().unwrap();
    let cfg = d.join("run.toml");
    ok(&["--config", cfg.to_str().unwrap(), "run", "--epsilon", "0.6"], elsewhere.path());
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["epsilon"], 0.6);
    assert_eq!(report["seed"], 3);
    assert_eq!(report["candidates"], 20);
}

#[test]
fn ablate_writes_one_report_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(
        &[
            "ablate", "--seeds", "0,1", "--images", "30", "--held-out", "20", "--epochs", "5",
            "--modes", "baseline,augment_with_selection", "--out", "ablation.json",
        ],
        d,
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[1]["seed"], 1);
    assert_eq!(v[0]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_to_string(d.join("ablation.json")).unwrap(), out);
}

#[test]
fn exit_codes_separate_usage_config_and_stage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&["--help"], d), 0);
    assert_eq!(code(&[], d), 1);
    assert_eq!(code(&["run", "--no-such-flag"], d), 1);
    assert_eq!(code(&["run"], d), 1);
    assert_eq!(code(&["eval"], d), 1);
    assert_eq!(code(&["ablate", "--modes", "everything"], d), 1);
    assert_eq!(code(&["--config", "missing.toml", "run"], d), 1);

    ok(&["make-corpus", "--out", "data", "--images", "5"], d);
    let run = |extra: &[&str]| {
        let mut args = vec!["run", "--origin", "data/manifest.jsonl", "--out-dir", "out", "--desk"];
        args.extend_from_slice(extra);
        code(&args, d)
    };
    assert_eq!(run(&["--epsilon", "1.5"]), 1);
    assert_eq!(run(&["--backend", "nope"]), 1);
    assert_eq!(code(&["run", "--origin", "absent.jsonl", "--out-dir", "out"], d), 1);

    fs::remove_file(d.join("data/images/shape-00001.png")).unwrap();
    let out = synthaug(&["run", "--origin", "data/manifest.jsonl", "--out-dir", "out", "--desk"], d);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `train` failed"), "{stderr}");
    assert!(d.join("out/INCOMPLETE").exists());
}
