//! End-to-end runs over a small shapes corpus.

mod common;

use std::fs;

use common::{desk_pipeline, snapshot, write_origin};
use synthaug::classifier::load_checkpoint;
use synthaug::data::read_manifest;
use synthaug::pipeline::{layout, read_run_audit, run_pipeline, PipelineConfig, RunOptions};
use synthaug::Error;

#[test]
fn two_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 40, 3);
    let a = tmp.path().join("run-a");
    let b = tmp.path().join("run-b");
    run_pipeline(&desk_pipeline(&origin, &a, 5, 0.3), RunOptions::default()).unwrap();
    run_pipeline(&desk_pipeline(&origin, &b, 5, 0.3), RunOptions::default()).unwrap();
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(sb[k] == *v, "{} differs", k.display());
    }
    assert!(!a.join(layout::INCOMPLETE).exists());
}

#[test]
fn different_seeds_give_different_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 10, 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_pipeline(&desk_pipeline(&origin, &a, 1, 0.0), RunOptions::default()).unwrap();
    run_pipeline(&desk_pipeline(&origin, &b, 2, 0.0), RunOptions::default()).unwrap();
    assert_ne!(
        fs::read(a.join(layout::CANDIDATES)).unwrap(),
        fs::read(b.join(layout::CANDIDATES)).unwrap()
    );
}

#[test]
fn counts_reconcile_across_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 30, 8);
    let out = tmp.path().join("run");
    let mut cfg = desk_pipeline(&origin, &out, 2, 0.5);
    cfg.passes = 2;
    let result = run_pipeline(&cfg, RunOptions::default()).unwrap();
    let r = &result.report;

    let audit = read_run_audit(&out).unwrap();
    let aug = read_manifest(&out.join(layout::AUG)).unwrap();
    let fin = read_manifest(&out.join(layout::FINAL)).unwrap();
    let candidates = read_manifest(&out.join(layout::CANDIDATES)).unwrap();

    assert_eq!(r.origin_images, 30);
    assert_eq!(r.candidates, 60);
    assert_eq!(candidates.len(), 60);
    assert_eq!(audit.len(), 60);
    assert_eq!(r.accepted, audit.iter().filter(|d| d.accepted()).count());
    assert_eq!(r.accepted, aug.len());
    assert_eq!(r.accepted + r.rejected_not_subset + r.rejected_empty, r.candidates);
    assert_eq!(fin.len(), 30 + r.accepted);
    assert_eq!(r.final_images, fin.len());
    assert_eq!(result.final_manifest, fin);
    let m = r.selection_metrics.as_ref().expect("procedural content is known");
    assert_eq!(m.accepted, r.accepted);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(layout::REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(json["accepted"], r.accepted);
    assert!(fs::read_to_string(out.join(layout::REPORT_TXT)).unwrap().contains("accepted"));
}

#[test]
fn final_manifest_resolves_from_its_own_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 12, 4);
    let out = tmp.path().join("run");
    run_pipeline(&desk_pipeline(&origin, &out, 0, 0.0), RunOptions::default()).unwrap();
    let fin = read_manifest(&out.join(layout::FINAL)).unwrap();
    let images = synthaug::pipeline::load_images(&fin, &out).unwrap();
    assert_eq!(images.len(), fin.len());
}

#[test]
fn resuming_reproduces_the_same_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 30, 1);
    let out = tmp.path().join("run");
    let cfg = desk_pipeline(&origin, &out, 9, 0.3);
    run_pipeline(&cfg, RunOptions::default()).unwrap();
    let before = snapshot(&out);

    // Later stages are recomputed from the persisted checkpoint and
    // candidates.
    for f in [layout::AUG, layout::AUDIT, layout::FINAL, layout::REPORT_JSON, layout::REPORT_TXT] {
        fs::remove_file(out.join(f)).unwrap();
    }
    run_pipeline(&cfg, RunOptions { resume: true }).unwrap();
    assert_eq!(snapshot(&out), before);

    // Without the candidates, generation reruns from the saved model.
    fs::remove_file(out.join(layout::CANDIDATES)).unwrap();
    fs::remove_dir_all(out.join(layout::CANDIDATE_DIR)).unwrap();
    run_pipeline(&cfg, RunOptions { resume: true }).unwrap();
    assert_eq!(snapshot(&out), before);
}

#[test]
fn resume_really_reuses_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 20, 1);
    let out = tmp.path().join("run");
    run_pipeline(&desk_pipeline(&origin, &out, 0, 0.0), RunOptions::default()).unwrap();
    let saved = fs::read(out.join(layout::CHECKPOINT)).unwrap();
    // One epoch would give a different model if training reran.
    let mut cfg = desk_pipeline(&origin, &out, 0, 0.0);
    cfg.train.epochs = 1;
    run_pipeline(&cfg, RunOptions { resume: true }).unwrap();
    assert_eq!(fs::read(out.join(layout::CHECKPOINT)).unwrap(), saved);
    assert!(load_checkpoint(&out.join(layout::CHECKPOINT)).unwrap().is_trained());
}

#[test]
fn failed_training_leaves_an_incomplete_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 5, 1);
    fs::remove_file(tmp.path().join("origin/images/shape-00002.png")).unwrap();
    let out = tmp.path().join("run");
    let err = run_pipeline(&desk_pipeline(&origin, &out, 0, 0.0), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "train", .. }), "{err:?}");
    let marker = fs::read_to_string(out.join(layout::INCOMPLETE)).unwrap();
    assert!(marker.starts_with("stage: train"), "{marker}");
    assert!(marker.contains("shape-00002"), "{marker}");
    assert!(!out.join(layout::FINAL).exists());
}

#[test]
fn failed_generation_is_reported_by_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let origin = write_origin(&tmp.path().join("origin"), 5, 1);
    let out = tmp.path().join("run");
    let mut cfg = desk_pipeline(&origin, &out, 0, 0.0);
    cfg.generation.backend = "diffusion-http".into();
    cfg.generation.params = serde_json::json!({ "url": "http://127.0.0.1:9/generate", "retries": 0, "timeout_secs": 2 });
    let err = run_pipeline(&cfg, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "generate", .. }), "{err:?}");
    let marker = fs::read_to_string(out.join(layout::INCOMPLETE)).unwrap();
    assert!(marker.starts_with("stage: generate"), "{marker}");
    // The model from the finished stage stays usable for a later resume.
    assert!(out.join(layout::CHECKPOINT).exists());
}

#[test]
fn config_errors_are_caught_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = desk_pipeline(&tmp.path().join("missing.jsonl"), &out, 0, 0.0);
    let err = run_pipeline(&cfg, RunOptions::default()).unwrap_err();
    assert!(err.is_config(), "{err:?}");
    assert!(!out.exists());

    let origin = write_origin(&tmp.path().join("origin"), 3, 0);
    let mut cfg = desk_pipeline(&origin, &out, 0, 0.0);
    cfg.generation.backend = "no-such-backend".into();
    assert!(run_pipeline(&cfg, RunOptions::default()).unwrap_err().is_config());
}

#[test]
fn clean_corpus_is_mostly_accepted() {
    for seed in 0..3 {
        let tmp = tempfile::tempdir().unwrap();
        let origin = write_origin(&tmp.path().join("origin"), 200, seed);
        let out = tmp.path().join("run");
        let report = run_pipeline(&desk_pipeline(&origin, &out, seed, 0.0), RunOptions::default())
            .unwrap()
            .report;
        let rate = report.acceptance_rate.unwrap();
        assert!(rate >= 0.9, "seed {seed}: acceptance rate {rate}");
    }
}

#[test]
fn toml_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = desk_pipeline(&tmp.path().join("origin.jsonl"), &tmp.path().join("out"), 17, 0.25);
    cfg.passes = 3;
    cfg.selection.epsilon = 0.8;
    cfg.selection.reject_empty = false;
    cfg.detection.canny.high_threshold = 120.0;
    let path = tmp.path().join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(PipelineConfig::from_toml_file(&path).unwrap(), cfg);

    // Unset backend params are left out rather than written as null.
    let bare = PipelineConfig::new(tmp.path().join("origin.jsonl"), tmp.path().join("out"));
    fs::write(&path, bare.to_toml().unwrap()).unwrap();
    assert_eq!(PipelineConfig::from_toml_file(&path).unwrap(), bare);
}

#[test]
fn toml_paths_are_relative_to_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("conf").join("run.toml");
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(
        &path,
        "origin = \"../data/origin.jsonl\"\noutput_dir = \"out\"\nseed = 4\n\n[selection]\nepsilon = 0.7\n",
    )
    .unwrap();
    let cfg = PipelineConfig::from_toml_file(&path).unwrap();
    assert_eq!(cfg.origin, tmp.path().join("conf/../data/origin.jsonl"));
    assert_eq!(cfg.output_dir, tmp.path().join("conf/out"));
    assert_eq!(cfg.selection.epsilon, 0.7);
    assert!(cfg.selection.reject_empty);
    assert_eq!(cfg.passes, 1);
}

#[test]
fn unknown_toml_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.toml");
    fs::write(&path, "origin = \"o.jsonl\"\noutput_dir = \"out\"\nepsilom = 0.5\n").unwrap();
    let err = PipelineConfig::from_toml_file(&path).unwrap_err();
    assert!(err.is_config());
}
