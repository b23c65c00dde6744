//! Fixtures shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use synthaug::classifier::{ImageScores, TrainConfig};
use synthaug::data::{write_manifest, CategorySet, DatasetManifest, ImageRecord, LabelSet, LabeledImage, Provenance};
use synthaug::harness::{render_corpus, ShapesCorpusConfig};
use synthaug::pipeline::PipelineConfig;
use synthaug::selection::Scorer;
use synthaug::Result;

/// Returns canned scores looked up by candidate id.
pub struct FakeScorer {
    pub categories: CategorySet,
    pub scores: HashMap<String, Vec<f64>>,
}

impl Scorer for FakeScorer {
    fn categories(&self) -> &CategorySet {
        &self.categories
    }

    fn score(&self, candidate: &LabeledImage) -> Result<ImageScores> {
        Ok(ImageScores(self.scores[&candidate.id].clone()))
    }
}

pub fn categories(n: usize) -> CategorySet {
    CategorySet::new((0..n).map(|i| format!("class{i}"))).unwrap()
}

pub fn random_labels(cats: &CategorySet, r: &mut ChaCha8Rng) -> LabelSet {
    LabelSet::from_indices(cats, (0..cats.len()).filter(|_| r.gen_bool(0.5)))
}

/// Scores that often sit exactly on a threshold, to exercise strictness.
pub fn random_scores(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    const TIES: [f64; 5] = [0.0, 0.5, 0.9, 0.95, 1.0];
    (0..n)
        .map(|_| {
            if r.gen_bool(0.2) {
                TIES[r.gen_range(0..TIES.len())]
            } else {
                r.gen()
            }
        })
        .collect()
}

pub fn synthetic(id: &str, source: &str, cats: &CategorySet, labels: LabelSet) -> LabeledImage {
    debug_assert_eq!(labels.categories(), cats);
    LabeledImage {
        id: id.into(),
        pixels: RgbImage::from_pixel(4, 4, Rgb([1, 2, 3])),
        labels,
        provenance: Provenance::Synthetic,
        source_id: Some(source.into()),
        seed: Some(0),
    }
}

/// A batch of `n` synthetic candidates over `sources` origin images, with a
/// scorer that knows each candidate's scores.
pub struct Batch {
    pub categories: CategorySet,
    pub origin: DatasetManifest,
    pub candidates: Vec<LabeledImage>,
    pub scorer: FakeScorer,
}

pub fn random_batch(r: &mut ChaCha8Rng, classes: usize, sources: usize, n: usize) -> Batch {
    let cats = categories(classes);
    let mut origin = DatasetManifest::new(cats.clone(), "origin");
    for s in 0..sources {
        let mut labels = random_labels(&cats, r);
        if labels.is_empty() {
            labels.insert_index(r.gen_range(0..classes));
        }
        origin.records.push(ImageRecord {
            id: format!("src{s}"),
            path: format!("images/src{s}.png").into(),
            labels,
            provenance: Provenance::Original,
            source_id: None,
            seed: None,
        });
    }
    let mut scores = HashMap::new();
    let candidates = (0..n)
        .map(|i| {
            let src = &origin.records[r.gen_range(0..sources)];
            let id = format!("{}~aug{i}", src.id);
            scores.insert(id.clone(), random_scores(classes, r));
            synthetic(&id, &src.id, &cats, src.labels.clone())
        })
        .collect();
    Batch {
        categories: cats.clone(),
        origin,
        candidates,
        scorer: FakeScorer {
            categories: cats,
            scores,
        },
    }
}

/// Straight-line restatement of the selection rule over names, sharing no
/// code with the library.
pub fn oracle(scores: &[f64], source: &[String], names: &[String], epsilon: f64, reject_empty: bool) -> (bool, Vec<String>, &'static str) {
    let mut predicted = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        if *s > epsilon {
            predicted.push(names[i].clone());
        }
    }
    let mut subset = true;
    for p in &predicted {
        if !source.contains(p) {
            subset = false;
        }
    }
    if !subset {
        (false, predicted, "not_subset")
    } else if predicted.is_empty() && reject_empty {
        (false, predicted, "empty_prediction")
    } else {
        (true, predicted, "ok")
    }
}

/// Renders a shapes corpus into `dir/images` and writes `dir/origin.jsonl`.
pub fn write_origin(dir: &Path, images: usize, seed: u64) -> PathBuf {
    let cfg = ShapesCorpusConfig {
        images,
        seed,
        ..Default::default()
    };
    let m = render_corpus(&cfg, dir, "origin").unwrap();
    let path = dir.join("origin.jsonl");
    write_manifest(&m, &path).unwrap();
    path
}

/// Desk-sized pipeline config using the procedural generator.
pub fn desk_pipeline(origin: &Path, out: &Path, seed: u64, noise_rate: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(origin, out);
    cfg.seed = seed;
    cfg.train = TrainConfig::desk();
    cfg.generation.params = serde_json::json!({ "noise_rate": noise_rate });
    cfg
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
