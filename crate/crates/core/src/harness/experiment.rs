use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::corpus::{make_corpus, manifest_of, ShapesCorpusConfig};
use super::metrics::{
    epsilon_sweep, selection_metrics, DownstreamHook, GroundTruth, SelectionMetrics, SweepRow, TruthEntry,
};
use crate::classifier::{per_class_accuracy, subset_accuracy, train_on_images, PatchClassifier, TrainConfig};
use crate::data::{CategorySet, LabeledImage};
use crate::detect::Detectors;
use crate::error::{Error, Result};
use crate::generate::{generate_all, GenerationConfig, ProceduralGenerator};
use crate::selection::{apply, select_batch, SelectionConfig, SelectionDecision};

/// Threshold used for the downstream multi-label accuracy.
pub const DOWNSTREAM_THRESHOLD: f64 = 0.5;

/// One end-to-end desk experiment: an origin corpus, a held-out corpus, a
/// procedural generator with injected noise, and the selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Origin corpus; its `seed` is overridden by `seed`.
    pub corpus: ShapesCorpusConfig,
    pub held_out: usize,
    pub noise_rate: f64,
    pub passes: u32,
    pub steps: u32,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: ShapesCorpusConfig {
                images: 100,
                ..Default::default()
            },
            held_out: 200,
            noise_rate: 0.3,
            passes: 1,
            steps: 20,
            train: TrainConfig::desk(),
            selection: SelectionConfig::default(),
            seed: 0,
        }
    }
}

/// Everything downstream evaluation needs, computed once per seed.
pub struct Prepared {
    pub categories: CategorySet,
    pub origin: Vec<LabeledImage>,
    pub held_out: Vec<LabeledImage>,
    /// Trained on the origin only; doubles as the baseline model.
    pub selector: PatchClassifier,
    pub candidates: Vec<LabeledImage>,
    pub audit: Vec<SelectionDecision>,
    pub truth: GroundTruth,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.selection.validate()?;
    let origin_cfg = ShapesCorpusConfig {
        seed: cfg.seed,
        ..cfg.corpus.clone()
    };
    let held_cfg = ShapesCorpusConfig {
        seed: cfg.seed,
        images: cfg.held_out,
        id_prefix: format!("{}-heldout", cfg.corpus.id_prefix),
        ..cfg.corpus.clone()
    };
    let (categories, origin) = make_corpus(&origin_cfg)?;
    let (_, held_out) = make_corpus(&held_cfg)?;

    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let selector = train_on_images(&origin, &categories, &train)?.model;

    let backend = ProceduralGenerator::new(cfg.noise_rate)?;
    let gen = GenerationConfig {
        steps: cfg.steps,
        seed_base: cfg.seed,
        passes: cfg.passes,
        parallelism: rayon::current_num_threads(),
    };
    let generated = generate_all(&origin, &backend, &Detectors::default(), &gen)?;
    let mut truth = GroundTruth::new();
    let mut candidates = Vec::with_capacity(generated.len());
    for c in generated {
        let content = c.content.ok_or_else(|| Error::Harness("procedural backend reported no content".into()))?;
        truth.insert(
            c.image.id.clone(),
            TruthEntry {
                source_labels: c.image.labels.clone(),
                content,
            },
        );
        candidates.push(c.image);
    }
    let origin_manifest = manifest_of(&origin, &categories, "images", "origin")?;
    let audit = select_batch(&candidates, &origin_manifest, &selector, &cfg.selection)?.audit;
    Ok(Prepared {
        categories,
        origin,
        held_out,
        selector,
        candidates,
        audit,
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Baseline,
    AugmentNoSelection,
    AugmentWithSelection,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::Baseline,
        AblationMode::AugmentNoSelection,
        AblationMode::AugmentWithSelection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Baseline => "baseline",
            AblationMode::AugmentNoSelection => "augment_no_selection",
            AblationMode::AugmentWithSelection => "augment_with_selection",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub train_images: usize,
    pub subset_accuracy: f64,
    pub per_class_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub noise_rate: f64,
    pub rows: Vec<AblationRow>,
    pub selection: SelectionMetrics,
}

impl AblationReport {
    pub fn accuracy(&self, mode: AblationMode) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode).map(|r| r.subset_accuracy)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}  noise_rate {}", self.seed, self.noise_rate);
        let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>10}", "mode", "images", "subset", "per-class");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>10.4} {:>10.4}",
                r.mode.as_str(),
                r.train_images,
                r.subset_accuracy,
                r.per_class_accuracy
            );
        }
        out
    }
}

/// Held-out (subset, per-class) accuracy of `model`.
pub fn evaluate(model: &PatchClassifier, held_out: &[LabeledImage]) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    let scores = held_out
        .par_iter()
        .map(|i| model.predict(&i.pixels))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<_> = held_out.iter().map(|i| i.labels.clone()).collect();
    Ok((
        subset_accuracy(&scores, &labels, DOWNSTREAM_THRESHOLD),
        per_class_accuracy(&scores, &labels, DOWNSTREAM_THRESHOLD),
    ))
}

fn downstream(cfg: &ExperimentConfig, p: &Prepared, images: &[LabeledImage]) -> Result<(f64, f64)> {
    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let model = train_on_images(images, &p.categories, &train)?.model;
    evaluate(&model, &p.held_out)
}

/// Training set for `mode`: origin, origin + every candidate under its
/// source labels, or origin + accepted candidates under predicted labels.
pub fn training_set(p: &Prepared, mode: AblationMode) -> Vec<LabeledImage> {
    let mut set = p.origin.clone();
    match mode {
        AblationMode::Baseline => {}
        AblationMode::AugmentNoSelection => set.extend(p.candidates.iter().cloned()),
        AblationMode::AugmentWithSelection => set.extend(
            p.audit
                .iter()
                .zip(&p.candidates)
                .filter_map(|(d, c)| apply(d, c)),
        ),
    }
    set
}

/// Trains a fresh downstream classifier per mode and scores it on the
/// held-out corpus. The baseline model is the selector itself: both are the
/// same configuration trained on the same images with the same seed.
pub fn ablate(cfg: &ExperimentConfig, modes: &[AblationMode]) -> Result<AblationReport> {
    if modes.is_empty() {
        return Err(Error::Config("no ablation modes requested".into()));
    }
    let p = prepare(cfg)?;
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let images = training_set(&p, mode);
        let (subset, per_class) = match mode {
            AblationMode::Baseline => evaluate(&p.selector, &p.held_out)?,
            _ => downstream(cfg, &p, &images)?,
        };
        log::info!("ablation seed {} {}: subset accuracy {subset:.4}", cfg.seed, mode.as_str());
        rows.push(AblationRow {
            mode,
            train_images: images.len(),
            subset_accuracy: subset,
            per_class_accuracy: per_class,
        });
    }
    Ok(AblationReport {
        seed: cfg.seed,
        noise_rate: cfg.noise_rate,
        rows,
        selection: selection_metrics(&p.audit, &p.truth)?,
    })
}

/// Sweeps ε over cached scores of one prepared experiment; with
/// `train_downstream`, also trains on origin ∪ accepted per ε.
pub fn run_sweep(cfg: &ExperimentConfig, grid: &[f64], train_downstream: bool) -> Result<Vec<SweepRow>> {
    let p = prepare(cfg)?;
    let mut train = |_: f64, decisions: &[SelectionDecision]| -> Result<f64> {
        let mut images = p.origin.clone();
        images.extend(decisions.iter().zip(&p.candidates).filter_map(|(d, c)| apply(d, c)));
        Ok(downstream(cfg, &p, &images)?.0)
    };
    let hook: Option<DownstreamHook<'_>> =
        if train_downstream { Some(&mut train) } else { None };
    epsilon_sweep(&p.audit, &p.truth, grid, cfg.selection.reject_empty, hook)
}
