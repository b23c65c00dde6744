//! End-to-end orchestration: train → generate → select → merge.
//!
//! Every stage persists its output under the run's output directory, so a
//! later run (or a single CLI subcommand) can pick up from there. While a
//! run is in progress an `INCOMPLETE` marker names the current stage; on
//! failure it is left behind with the error, on success it is removed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{load_checkpoint, save_checkpoint, train_on_images, PatchClassifier, TrainConfig};
use crate::data::{
    load_png, merge_datasets, read_manifest, resolve, save_png, write_manifest, DatasetManifest,
    ImageRecord, LabeledImage,
};
use crate::detect::{pose_registry, CannyParams, Detectors};
use crate::error::{Error, Result};
use crate::generate::{generate_all, generator_registry, GenerationConfig, GeneratorBackend};
use crate::harness::{read_truth, selection_metrics, write_truth, GroundTruth, SelectionMetrics, TruthEntry};
use crate::selection::{read_audit, select_manifest, write_audit, Reason, SelectionConfig, SelectionDecision};

/// File names inside a run's output directory.
pub mod layout {
    pub const CHECKPOINT: &str = "model.json";
    pub const CANDIDATE_DIR: &str = "candidates";
    pub const CANDIDATES: &str = "candidates.jsonl";
    pub const TRUTH: &str = "candidates.truth.jsonl";
    pub const WARNINGS: &str = "candidates.warnings.jsonl";
    pub const AUG: &str = "aug.jsonl";
    pub const AUDIT: &str = "audit.jsonl";
    pub const FINAL: &str = "final.jsonl";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const INCOMPLETE: &str = "INCOMPLETE";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub backend: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub params: Value,
    pub steps: u32,
    pub parallelism: usize,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            backend: "procedural".into(),
            params: Value::Null,
            steps: 20,
            parallelism: 4,
        }
    }
}

impl GeneratorSettings {
    pub fn build(&self) -> Result<Box<dyn GeneratorBackend>> {
        generator_registry().build(&self.backend, &(), &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSettings {
    pub canny: CannyParams,
    pub pose_backend: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub pose_params: Value,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            pose_backend: "unavailable".into(),
            pose_params: Value::Null,
        }
    }
}

impl DetectionSettings {
    pub fn build(&self) -> Result<Detectors> {
        self.canny.validate()?;
        Ok(Detectors {
            canny: self.canny,
            pose: pose_registry().build(&self.pose_backend, &(), &self.pose_params)?,
        })
    }
}

fn one() -> u32 {
    1
}

/// Declarative description of one run. `seed` seeds both training and
/// per-image generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub origin: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub passes: u32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub generation: GeneratorSettings,
    #[serde(default)]
    pub detection: DetectionSettings,
}

impl PipelineConfig {
    pub fn new(origin: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            origin: origin.into(),
            output_dir: output_dir.into(),
            seed: 0,
            passes: 1,
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            generation: GeneratorSettings::default(),
            detection: DetectionSettings::default(),
        }
    }

    /// Parses a TOML config; relative paths are taken relative to the
    /// config file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.origin = resolve(base, &cfg.origin);
        cfg.output_dir = resolve(base, &cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            steps: self.generation.steps,
            seed_base: self.seed,
            passes: self.passes,
            parallelism: self.generation.parallelism,
        }
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.selection.validate()?;
        if self.passes == 0 {
            return Err(Error::Config("passes must be at least 1".into()));
        }
        if self.generation.steps == 0 {
            return Err(Error::Config("generation steps must be at least 1".into()));
        }
        if !self.origin.is_file() {
            return Err(Error::Config(format!(
                "origin manifest {} does not exist",
                self.origin.display()
            )));
        }
        self.generation.build()?;
        self.detection.build()?;
        Ok(())
    }
}

fn dir_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

/// Loads the pixels of every record, resolving paths against `base_dir`.
pub fn load_images(manifest: &DatasetManifest, base_dir: &Path) -> Result<Vec<LabeledImage>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            Ok(LabeledImage {
                id: r.id.clone(),
                pixels: load_png(&resolve(base_dir, &r.path))?,
                labels: r.labels.clone(),
                provenance: r.provenance,
                source_id: r.source_id.clone(),
                seed: r.seed,
            })
        })
        .collect()
}

/// Trains on `origin` and writes the checkpoint.
pub fn stage_train(origin_path: &Path, cfg: &TrainConfig, checkpoint: &Path) -> Result<PatchClassifier> {
    let origin = read_manifest(origin_path)?;
    if origin.is_empty() {
        return Err(Error::Config("origin manifest is empty".into()));
    }
    let images = load_images(&origin, dir_of(origin_path))?;
    let out = train_on_images(&images, &origin.categories, cfg)?;
    log::info!(
        "trained on {} images, final loss {:.5}",
        images.len(),
        out.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    save_checkpoint(&out.model, checkpoint)?;
    Ok(out.model)
}

pub struct GenerationOutput {
    pub manifest: DatasetManifest,
    /// Candidate id → detection-map warning.
    pub warnings: BTreeMap<String, String>,
    /// Present when the backend reports what it rendered.
    pub truth: Option<GroundTruth>,
}

#[derive(Serialize, Deserialize)]
struct WarningLine {
    candidate_id: String,
    warning: String,
}

fn write_warnings(warnings: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, w) in warnings {
        serde_json::to_writer(
            &mut out,
            &WarningLine {
                candidate_id: id.clone(),
                warning: w.clone(),
            },
        )?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_warnings(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let w: WarningLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(w.candidate_id, w.warning);
    }
    Ok(out)
}

/// Generates candidates for every origin record and persists them under
/// `out_dir`: PNGs in `candidates/`, the candidates manifest, map warnings,
/// and (if the backend reports content) a ground-truth sidecar.
pub fn stage_generate(
    origin_path: &Path,
    backend: &dyn GeneratorBackend,
    detectors: &Detectors,
    cfg: &GenerationConfig,
    out_dir: &Path,
) -> Result<GenerationOutput> {
    let origin = read_manifest(origin_path)?;
    let sources = load_images(&origin, dir_of(origin_path))?;
    let candidates = generate_all(&sources, backend, detectors, cfg)?;

    let cand_dir = out_dir.join(layout::CANDIDATE_DIR);
    fs::create_dir_all(&cand_dir).map_err(|e| Error::io(&cand_dir, e))?;
    candidates.par_iter().try_for_each(|c| {
        save_png(&c.image.pixels, &cand_dir.join(format!("{}.png", c.image.id)))
    })?;

    let mut manifest = DatasetManifest::new(origin.categories.clone(), "candidates");
    let mut warnings = BTreeMap::new();
    let mut truth = GroundTruth::new();
    let mut complete_truth = true;
    for c in &candidates {
        let img = &c.image;
        manifest.records.push(ImageRecord {
            id: img.id.clone(),
            path: Path::new(layout::CANDIDATE_DIR).join(format!("{}.png", img.id)),
            labels: img.labels.clone(),
            provenance: img.provenance,
            source_id: img.source_id.clone(),
            seed: img.seed,
        });
        if let Some(w) = &c.map_warning {
            warnings.insert(img.id.clone(), w.clone());
        }
        match &c.content {
            Some(content) => {
                truth.insert(
                    img.id.clone(),
                    TruthEntry {
                        source_labels: img.labels.clone(),
                        content: content.clone(),
                    },
                );
            }
            None => complete_truth = false,
        }
    }
    write_manifest(&manifest, &out_dir.join(layout::CANDIDATES))?;
    write_warnings(&warnings, &out_dir.join(layout::WARNINGS))?;
    let truth = (complete_truth && !candidates.is_empty()).then_some(truth);
    let truth_path = out_dir.join(layout::TRUTH);
    match &truth {
        Some(t) => write_truth(t, &truth_path)?,
        None => {
            if truth_path.exists() {
                fs::remove_file(&truth_path).map_err(|e| Error::io(&truth_path, e))?;
            }
        }
    }
    log::info!("generated {} candidates ({} map warnings)", candidates.len(), warnings.len());
    Ok(GenerationOutput {
        manifest,
        warnings,
        truth,
    })
}

/// Reads back what [`stage_generate`] persisted in `out_dir`.
pub fn load_generation(out_dir: &Path) -> Result<GenerationOutput> {
    let manifest = read_manifest(&out_dir.join(layout::CANDIDATES))?;
    let warnings_path = out_dir.join(layout::WARNINGS);
    let warnings = if warnings_path.exists() {
        read_warnings(&warnings_path)?
    } else {
        BTreeMap::new()
    };
    let truth_path = out_dir.join(layout::TRUTH);
    let truth = if truth_path.exists() {
        Some(read_truth(&truth_path, &manifest.categories)?)
    } else {
        None
    };
    Ok(GenerationOutput {
        manifest,
        warnings,
        truth,
    })
}

/// Runs selection over a candidates manifest and writes the accepted
/// manifest (paths rebased to `aug_path`'s directory) and the audit log.
pub fn stage_select(
    candidates_path: &Path,
    origin_path: &Path,
    model: &PatchClassifier,
    cfg: &SelectionConfig,
    aug_path: &Path,
    audit_path: &Path,
) -> Result<(DatasetManifest, Vec<SelectionDecision>)> {
    let candidates = read_manifest(candidates_path)?;
    let origin = read_manifest(origin_path)?;
    let (mut aug, audit) = select_manifest(&candidates, dir_of(candidates_path), &origin, model, cfg)?;
    aug.rebase(dir_of(candidates_path), dir_of(aug_path));
    write_manifest(&aug, aug_path)?;
    write_audit(&audit, audit_path)?;
    log::info!("accepted {} of {} candidates", aug.len(), audit.len());
    Ok((aug, audit))
}

/// Writes origin ∪ aug to `out_path`, rebasing both sides' paths.
pub fn stage_merge(origin_path: &Path, aug_path: &Path, out_path: &Path) -> Result<DatasetManifest> {
    let mut origin = read_manifest(origin_path)?;
    let mut aug = read_manifest(aug_path)?;
    origin.rebase(dir_of(origin_path), dir_of(out_path));
    aug.rebase(dir_of(aug_path), dir_of(out_path));
    let mut merged = merge_datasets(&origin, &aug)?;
    merged.split_tag = "final".into();
    write_manifest(&merged, out_path)?;
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAcceptance {
    /// Candidates whose source was labeled with the class.
    pub candidates: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub epsilon: f64,
    pub reject_empty: bool,
    pub generator: String,
    pub origin_images: usize,
    pub candidates: usize,
    pub accepted: usize,
    pub rejected_not_subset: usize,
    pub rejected_empty: usize,
    pub final_images: usize,
    pub acceptance_rate: Option<f64>,
    pub map_warnings: usize,
    pub per_class: BTreeMap<String, ClassAcceptance>,
    /// Only when the generator reports rendered content.
    pub selection_metrics: Option<SelectionMetrics>,
}

impl RunReport {
    pub fn build(
        cfg: &PipelineConfig,
        origin: &DatasetManifest,
        generation: &GenerationOutput,
        audit: &[SelectionDecision],
        final_manifest: &DatasetManifest,
    ) -> Result<Self> {
        let cats = &origin.categories;
        let mut per_class: BTreeMap<String, ClassAcceptance> = cats
            .names()
            .iter()
            .map(|n| {
                (
                    n.clone(),
                    ClassAcceptance {
                        candidates: 0,
                        accepted: 0,
                    },
                )
            })
            .collect();
        for (d, r) in audit.iter().zip(&generation.manifest.records) {
            for name in r.labels.names() {
                let entry = per_class.get_mut(&name).expect("same category set");
                entry.candidates += 1;
                entry.accepted += usize::from(d.accepted());
            }
        }
        let accepted = audit.iter().filter(|d| d.accepted()).count();
        let count = |reason| audit.iter().filter(|d| d.reason == reason).count();
        Ok(RunReport {
            seed: cfg.seed,
            epsilon: cfg.selection.epsilon,
            reject_empty: cfg.selection.reject_empty,
            generator: cfg.generation.backend.clone(),
            origin_images: origin.len(),
            candidates: audit.len(),
            accepted,
            rejected_not_subset: count(Reason::NotSubset),
            rejected_empty: count(Reason::EmptyPrediction),
            final_images: final_manifest.len(),
            acceptance_rate: (!audit.is_empty()).then(|| accepted as f64 / audit.len() as f64),
            map_warnings: generation.warnings.len(),
            per_class,
            selection_metrics: match &generation.truth {
                Some(t) => Some(selection_metrics(audit, t)?),
                None => None,
            },
        })
    }

    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "generator        {}", self.generator);
        let _ = writeln!(out, "seed             {}", self.seed);
        let _ = writeln!(out, "epsilon          {}{}", self.epsilon, if self.reject_empty { "" } else { " (empty predictions accepted)" });
        let _ = writeln!(out, "origin images    {}", self.origin_images);
        let _ = writeln!(out, "candidates       {}", self.candidates);
        let _ = writeln!(out, "accepted         {}", self.accepted);
        let _ = writeln!(out, "  not subset     {}", self.rejected_not_subset);
        let _ = writeln!(out, "  empty          {}", self.rejected_empty);
        let _ = writeln!(out, "final images     {}", self.final_images);
        let _ = writeln!(out, "acceptance rate  {}", opt(self.acceptance_rate));
        let _ = writeln!(out, "map warnings     {}", self.map_warnings);
        if let Some(m) = &self.selection_metrics {
            let _ = writeln!(out, "precision        {}", opt(m.precision));
            let _ = writeln!(out, "recall           {}", opt(m.recall));
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>8}", "class", "candidates", "accepted", "rate");
        for (name, c) in &self.per_class {
            let rate = (c.candidates > 0).then(|| c.accepted as f64 / c.candidates as f64);
            let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>8}", name, c.candidates, c.accepted, opt(rate));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Reuse the checkpoint and candidates already in the output directory
    /// instead of recomputing them.
    pub resume: bool,
}

#[derive(Debug)]
pub struct RunOutput {
    pub final_manifest: DatasetManifest,
    pub report: RunReport,
}

fn mark(out_dir: &Path, text: &str) -> Result<()> {
    let p = out_dir.join(layout::INCOMPLETE);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn stage<T>(out_dir: &Path, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    mark(out_dir, &format!("stage: {name}\n"))?;
    f().map_err(|source| {
        let mut message = source.to_string();
        let mut next = std::error::Error::source(&source);
        while let Some(e) = next {
            let _ = write!(message, ": {e}");
            next = e.source();
        }
        // Best effort: the stage error matters more than a failed marker.
        let _ = mark(out_dir, &format!("stage: {name}\nerror: {message}\n"));
        Error::Stage {
            stage: name,
            source: Box::new(source),
        }
    })
}

pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let checkpoint = out.join(layout::CHECKPOINT);
    let candidates_path = out.join(layout::CANDIDATES);

    let model = stage(out, "train", || {
        if opts.resume && checkpoint.exists() {
            log::info!("reusing {}", checkpoint.display());
            load_checkpoint(&checkpoint)
        } else {
            stage_train(&cfg.origin, &cfg.train_config(), &checkpoint)
        }
    })?;
    let generation = stage(out, "generate", || {
        if opts.resume && candidates_path.exists() {
            log::info!("reusing {}", candidates_path.display());
            load_generation(out)
        } else {
            let backend = cfg.generation.build()?;
            let detectors = cfg.detection.build()?;
            stage_generate(&cfg.origin, backend.as_ref(), &detectors, &cfg.generation_config(), out)
        }
    })?;
    let (aug, audit) = stage(out, "select", || {
        stage_select(
            &candidates_path,
            &cfg.origin,
            &model,
            &cfg.selection,
            &out.join(layout::AUG),
            &out.join(layout::AUDIT),
        )
    })?;
    let final_manifest = stage(out, "merge", || {
        stage_merge(&cfg.origin, &out.join(layout::AUG), &out.join(layout::FINAL))
    })?;
    let report = stage(out, "report", || {
        let origin = read_manifest(&cfg.origin)?;
        let report = RunReport::build(cfg, &origin, &generation, &audit, &final_manifest)?;
        if report.accepted != aug.len() || report.final_images != origin.len() + aug.len() {
            return Err(Error::Harness(format!(
                "counts do not reconcile: {} accepted, {} in aug, {} origin, {} final",
                report.accepted,
                aug.len(),
                origin.len(),
                report.final_images
            )));
        }
        let json_path = out.join(layout::REPORT_JSON);
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
        let txt_path = out.join(layout::REPORT_TXT);
        fs::write(&txt_path, report.table()).map_err(|e| Error::io(&txt_path, e))?;
        Ok(report)
    })?;
    let marker = out.join(layout::INCOMPLETE);
    fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(RunOutput {
        final_manifest,
        report,
    })
}

/// Reads a persisted audit log using the categories of a manifest.
pub fn read_run_audit(out_dir: &Path) -> Result<Vec<SelectionDecision>> {
    let candidates = read_manifest(&out_dir.join(layout::CANDIDATES))?;
    read_audit(&out_dir.join(layout::AUDIT), &candidates.categories)
}
