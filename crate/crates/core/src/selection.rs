//! Confidence-threshold selection of synthetic candidates.
//!
//! A candidate's predicted label set is every class whose image-level score
//! is strictly above `epsilon`. The candidate is accepted when that set is
//! contained in its source image's labels (and, unless `reject_empty` is
//! off, is non-empty); accepted candidates carry the predicted set as their
//! labels.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{ImageScores, PatchClassifier};
use crate::data::{
    load_png, resolve, CategorySet, DatasetManifest, ImageRecord, LabelSet, LabeledImage,
    Provenance,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub epsilon: f64,
    pub reject_empty: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.9,
            reject_empty: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Ok,
    NotSubset,
    EmptyPrediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDecision {
    pub candidate_id: String,
    pub predicted: LabelSet,
    pub scores: ImageScores,
    pub verdict: Verdict,
    pub reason: Reason,
}

impl SelectionDecision {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accepted
    }
}

/// Anything that yields image-level scores for a candidate.
pub trait Scorer: Sync {
    fn categories(&self) -> &CategorySet;
    fn score(&self, candidate: &LabeledImage) -> Result<ImageScores>;
}

impl Scorer for PatchClassifier {
    fn categories(&self) -> &CategorySet {
        PatchClassifier::categories(self)
    }

    fn score(&self, candidate: &LabeledImage) -> Result<ImageScores> {
        self.predict(&candidate.pixels)
    }
}

/// Classes with score strictly greater than `epsilon`.
pub fn predict_labels(scores: &ImageScores, categories: &CategorySet, cfg: &SelectionConfig) -> LabelSet {
    LabelSet::from_indices(
        categories,
        scores
            .values()
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > cfg.epsilon)
            .map(|(i, _)| i),
    )
}

/// The selection rule applied to already-computed scores.
pub fn decide(
    candidate_id: &str,
    scores: ImageScores,
    source_labels: &LabelSet,
    cfg: &SelectionConfig,
) -> Result<SelectionDecision> {
    let cats = source_labels.categories();
    if scores.len() != cats.len() {
        return Err(Error::CategoryMismatch(format!(
            "{} scores for {} categories",
            scores.len(),
            cats.len()
        )));
    }
    let predicted = predict_labels(&scores, cats, cfg);
    let (verdict, reason) = if !predicted.subset_of(source_labels)? {
        (Verdict::Rejected, Reason::NotSubset)
    } else if predicted.is_empty() && cfg.reject_empty {
        (Verdict::Rejected, Reason::EmptyPrediction)
    } else {
        (Verdict::Accepted, Reason::Ok)
    };
    Ok(SelectionDecision {
        candidate_id: candidate_id.to_owned(),
        predicted,
        scores,
        verdict,
        reason,
    })
}

/// Scores one candidate and applies the rule.
pub fn select(
    candidate: &LabeledImage,
    source_labels: &LabelSet,
    scorer: &dyn Scorer,
    cfg: &SelectionConfig,
) -> Result<SelectionDecision> {
    if candidate.provenance != Provenance::Synthetic {
        return Err(Error::Config(format!(
            "`{}` is not a synthetic candidate",
            candidate.id
        )));
    }
    if scorer.categories() != source_labels.categories() {
        return Err(Error::CategoryMismatch(format!(
            "model categories {:?} differ from source labels {:?}",
            scorer.categories(),
            source_labels.categories()
        )));
    }
    let scores = scorer.score(candidate)?;
    decide(&candidate.id, scores, source_labels, cfg)
}

/// Returns the candidate relabeled with its predicted set if accepted.
pub fn apply(decision: &SelectionDecision, candidate: &LabeledImage) -> Option<LabeledImage> {
    decision.accepted().then(|| LabeledImage {
        labels: decision.predicted.clone(),
        ..candidate.clone()
    })
}

#[derive(Debug)]
pub struct SelectionOutcome {
    pub accepted: Vec<LabeledImage>,
    /// One entry per candidate, in input order.
    pub audit: Vec<SelectionDecision>,
}

fn source_index(origin: &DatasetManifest) -> HashMap<&str, &LabelSet> {
    origin
        .records
        .iter()
        .map(|r| (r.id.as_str(), &r.labels))
        .collect()
}

fn source_labels<'a>(index: &HashMap<&str, &'a LabelSet>, candidate_id: &str, source_id: Option<&str>) -> Result<&'a LabelSet> {
    let sid = source_id
        .ok_or_else(|| Error::Manifest(format!("candidate `{candidate_id}` has no source_id")))?;
    index.get(sid).copied().ok_or_else(|| {
        Error::Manifest(format!(
            "candidate `{candidate_id}` refers to unknown source `{sid}`"
        ))
    })
}

/// Applies [`select`] to every candidate (in parallel) and keeps input order.
pub fn select_batch(
    candidates: &[LabeledImage],
    origin: &DatasetManifest,
    scorer: &dyn Scorer,
    cfg: &SelectionConfig,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let index = source_index(origin);
    let audit: Vec<SelectionDecision> = candidates
        .par_iter()
        .map(|c| {
            let labels = source_labels(&index, &c.id, c.source_id.as_deref())?;
            select(c, labels, scorer, cfg)
        })
        .collect::<Result<_>>()?;
    let accepted = audit
        .iter()
        .zip(candidates)
        .filter_map(|(d, c)| apply(d, c))
        .collect();
    Ok(SelectionOutcome { accepted, audit })
}

/// Manifest form of [`select_batch`]: loads candidate pixels from
/// `candidates_dir` and returns the accepted records (paths unchanged) with
/// their labels replaced.
pub fn select_manifest(
    candidates: &DatasetManifest,
    candidates_dir: &Path,
    origin: &DatasetManifest,
    scorer: &dyn Scorer,
    cfg: &SelectionConfig,
) -> Result<(DatasetManifest, Vec<SelectionDecision>)> {
    cfg.validate()?;
    if candidates.categories != origin.categories {
        return Err(Error::CategoryMismatch(
            "candidate and origin manifests use different category sets".into(),
        ));
    }
    let index = source_index(origin);
    let audit: Vec<SelectionDecision> = candidates
        .records
        .par_iter()
        .map(|r| {
            let labels = source_labels(&index, &r.id, r.source_id.as_deref())?;
            let image = LabeledImage {
                id: r.id.clone(),
                pixels: load_png(&resolve(candidates_dir, &r.path))?,
                labels: r.labels.clone(),
                provenance: r.provenance,
                source_id: r.source_id.clone(),
                seed: r.seed,
            };
            select(&image, labels, scorer, cfg)
        })
        .collect::<Result<_>>()?;
    let mut aug = DatasetManifest::new(candidates.categories.clone(), "aug");
    for (d, r) in audit.iter().zip(&candidates.records) {
        if d.accepted() {
            aug.records.push(ImageRecord {
                labels: d.predicted.clone(),
                ..r.clone()
            });
        }
    }
    Ok((aug, audit))
}

#[derive(Serialize, Deserialize)]
struct AuditLine {
    candidate_id: String,
    scores: BTreeMap<String, f64>,
    predicted: Vec<String>,
    verdict: Verdict,
    reason: Reason,
}

pub fn write_audit(decisions: &[SelectionDecision], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for d in decisions {
        let cats = d.predicted.categories();
        let line = AuditLine {
            candidate_id: d.candidate_id.clone(),
            scores: cats
                .names()
                .iter()
                .cloned()
                .zip(d.scores.values().iter().copied())
                .collect(),
            predicted: d.predicted.names(),
            verdict: d.verdict,
            reason: d.reason,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_audit(path: &Path, categories: &CategorySet) -> Result<Vec<SelectionDecision>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let raw: AuditLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let scores = categories
            .names()
            .iter()
            .map(|n| {
                raw.scores
                    .get(n)
                    .copied()
                    .ok_or_else(|| bad(format!("missing score for `{n}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if raw.scores.len() != categories.len() {
            return Err(bad("scores name unknown categories".into()));
        }
        out.push(SelectionDecision {
            candidate_id: raw.candidate_id,
            predicted: LabelSet::from_names(categories, &raw.predicted)
                .map_err(|e| bad(e.to_string()))?,
            scores: ImageScores(scores),
            verdict: raw.verdict,
            reason: raw.reason,
        });
    }
    Ok(out)
}
