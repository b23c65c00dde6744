use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CategorySet, LabelSet};
use crate::error::{Error, Result};
use crate::selection::{decide, SelectionConfig, SelectionDecision};

/// What a candidate was supposed to show and what it actually shows.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    pub source_labels: LabelSet,
    pub content: LabelSet,
}

impl TruthEntry {
    /// Content is worth keeping: every rendered class was asked for.
    pub fn is_faithful(&self) -> bool {
        !self.content.is_empty() && self.content.subset_of(&self.source_labels).unwrap_or(false)
    }

    /// Accepting this candidate with `predicted` as its labels is correct.
    pub fn is_truly_good(&self, predicted: &LabelSet) -> bool {
        self.is_faithful() && *predicted == self.content
    }
}

/// Candidate id → truth.
pub type GroundTruth = BTreeMap<String, TruthEntry>;

#[derive(Serialize, Deserialize)]
struct TruthLine {
    candidate_id: String,
    source_labels: Vec<String>,
    content: Vec<String>,
}

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for (id, t) in truth {
        let line = TruthLine {
            candidate_id: id.clone(),
            source_labels: t.source_labels.names(),
            content: t.content.names(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: &Path, categories: &CategorySet) -> Result<GroundTruth> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut truth = GroundTruth::new();
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
        let raw: TruthLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let entry = TruthEntry {
            source_labels: LabelSet::from_names(categories, &raw.source_labels)
                .map_err(|e| bad(e.to_string()))?,
            content: LabelSet::from_names(categories, &raw.content).map_err(|e| bad(e.to_string()))?,
        };
        if truth.insert(raw.candidate_id.clone(), entry).is_some() {
            return Err(bad(format!("duplicate candidate id `{}`", raw.candidate_id)));
        }
    }
    Ok(truth)
}

/// Candidate-level quality of accept decisions. Ratios with a zero
/// denominator are `None` (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub candidates: usize,
    pub accepted: usize,
    /// Candidates whose content only contains requested classes.
    pub faithful: usize,
    /// Accepted, faithful, and labeled exactly with their content.
    pub good_accepted: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_ids(audit: &[SelectionDecision], truth: &GroundTruth) -> Result<()> {
    let ids: BTreeSet<&str> = audit.iter().map(|d| d.candidate_id.as_str()).collect();
    if ids.len() != audit.len() {
        return Err(Error::Harness("audit repeats a candidate id".into()));
    }
    if ids.len() != truth.len() || !truth.keys().all(|k| ids.contains(k.as_str())) {
        let missing: Vec<&str> = ids
            .iter()
            .copied()
            .filter(|id| !truth.contains_key(*id))
            .chain(truth.keys().map(String::as_str).filter(|k| !ids.contains(k)))
            .take(5)
            .collect();
        return Err(Error::Harness(format!(
            "audit and ground truth cover different candidates (e.g. {missing:?})"
        )));
    }
    Ok(())
}

pub fn selection_metrics(audit: &[SelectionDecision], truth: &GroundTruth) -> Result<SelectionMetrics> {
    check_ids(audit, truth)?;
    let mut m = SelectionMetrics {
        candidates: audit.len(),
        accepted: 0,
        faithful: 0,
        good_accepted: 0,
        precision: None,
        recall: None,
    };
    for d in audit {
        let t = &truth[&d.candidate_id];
        m.faithful += usize::from(t.is_faithful());
        if d.accepted() {
            m.accepted += 1;
            m.good_accepted += usize::from(t.is_truly_good(&d.predicted));
        }
    }
    m.precision = ratio(m.good_accepted, m.accepted);
    m.recall = ratio(m.good_accepted, m.faithful);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub accepted: usize,
    pub acceptance_rate: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub downstream_accuracy: Option<f64>,
}

/// Receives the decisions at one ε and returns a downstream accuracy.
pub type DownstreamHook<'a> = &'a mut dyn FnMut(f64, &[SelectionDecision]) -> Result<f64>;

/// Re-applies the selection rule at each ε using the scores cached in the
/// audit (nothing is re-predicted). `downstream`, when given, receives the
/// decisions at each ε and returns an accuracy for that row.
pub fn epsilon_sweep(
    audit: &[SelectionDecision],
    truth: &GroundTruth,
    grid: &[f64],
    reject_empty: bool,
    mut downstream: Option<DownstreamHook<'_>>,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("epsilon grid is empty".into()));
    }
    if let Some(e) = grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::Config(format!("epsilon {e} is outside [0, 1]")));
    }
    check_ids(audit, truth)?;
    grid.iter()
        .map(|&epsilon| {
            let cfg = SelectionConfig {
                epsilon,
                reject_empty,
            };
            let decisions = audit
                .iter()
                .map(|d| {
                    decide(
                        &d.candidate_id,
                        d.scores.clone(),
                        &truth[&d.candidate_id].source_labels,
                        &cfg,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let m = selection_metrics(&decisions, truth)?;
            let downstream_accuracy = match downstream.as_mut() {
                Some(f) => Some(f(epsilon, &decisions)?),
                None => None,
            };
            Ok(SweepRow {
                epsilon,
                accepted: m.accepted,
                acceptance_rate: ratio(m.accepted, m.candidates),
                precision: m.precision,
                recall: m.recall,
                downstream_accuracy,
            })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Plot-ready CSV of a sweep (empty cells for undefined ratios).
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("epsilon,accepted,acceptance_rate,precision,recall,downstream_accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epsilon,
            r.accepted,
            cell(r.acceptance_rate),
            cell(r.precision),
            cell(r.recall),
            cell(r.downstream_accuracy)
        ));
    }
    out
}
