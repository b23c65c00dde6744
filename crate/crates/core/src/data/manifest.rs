use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CategorySet, LabelSet, Provenance};
use crate::error::{Error, Result};

/// One manifest line: an image reference plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub labels: LabelSet,
    pub provenance: Provenance,
    pub source_id: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub categories: CategorySet,
    pub split_tag: String,
    pub records: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    path: String,
    labels: Vec<String>,
    provenance: Provenance,
    source_id: Option<String>,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    categories: CategorySet,
    #[serde(default)]
    split_tag: String,
}

impl DatasetManifest {
    pub fn new(categories: CategorySet, split_tag: impl Into<String>) -> Self {
        Self {
            categories,
            split_tag: split_tag.into(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Checks the manifest-level invariants: shared category set, unique
    /// ids, and a source id on every synthetic record.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::Manifest("record with empty id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate record id `{}`", r.id)));
            }
            if r.labels.categories() != &self.categories {
                return Err(Error::CategoryMismatch(format!(
                    "record `{}` uses a different category set",
                    r.id
                )));
            }
            if r.provenance == Provenance::Synthetic && r.source_id.is_none() {
                return Err(Error::Manifest(format!(
                    "synthetic record `{}` has no source_id",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// Rewrites relative record paths so they resolve from `to_dir` instead
    /// of `from_dir`.
    pub fn rebase(&mut self, from_dir: &Path, to_dir: &Path) {
        for r in &mut self.records {
            if r.path.is_absolute() {
                continue;
            }
            let target = absolute(&from_dir.join(&r.path));
            let base = absolute(to_dir);
            r.path = pathdiff::diff_paths(&target, &base).unwrap_or(target);
        }
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_owned())
}

/// Sidecar file holding the category set, next to `foo.jsonl` as
/// `foo.header.json`.
pub fn header_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("header.json")
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate()?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = Header {
        categories: m.categories.clone(),
        split_tag: m.split_tag.clone(),
    };
    let hp = header_path(path);
    let mut text = serde_json::to_string(&header)?;
    text.push('\n');
    fs::write(&hp, text).map_err(|e| Error::io(&hp, e))?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in &m.records {
        let line = RecordLine {
            id: r.id.clone(),
            path: path_to_string(&r.path),
            labels: r.labels.names(),
            provenance: r.provenance,
            source_id: r.source_id.clone(),
            seed: r.seed,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn path_to_string(p: &Path) -> String {
    // Forward slashes keep manifests portable and byte-stable.
    p.to_string_lossy().replace('\\', "/")
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let hp = header_path(path);
    let header_text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header = serde_json::from_str(&header_text).map_err(|e| Error::Parse {
        path: hp.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut m = DatasetManifest::new(header.categories, header.split_tag);

    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            message,
        };
        let raw: RecordLine =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let labels = LabelSet::from_names(&m.categories, &raw.labels)
            .map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(parse_err(format!("duplicate record id `{}`", raw.id)));
        }
        if raw.provenance == Provenance::Synthetic && raw.source_id.is_none() {
            return Err(parse_err(format!(
                "synthetic record `{}` has no source_id",
                raw.id
            )));
        }
        m.records.push(ImageRecord {
            id: raw.id,
            path: PathBuf::from(raw.path),
            labels,
            provenance: raw.provenance,
            source_id: raw.source_id,
            seed: raw.seed,
        });
    }
    Ok(m)
}

/// Concatenates `aug` after `origin`. Both must share one category set and
/// paths must already be relative to the same directory.
pub fn merge_datasets(origin: &DatasetManifest, aug: &DatasetManifest) -> Result<DatasetManifest> {
    if origin.categories != aug.categories {
        return Err(Error::CategoryMismatch(format!(
            "cannot merge: origin has {:?}, aug has {:?}",
            origin.categories, aug.categories
        )));
    }
    let mut merged = origin.clone();
    merged.records.extend(aug.records.iter().cloned());
    merged.validate()?;
    Ok(merged)
}
