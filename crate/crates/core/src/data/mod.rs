//! Domain types shared by every stage: categories, label sets, labeled
//! images and the dataset manifests that describe original, augmented and
//! merged datasets.

mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{
    header_path, merge_datasets, read_manifest, write_manifest, DatasetManifest, ImageRecord,
};

/// The ordered class vocabulary. Order fixes the index of every class in
/// score vectors.
#[derive(Clone, PartialEq, Eq)]
pub struct CategorySet(Arc<[String]>);

impl CategorySet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Categories("at least one category is required".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::Categories(format!("category #{i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::Categories(format!("duplicate category `{n}`")));
            }
        }
        Ok(Self(names.into()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.0[index]
    }
}

impl fmt::Debug for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Serialize for CategorySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CategorySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        CategorySet::new(names).map_err(serde::de::Error::custom)
    }
}

/// A subset of a [`CategorySet`].
#[derive(Clone, PartialEq, Eq)]
pub struct LabelSet {
    categories: CategorySet,
    members: Vec<bool>,
}

impl LabelSet {
    pub fn empty(categories: &CategorySet) -> Self {
        Self {
            categories: categories.clone(),
            members: vec![false; categories.len()],
        }
    }

    pub fn from_names<I, S>(categories: &CategorySet, names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = Self::empty(categories);
        for name in names {
            let name = name.as_ref();
            let idx = categories
                .index_of(name)
                .ok_or_else(|| Error::UnknownCategory(name.to_owned()))?;
            set.members[idx] = true;
        }
        Ok(set)
    }

    pub fn from_indices(categories: &CategorySet, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::empty(categories);
        for i in indices {
            set.members[i] = true;
        }
        set
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn contains(&self, name: &str) -> bool {
        self.categories
            .index_of(name)
            .is_some_and(|i| self.members[i])
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.members[index]
    }

    pub fn insert_index(&mut self, index: usize) {
        self.members[index] = true;
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|m| *m)
    }

    /// Member indices in category order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.then_some(i))
    }

    /// Member names in category order.
    pub fn names(&self) -> Vec<String> {
        self.indices()
            .map(|i| self.categories.name(i).to_owned())
            .collect()
    }

    /// Binary target vector over the category set.
    pub fn to_targets(&self) -> Vec<f64> {
        self.members.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    /// True iff every member of `self` is a member of `other`.
    pub fn subset_of(&self, other: &LabelSet) -> Result<bool> {
        if self.categories != other.categories {
            return Err(Error::CategoryMismatch(format!(
                "{:?} vs {:?}",
                self.categories, other.categories
            )));
        }
        Ok(self
            .members
            .iter()
            .zip(&other.members)
            .all(|(a, b)| !a || *b))
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.names()).finish()
    }
}

/// Free-function form of [`LabelSet::subset_of`].
pub fn subset_of(a: &LabelSet, b: &LabelSet) -> Result<bool> {
    a.subset_of(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synthetic,
}

/// Image pixels with their image-level labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub pixels: RgbImage,
    pub labels: LabelSet,
    pub provenance: Provenance,
    pub source_id: Option<String>,
    pub seed: Option<u64>,
}

impl LabeledImage {
    pub fn original(id: impl Into<String>, pixels: RgbImage, labels: LabelSet) -> Result<Self> {
        let img = Self {
            id: id.into(),
            pixels,
            labels,
            provenance: Provenance::Original,
            source_id: None,
            seed: None,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.width() == 0 || self.pixels.height() == 0 {
            return Err(Error::Image(format!("`{}` has zero extent", self.id)));
        }
        if self.provenance == Provenance::Synthetic && self.source_id.is_none() {
            return Err(Error::Manifest(format!(
                "synthetic image `{}` has no source_id",
                self.id
            )));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Png {
        path: path.to_owned(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Png {
            path: path.to_owned(),
            source,
        })
}

/// Resolves a record path against the directory holding its manifest.
pub fn resolve(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_owned()
    } else {
        base_dir.join(path)
    }
}
