use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{save_png, CategorySet, DatasetManifest, ImageRecord, LabelSet, LabeledImage, Provenance};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::shapes::{self, Shape, SHAPE_NAMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapesCorpusConfig {
    pub image_size: u32,
    pub categories: Vec<String>,
    pub images: usize,
    pub max_objects_per_image: usize,
    pub seed: u64,
    /// Prefix of generated image ids; lets train and held-out corpora share
    /// a directory without colliding.
    pub id_prefix: String,
}

impl Default for ShapesCorpusConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            categories: SHAPE_NAMES.iter().map(|s| s.to_string()).collect(),
            images: 500,
            max_objects_per_image: 2,
            seed: 0,
            id_prefix: "shape".into(),
        }
    }
}

impl ShapesCorpusConfig {
    pub fn validate(&self) -> Result<CategorySet> {
        if self.images == 0 {
            return Err(Error::Config("corpus needs at least one image".into()));
        }
        if self.max_objects_per_image == 0 {
            return Err(Error::Config("max_objects_per_image must be at least 1".into()));
        }
        if self.image_size < 2 * shapes::size_range(self.image_size, self.image_size).0 {
            return Err(Error::Config(format!(
                "image_size {} is too small for the shapes",
                self.image_size
            )));
        }
        for c in &self.categories {
            if Shape::from_name(c).is_none() {
                return Err(Error::Config(format!(
                    "`{c}` is not a renderable shape (known: {})",
                    SHAPE_NAMES.join(", ")
                )));
            }
        }
        CategorySet::new(self.categories.iter())
    }

    pub fn image_id(&self, index: usize) -> String {
        format!("{}-{index:05}", self.id_prefix)
    }
}

/// One corpus image, fully determined by its id and the corpus seed.
fn render_one(cfg: &ShapesCorpusConfig, cats: &CategorySet, id: String) -> Result<LabeledImage> {
    let seed = derive_seed(cfg.seed, &id, 0);
    let mut r = rng(seed);
    let size = cfg.image_size;
    let k_max = cfg.max_objects_per_image.min(cats.len());
    let k = r.gen_range(1..=k_max);
    let mut classes: Vec<usize> = (0..cats.len()).collect();
    classes.shuffle(&mut r);
    classes.truncate(k);
    classes.sort_unstable();
    let kinds: Vec<Shape> = classes
        .iter()
        .map(|&c| Shape::from_name(cats.name(c)).expect("validated"))
        .collect();
    let background = shapes::noise_background(size, size, &mut r);
    let placements = shapes::place(&kinds, size, size, &mut r)
        .ok_or_else(|| Error::Harness(format!("could not place {k} shapes on a {size}px canvas")))?;
    Ok(LabeledImage {
        id,
        pixels: shapes::render(&background, &placements),
        labels: LabelSet::from_indices(cats, classes),
        provenance: Provenance::Original,
        source_id: None,
        seed: Some(seed),
    })
}

/// Renders the corpus in memory. Images are independent, so this fans out
/// per image; ordering follows the index.
pub fn make_corpus(cfg: &ShapesCorpusConfig) -> Result<(CategorySet, Vec<LabeledImage>)> {
    let cats = cfg.validate()?;
    let images = (0..cfg.images)
        .into_par_iter()
        .map(|i| render_one(cfg, &cats, cfg.image_id(i)))
        .collect::<Result<_>>()?;
    Ok((cats, images))
}

/// Writes `images/<id>.png` under `dir` and returns the matching manifest
/// (paths relative to `dir`).
pub fn write_images(
    images: &[LabeledImage],
    categories: &CategorySet,
    dir: &Path,
    subdir: &str,
    split_tag: &str,
) -> Result<DatasetManifest> {
    let img_dir = dir.join(subdir);
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    images
        .par_iter()
        .try_for_each(|img| save_png(&img.pixels, &img_dir.join(format!("{}.png", img.id))))?;
    manifest_of(images, categories, subdir, split_tag)
}

/// Manifest describing `images` as if written by [`write_images`], without
/// touching the filesystem.
pub fn manifest_of(
    images: &[LabeledImage],
    categories: &CategorySet,
    subdir: &str,
    split_tag: &str,
) -> Result<DatasetManifest> {
    let mut m = DatasetManifest::new(categories.clone(), split_tag);
    m.records = images
        .iter()
        .map(|img| ImageRecord {
            id: img.id.clone(),
            path: PathBuf::from(subdir).join(format!("{}.png", img.id)),
            labels: img.labels.clone(),
            provenance: img.provenance,
            source_id: img.source_id.clone(),
            seed: img.seed,
        })
        .collect();
    m.validate()?;
    Ok(m)
}

/// [`make_corpus`] followed by [`write_images`] into `dir/images`.
pub fn render_corpus(cfg: &ShapesCorpusConfig, dir: &Path, split_tag: &str) -> Result<DatasetManifest> {
    let (cats, images) = make_corpus(cfg)?;
    write_images(&images, &cats, dir, "images", split_tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(images: usize, max_objects: usize) -> ShapesCorpusConfig {
        ShapesCorpusConfig {
            images,
            max_objects_per_image: max_objects,
            ..Default::default()
        }
    }

    #[test]
    fn singleton_labels_with_one_object() {
        let (_, imgs) = make_corpus(&cfg(40, 1)).unwrap();
        assert!(imgs.iter().all(|i| i.labels.len() == 1));
    }

    #[test]
    fn label_counts_within_bounds() {
        let (_, imgs) = make_corpus(&cfg(60, 2)).unwrap();
        assert!(imgs.iter().all(|i| (1..=2).contains(&i.labels.len())));
        assert!(imgs.iter().any(|i| i.labels.len() == 2));
    }

    #[test]
    fn rejects_unknown_shape() {
        let bad = ShapesCorpusConfig {
            categories: vec!["circle".into(), "hexagon".into()],
            ..cfg(1, 1)
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(cfg(0, 1).validate().is_err());
    }
}
