use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::encoder::{encoder_registry, glorot, EncoderContext};
use super::model::{PatchClassifier, Prepared, SampleGrads};
use super::optim::Adam;
use super::{ImageScores, PatchGridConfig};
use crate::data::{load_png, resolve, CategorySet, DatasetManifest, LabelSet, LabeledImage};
use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub grid: PatchGridConfig,
    pub encoder: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub encoder_params: Value,
    pub embed_dim: usize,
    pub train_encoder: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            grid: PatchGridConfig::default(),
            encoder: "linear".into(),
            encoder_params: Value::Null,
            embed_dim: 64,
            train_encoder: true,
            epochs: 80,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the 64×64 shapes corpus.
    pub fn desk() -> Self {
        Self {
            grid: PatchGridConfig::desk(),
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.embed_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "embed_dim, batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: PatchClassifier,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Loads every image of `train` (paths resolved against `base_dir`) and
/// trains on it.
pub fn train_classifier(
    train: &DatasetManifest,
    base_dir: &Path,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training manifest is empty".into()));
    }
    let images: Vec<LabeledImage> = train
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
        .collect::<Result<_>>()?;
    train_on_images(&images, &train.categories, cfg)
}

/// Mini-batch Adam on mean per-image loss. Batch order comes from a seeded
/// shuffle and per-sample gradients are reduced in batch order, so the
/// result is bit-for-bit reproducible for a given seed.
pub fn train_on_images(
    images: &[LabeledImage],
    categories: &CategorySet,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    for img in images {
        if img.labels.categories() != categories {
            return Err(Error::CategoryMismatch(format!(
                "image `{}` is labeled over a different category set",
                img.id
            )));
        }
    }
    let ctx = EncoderContext {
        grid: cfg.grid,
        embed_dim: cfg.embed_dim,
        seed: cfg.seed,
    };
    let encoder = encoder_registry().build(&cfg.encoder, &ctx, &cfg.encoder_params)?;
    let mut model = PatchClassifier::new(categories.clone(), cfg.grid, encoder, cfg.train_encoder)?;
    // Start from a random head: with a zero head, classes that co-occur in
    // an image score identically, share their max patch and receive
    // identical gradients, so they can never separate.
    {
        let (head, _) = model.parts_mut();
        let (e, c) = head.weight().dim();
        *head.weight_mut() = glorot(e, c, 0.01, &mut rng(cfg.seed ^ 0x4ead_1417));
    }

    let prepared: Vec<(Prepared, Vec<f64>)> = images
        .par_iter()
        .map(|img| (model.prepare(&img.pixels), img.labels.to_targets()))
        .collect();

    let mut shapes = vec![model.head().weight().dim()];
    if model.train_encoder() {
        shapes.extend(model.encoder().params().iter().map(|p| p.dim()));
    }
    let mut opt = Adam::new(cfg.learning_rate, &shapes);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut shuffler = rng(cfg.seed ^ 0x5e_ed0f_ba7c);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample: Vec<SampleGrads> = batch
                .par_iter()
                .map(|&i| model.loss_and_grads(&prepared[i].0, &prepared[i].1))
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut iter = per_sample.into_iter();
            let first = iter.next().expect("chunks are non-empty");
            let mut loss = first.loss;
            let mut grads: Vec<Array2<f64>> = std::iter::once(first.head).chain(first.encoder).collect();
            for s in iter {
                loss += s.loss;
                for (acc, g) in grads.iter_mut().zip(std::iter::once(s.head).chain(s.encoder)) {
                    *acc += &g;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss;
            grads.iter_mut().for_each(|g| *g *= scale);

            let (head, encoder) = model.parts_mut();
            let mut params = vec![head.weight_mut()];
            if grads.len() > 1 {
                params.extend(encoder.params_mut());
            }
            opt.update(params, &grads);
        }
        let mean = epoch_loss / prepared.len() as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        loss_trace.push(mean);
    }
    let non_finite = model.head().weight().iter().any(|v| !v.is_finite())
        || model.encoder().params().iter().any(|p| p.iter().any(|v| !v.is_finite()));
    if non_finite {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            loss: f64::NAN,
        });
    }
    model.mark_trained();
    Ok(TrainOutcome { model, loss_trace })
}

/// Fraction of (image, class) decisions at `threshold` that match the labels.
pub fn per_class_accuracy(scores: &[ImageScores], labels: &[LabelSet], threshold: f64) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (s, l) in scores.iter().zip(labels) {
        for (c, v) in s.values().iter().enumerate() {
            hits += usize::from((*v > threshold) == l.contains_index(c));
            total += 1;
        }
    }
    hits as f64 / total.max(1) as f64
}

/// Fraction of images whose thresholded label set equals the true one.
pub fn subset_accuracy(scores: &[ImageScores], labels: &[LabelSet], threshold: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| {
            s.values()
                .iter()
                .enumerate()
                .all(|(c, v)| (*v > threshold) == l.contains_index(c))
        })
        .count();
    hits as f64 / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_helpers() {
        let cats = CategorySet::new(["a", "b"]).unwrap();
        let labels = vec![
            LabelSet::from_names(&cats, ["a"]).unwrap(),
            LabelSet::from_names(&cats, ["a", "b"]).unwrap(),
        ];
        let scores = vec![ImageScores(vec![0.9, 0.6]), ImageScores(vec![0.8, 0.7])];
        assert_eq!(per_class_accuracy(&scores, &labels, 0.5), 0.75);
        assert_eq!(subset_accuracy(&scores, &labels, 0.5), 0.5);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::desk();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let cats = CategorySet::new(["a"]).unwrap();
        assert!(train_on_images(&[], &cats, &TrainConfig::desk()).is_err());
    }
}
