//! Patch-driven multi-label classifier.
//!
//! An encoder maps the `s` patches of a resized image to embeddings
//! `F (s × e)`. A linear head `W (e × C)` gives per-patch logits and a
//! softmax across classes gives patch scores `Z`. The image-level score of
//! each class is its maximum over patches, and training minimises the mean
//! per-class binary cross-entropy of those image-level scores.

mod checkpoint;
mod encoder;
mod model;
mod optim;
mod train;

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use encoder::{
    encoder_registry, patchify, precomputed_key, write_precomputed, AttentionEncoder,
    EncoderBackend, EncoderCache, EncoderContext, EncoderInput, LinearPatchEncoder,
    PrecomputedEncoder,
};
pub use model::{PatchClassifier, Prepared};
pub use optim::Adam;
pub use train::{
    per_class_accuracy, subset_accuracy, train_classifier, train_on_images, TrainConfig,
    TrainOutcome,
};

/// Clamp applied to image-level scores before taking logs.
pub const LOSS_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchGridConfig {
    pub height: u32,
    pub width: u32,
    pub patch: u32,
}

impl Default for PatchGridConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl PatchGridConfig {
    /// 384×384 input, 16-pixel patches: a 24×24 grid.
    pub const fn full_scale() -> Self {
        Self {
            height: 384,
            width: 384,
            patch: 16,
        }
    }

    /// 64×64 input, 8-pixel patches: an 8×8 grid.
    pub const fn desk() -> Self {
        Self {
            height: 64,
            width: 64,
            patch: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.patch;
        if d == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("degenerate patch grid {self:?}")));
        }
        if !self.height.is_multiple_of(d) || !self.width.is_multiple_of(d) {
            return Err(Error::Config(format!(
                "patch size {d} does not divide {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        (self.height / self.patch) as usize
    }

    pub fn cols(&self) -> usize {
        (self.width / self.patch) as usize
    }

    pub fn num_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Length of one flattened RGB patch.
    pub fn patch_dim(&self) -> usize {
        (self.patch * self.patch * 3) as usize
    }
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_owned()))
    }
}

/// `F`: one embedding row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings(Array2<f64>);

impl PatchEmbeddings {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite(&values, "patch embeddings")?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn num_patches(&self) -> usize {
        self.0.nrows()
    }
}

/// `W`: embedding-to-class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringHead(Array2<f64>);

impl ScoringHead {
    pub fn new(weight: Array2<f64>) -> Result<Self> {
        check_finite(&weight, "scoring head")?;
        Ok(Self(weight))
    }

    pub fn zeros(embed_dim: usize, classes: usize) -> Self {
        Self(Array2::zeros((embed_dim, classes)))
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn weight_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }
}

/// `Z`: per-patch class scores, each row on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreGrid(Array2<f64>);

impl PatchScoreGrid {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    /// Wraps externally computed scores, checking the simplex invariant.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        check_finite(&values, "patch scores")?;
        for (i, row) in values.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0) {
                return Err(Error::Shape(format!("row {i} is not a distribution (sum {sum})")));
            }
        }
        Ok(Self(values))
    }
}

/// `ŷ`: image-level class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores(pub Vec<f64>);

impl ImageScores {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn softmax_row_into(row: ArrayView1<'_, f64>, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(row.iter()) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    let mut buf = vec![0.0; logits.ncols()];
    for (i, row) in logits.rows().into_iter().enumerate() {
        softmax_row_into(row, &mut buf);
        out.row_mut(i).iter_mut().zip(&buf).for_each(|(o, b)| *o = *b);
    }
    out
}

/// Backward pass of a row-wise softmax given its output `p` and the
/// upstream gradient `dp`.
pub(crate) fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((mut o, pr), dr) in out.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
        let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        o.iter_mut()
            .zip(pr.iter().zip(dr.iter()))
            .for_each(|(o, (a, b))| *o = a * (b - dot));
    }
    out
}

/// `Z = softmax(F·W)`.
pub fn score_patches(f: &PatchEmbeddings, head: &ScoringHead) -> Result<PatchScoreGrid> {
    let (fv, w) = (f.values(), head.weight());
    if fv.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "embeddings have width {}, head expects {}",
            fv.ncols(),
            w.nrows()
        )));
    }
    check_finite(fv, "patch embeddings")?;
    check_finite(w, "scoring head")?;
    Ok(PatchScoreGrid(softmax_rows(&fv.dot(w))))
}

/// Index of the maximising patch per class; ties go to the lowest index.
pub fn argmax_per_class(z: &PatchScoreGrid) -> Vec<usize> {
    z.0.columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn global_max_pool(z: &PatchScoreGrid) -> ImageScores {
    ImageScores(
        z.0.fold_axis(Axis(0), f64::NEG_INFINITY, |a, b| a.max(*b))
            .to_vec(),
    )
}

/// Mean per-class binary cross-entropy between targets `y` and scores.
pub fn mce_loss(y: &[f64], scores: &ImageScores) -> Result<f64> {
    if y.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} scores",
            y.len(),
            scores.len()
        )));
    }
    let c = y.len() as f64;
    let total: f64 = y
        .iter()
        .zip(scores.values())
        .map(|(&t, &p)| {
            let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / c)
}

/// dL/dŷ for [`mce_loss`]; zero where the clamp is active.
pub(crate) fn mce_loss_grad(y: &[f64], scores: &ImageScores) -> Vec<f64> {
    let c = y.len() as f64;
    y.iter()
        .zip(scores.values())
        .map(|(&t, &p)| {
            if !(LOSS_CLAMP..=1.0 - LOSS_CLAMP).contains(&p) {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / c
            }
        })
        .collect()
}

/// Loss and gradients for one image through head, softmax and max pooling.
#[derive(Debug, Clone)]
pub struct HeadGradient {
    pub loss: f64,
    pub scores: ImageScores,
    pub d_head: Array2<f64>,
    pub d_embeddings: Array2<f64>,
}

pub fn head_gradient(f: &PatchEmbeddings, head: &ScoringHead, y: &[f64]) -> Result<HeadGradient> {
    let z = score_patches(f, head)?;
    let scores = global_max_pool(&z);
    let loss = mce_loss(y, &scores)?;
    let d_scores = mce_loss_grad(y, &scores);
    let mut dz = Array2::zeros(z.0.raw_dim());
    for (c, &i) in argmax_per_class(&z).iter().enumerate() {
        dz[[i, c]] = d_scores[c];
    }
    let d_logits = softmax_rows_backward(&z.0, &dz);
    Ok(HeadGradient {
        loss,
        scores,
        d_head: f.values().t().dot(&d_logits),
        d_embeddings: d_logits.dot(&head.weight().t()),
    })
}
