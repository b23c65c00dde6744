use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::Array2;

use super::encoder::{patchify, EncoderBackend, EncoderInput};
use super::{
    global_max_pool, head_gradient, score_patches, ImageScores, PatchEmbeddings, PatchGridConfig,
    PatchScoreGrid, ScoringHead,
};
use crate::data::CategorySet;
use crate::error::{Error, Result};

/// An image resized to the grid and cut into patches.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub original: RgbImage,
    pub patches: Array2<f64>,
}

pub(crate) struct SampleGrads {
    pub loss: f64,
    pub head: Array2<f64>,
    pub encoder: Vec<Array2<f64>>,
}

pub struct PatchClassifier {
    grid: PatchGridConfig,
    categories: CategorySet,
    encoder: Box<dyn EncoderBackend>,
    head: ScoringHead,
    train_encoder: bool,
    trained: bool,
}

impl PatchClassifier {
    /// A fresh model with a zero head.
    pub fn new(
        categories: CategorySet,
        grid: PatchGridConfig,
        encoder: Box<dyn EncoderBackend>,
        train_encoder: bool,
    ) -> Result<Self> {
        grid.validate()?;
        let head = ScoringHead::zeros(encoder.embed_dim(), categories.len());
        Ok(Self {
            grid,
            categories,
            encoder,
            head,
            train_encoder,
            trained: false,
        })
    }

    pub(crate) fn from_parts(
        categories: CategorySet,
        grid: PatchGridConfig,
        encoder: Box<dyn EncoderBackend>,
        head: ScoringHead,
        train_encoder: bool,
    ) -> Result<Self> {
        grid.validate()?;
        if head.weight().dim() != (encoder.embed_dim(), categories.len()) {
            return Err(Error::Checkpoint(format!(
                "head is {:?}, expected ({}, {})",
                head.weight().dim(),
                encoder.embed_dim(),
                categories.len()
            )));
        }
        Ok(Self {
            grid,
            categories,
            encoder,
            head,
            train_encoder,
            trained: true,
        })
    }

    pub fn grid(&self) -> &PatchGridConfig {
        &self.grid
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn encoder(&self) -> &dyn EncoderBackend {
        self.encoder.as_ref()
    }

    pub fn head(&self) -> &ScoringHead {
        &self.head
    }

    pub fn train_encoder(&self) -> bool {
        self.train_encoder
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut ScoringHead, &mut dyn EncoderBackend) {
        (&mut self.head, self.encoder.as_mut())
    }

    /// Bilinear resize to the grid size, then patchify.
    pub fn prepare(&self, img: &RgbImage) -> Prepared {
        let (w, h) = (self.grid.width, self.grid.height);
        let patches = if img.dimensions() == (w, h) {
            patchify(img, &self.grid)
        } else {
            patchify(&imageops::resize(img, w, h, FilterType::Triangle), &self.grid)
        };
        Prepared {
            original: img.clone(),
            patches,
        }
    }

    pub fn embed(&self, p: &Prepared) -> Result<PatchEmbeddings> {
        self.encoder.embed(&EncoderInput {
            original: &p.original,
            patches: &p.patches,
        })
    }

    pub fn patch_scores(&self, p: &Prepared) -> Result<PatchScoreGrid> {
        score_patches(&self.embed(p)?, &self.head)
    }

    pub fn predict_prepared(&self, p: &Prepared) -> Result<ImageScores> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        Ok(global_max_pool(&self.patch_scores(p)?))
    }

    /// Resize, patchify, embed, score, pool.
    pub fn predict(&self, img: &RgbImage) -> Result<ImageScores> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        self.predict_prepared(&self.prepare(img))
    }

    pub(crate) fn loss_and_grads(&self, p: &Prepared, targets: &[f64]) -> Result<SampleGrads> {
        let input = EncoderInput {
            original: &p.original,
            patches: &p.patches,
        };
        let (emb, cache) = self.encoder.forward(&input)?;
        let emb = PatchEmbeddings::new(emb)?;
        let g = head_gradient(&emb, &self.head, targets)?;
        let encoder = if self.train_encoder {
            self.encoder.backward(&cache, &g.d_embeddings)
        } else {
            Vec::new()
        };
        Ok(SampleGrads {
            loss: g.loss,
            head: g.d_head,
            encoder,
        })
    }
}
