//! Self-describing JSON model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::encoder::{encoder_registry, EncoderContext};
use super::model::PatchClassifier;
use super::{PatchGridConfig, ScoringHead};
use crate::data::CategorySet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "synthaug-patch-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EncoderSection {
    kind: String,
    embed_dim: usize,
    trainable: bool,
    state: Value,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    grid: PatchGridConfig,
    categories: CategorySet,
    encoder: EncoderSection,
    head: ScoringHead,
}

pub fn save_checkpoint(model: &PatchClassifier, path: &Path) -> Result<()> {
    if !model.is_trained() {
        return Err(Error::Untrained);
    }
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        grid: *model.grid(),
        categories: model.categories().clone(),
        encoder: EncoderSection {
            kind: model.encoder().kind().into(),
            embed_dim: model.encoder().embed_dim(),
            trainable: model.train_encoder(),
            state: model.encoder().state(),
        },
        head: model.head().clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string(&ck)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<PatchClassifier> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    let ctx = EncoderContext {
        grid: ck.grid,
        embed_dim: ck.encoder.embed_dim,
        seed: 0,
    };
    let encoder = encoder_registry().build(&ck.encoder.kind, &ctx, &ck.encoder.state)?;
    let head = ScoringHead::new(ck.head.weight().clone())?;
    PatchClassifier::from_parts(ck.categories, ck.grid, encoder, head, ck.encoder.trainable)
}
