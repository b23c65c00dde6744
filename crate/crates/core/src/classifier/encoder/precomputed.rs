//! Embeddings computed elsewhere (e.g. by a large pretrained ViT) and
//! imported from a JSON-lines file: `{"key": <hex sha256>, "embedding":
//! [[f64; e]; s]}` per image. The key hashes the image's width, height and
//! raw RGB bytes, see [`precomputed_key`].

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EncoderBackend, EncoderCache, EncoderContext, EncoderInput};
use crate::error::{Error, Result};
use crate::registry::param;

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    embedding: Vec<Vec<f64>>,
}

pub fn precomputed_key(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_precomputed<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a RgbImage, &'a Array2<f64>)>,
) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (img, emb) in entries {
        let entry = Entry {
            key: precomputed_key(img),
            embedding: emb.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub struct PrecomputedEncoder {
    path: PathBuf,
    embed_dim: usize,
    table: HashMap<String, Array2<f64>>,
}

impl PrecomputedEncoder {
    pub fn build(ctx: &EncoderContext, params: &Value) -> Result<Self> {
        let path: PathBuf = param(params, "path")?
            .ok_or_else(|| Error::Config("precomputed encoder needs a `path` parameter".into()))?;
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let s = ctx.grid.num_patches();
        let mut table = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message,
            };
            let entry: Entry = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let rows = entry.embedding.len();
            if rows != s || entry.embedding.iter().any(|r| r.len() != ctx.embed_dim) {
                return Err(bad(format!(
                    "embedding must be {s} x {}, got {rows} rows",
                    ctx.embed_dim
                )));
            }
            let flat: Vec<f64> = entry.embedding.into_iter().flatten().collect();
            let arr = Array2::from_shape_vec((s, ctx.embed_dim), flat)
                .map_err(|e| bad(e.to_string()))?;
            table.insert(entry.key, arr);
        }
        Ok(Self {
            path,
            embed_dim: ctx.embed_dim,
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EncoderBackend for PrecomputedEncoder {
    fn kind(&self) -> &'static str {
        "precomputed"
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn forward(&self, input: &EncoderInput<'_>) -> Result<(Array2<f64>, EncoderCache)> {
        let key = precomputed_key(input.original);
        let emb = self.table.get(&key).ok_or_else(|| Error::Backend {
            backend: "precomputed".into(),
            message: format!("no embedding for image {key} in {}", self.path.display()),
        })?;
        Ok((emb.clone(), Box::new(())))
    }

    fn backward(&self, _: &EncoderCache, _: &Array2<f64>) -> Vec<Array2<f64>> {
        Vec::new()
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        Vec::new()
    }

    fn state(&self) -> Value {
        json!({ "path": self.path })
    }
}
