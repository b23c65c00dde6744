//! Patch encoders. Each produces one embedding row per patch; trainable
//! encoders also expose their parameters and a backward pass.

mod attention;
mod linear;
mod precomputed;

use std::any::Any;

use image::RgbImage;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{PatchEmbeddings, PatchGridConfig};
use crate::error::Result;
use crate::registry::Registry;

pub use attention::AttentionEncoder;
pub use linear::LinearPatchEncoder;
pub use precomputed::{precomputed_key, write_precomputed, PrecomputedEncoder};

/// What an encoder sees for one image: the original pixels and the
/// flattened patches of the resized image.
pub struct EncoderInput<'a> {
    pub original: &'a RgbImage,
    pub patches: &'a Array2<f64>,
}

pub type EncoderCache = Box<dyn Any + Send + Sync>;

pub trait EncoderBackend: Send + Sync {
    fn kind(&self) -> &'static str;
    fn embed_dim(&self) -> usize;

    /// Embeddings plus whatever the backward pass needs.
    fn forward(&self, input: &EncoderInput<'_>) -> Result<(Array2<f64>, EncoderCache)>;

    /// Parameter gradients, aligned with [`EncoderBackend::params`].
    fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>) -> Vec<Array2<f64>>;

    fn params(&self) -> Vec<&Array2<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<f64>>;

    /// Everything needed to rebuild this encoder through the registry.
    fn state(&self) -> Value;

    fn embed(&self, input: &EncoderInput<'_>) -> Result<PatchEmbeddings> {
        PatchEmbeddings::new(self.forward(input)?.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderContext {
    pub grid: PatchGridConfig,
    pub embed_dim: usize,
    pub seed: u64,
}

pub fn encoder_registry() -> Registry<dyn EncoderBackend, EncoderContext> {
    let mut reg: Registry<dyn EncoderBackend, EncoderContext> = Registry::new("encoder");
    reg.register("linear", |ctx, p| Ok(Box::new(LinearPatchEncoder::build(ctx, p)?)));
    reg.register("attention", |ctx, p| Ok(Box::new(AttentionEncoder::build(ctx, p)?)));
    reg.register("precomputed", |ctx, p| Ok(Box::new(PrecomputedEncoder::build(ctx, p)?)));
    reg
}

/// Flattens the patches of an image already resized to the grid, row-major
/// over the grid and (y, x, channel) within a patch, scaled to [-0.5, 0.5].
pub fn patchify(img: &RgbImage, grid: &PatchGridConfig) -> Array2<f64> {
    let d = grid.patch as usize;
    let cols = grid.cols();
    let mut out = Array2::zeros((grid.num_patches(), grid.patch_dim()));
    for (p, mut row) in out.rows_mut().into_iter().enumerate() {
        let (py, px) = (p / cols, p % cols);
        let mut k = 0;
        for y in 0..d {
            for x in 0..d {
                let px_ = img.get_pixel((px * d + x) as u32, (py * d + y) as u32);
                for c in 0..3 {
                    row[k] = px_[c] as f64 / 255.0 - 0.5;
                    k += 1;
                }
            }
        }
    }
    out
}

pub(crate) fn glorot(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = gain * (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

pub(crate) fn weights_from(p: &Value) -> Result<Option<Vec<Array2<f64>>>> {
    crate::registry::param(p, "weights")
}

pub(crate) fn row_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0))
}


#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn patchify_layout() {
        let grid = PatchGridConfig {
            height: 4,
            width: 4,
            patch: 2,
        };
        let img = RgbImage::from_fn(4, 4, |x, y| Rgb([(x * 10 + y) as u8, 0, 255]));
        let p = patchify(&img, &grid);
        assert_eq!(p.dim(), (4, 12));
        // Patch 1 is grid row 0, column 1; its first pixel is (x=2, y=0).
        assert!((p[[1, 0]] - (20.0 / 255.0 - 0.5)).abs() < 1e-12);
        // Third pixel of patch 2 is (x=0, y=3).
        assert!((p[[2, 6]] - (3.0 / 255.0 - 0.5)).abs() < 1e-12);
        assert_eq!(p[[3, 2]], 0.5);
    }
}
