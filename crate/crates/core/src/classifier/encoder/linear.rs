use ndarray::Array2;
use serde_json::{json, Value};

use super::{glorot, row_sums, weights_from, EncoderBackend, EncoderCache, EncoderContext, EncoderInput};
use crate::error::{Error, Result};
use crate::seed::rng;

/// Affine map of each flattened patch: `F = P·A + b`.
pub struct LinearPatchEncoder {
    proj: Array2<f64>,
    bias: Array2<f64>,
}

impl LinearPatchEncoder {
    pub fn build(ctx: &EncoderContext, params: &Value) -> Result<Self> {
        let (din, e) = (ctx.grid.patch_dim(), ctx.embed_dim);
        match weights_from(params)? {
            Some(w) => {
                let [proj, bias]: [Array2<f64>; 2] = w
                    .try_into()
                    .map_err(|_| Error::Checkpoint("linear encoder expects 2 weight arrays".into()))?;
                if proj.dim() != (din, e) || bias.dim() != (1, e) {
                    return Err(Error::Checkpoint(format!(
                        "linear encoder weights {:?}/{:?} do not fit patch_dim {din}, embed_dim {e}",
                        proj.dim(),
                        bias.dim()
                    )));
                }
                Ok(Self { proj, bias })
            }
            None => {
                let mut r = rng(ctx.seed);
                Ok(Self {
                    proj: glorot(din, e, 1.0, &mut r),
                    bias: Array2::zeros((1, e)),
                })
            }
        }
    }
}

impl EncoderBackend for LinearPatchEncoder {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn embed_dim(&self) -> usize {
        self.proj.ncols()
    }

    fn forward(&self, input: &EncoderInput<'_>) -> Result<(Array2<f64>, EncoderCache)> {
        if input.patches.ncols() != self.proj.nrows() {
            return Err(Error::Shape(format!(
                "patch width {} but encoder expects {}",
                input.patches.ncols(),
                self.proj.nrows()
            )));
        }
        let out = input.patches.dot(&self.proj) + &self.bias;
        Ok((out, Box::new(input.patches.clone())))
    }

    fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>) -> Vec<Array2<f64>> {
        let patches = cache
            .downcast_ref::<Array2<f64>>()
            .expect("linear encoder cache");
        vec![patches.t().dot(d_out), row_sums(d_out)]
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        vec![&self.proj, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.proj, &mut self.bias]
    }

    fn state(&self) -> Value {
        json!({ "weights": [&self.proj, &self.bias] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::encoder::gradcheck;
    use crate::classifier::PatchGridConfig;
    use image::RgbImage;
    use rand::Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let grid = PatchGridConfig { height: 4, width: 4, patch: 2 };
        let ctx = EncoderContext { grid, embed_dim: 5, seed: 1 };
        let mut enc = LinearPatchEncoder::build(&ctx, &Value::Null).unwrap();
        let mut r = rng(2);
        let patches = Array2::from_shape_simple_fn((4, 12), || r.gen_range(-0.5..0.5));
        let probe = Array2::from_shape_simple_fn((4, 5), || r.gen_range(-1.0..1.0));
        let err = gradcheck::check(&mut enc, &RgbImage::new(4, 4), &patches, &probe);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn state_round_trips() {
        let grid = PatchGridConfig::desk();
        let ctx = EncoderContext { grid, embed_dim: 8, seed: 3 };
        let enc = LinearPatchEncoder::build(&ctx, &Value::Null).unwrap();
        let back = LinearPatchEncoder::build(&ctx, &enc.state()).unwrap();
        assert_eq!(back.proj, enc.proj);
        let bad = EncoderContext { embed_dim: 9, ..ctx };
        assert!(LinearPatchEncoder::build(&bad, &enc.state()).is_err());
    }
}
