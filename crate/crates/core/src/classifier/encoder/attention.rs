//! Small self-attention encoder: patch projection plus learned positions,
//! followed by residual blocks of multi-head attention and a ReLU MLP.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{glorot, row_sums, EncoderBackend, EncoderCache, EncoderContext, EncoderInput};
use crate::classifier::{softmax_rows, softmax_rows_backward};
use crate::error::{Error, Result};
use crate::registry::param;
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Shape {
    blocks: usize,
    heads: usize,
    mlp_hidden: usize,
}

struct Block {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    b1: Array2<f64>,
    w2: Array2<f64>,
    b2: Array2<f64>,
}

const BLOCK_PARAMS: usize = 8;

pub struct AttentionEncoder {
    shape: Shape,
    proj: Array2<f64>,
    bias: Array2<f64>,
    pos: Array2<f64>,
    blocks: Vec<Block>,
}

struct BlockCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    x1: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

struct Cache {
    patches: Array2<f64>,
    blocks: Vec<BlockCache>,
}

impl AttentionEncoder {
    pub fn build(ctx: &EncoderContext, params: &Value) -> Result<Self> {
        let e = ctx.embed_dim;
        let shape = Shape {
            blocks: param(params, "blocks")?.unwrap_or(2),
            heads: param(params, "heads")?.unwrap_or(4),
            mlp_hidden: param(params, "mlp_hidden")?.unwrap_or(2 * e),
        };
        if shape.heads == 0 || !e.is_multiple_of(shape.heads) {
            return Err(Error::Config(format!(
                "embed_dim {e} is not divisible by {} heads",
                shape.heads
            )));
        }
        let (s, din, m) = (ctx.grid.num_patches(), ctx.grid.patch_dim(), shape.mlp_hidden);
        let expected: Vec<(usize, usize)> = [(din, e), (1, e), (s, e)]
            .into_iter()
            .chain((0..shape.blocks).flat_map(|_| {
                [(e, e), (e, e), (e, e), (e, e), (e, m), (1, m), (m, e), (1, e)]
            }))
            .collect();

        let weights: Vec<Array2<f64>> = match super::weights_from(params)? {
            Some(w) => {
                let dims: Vec<(usize, usize)> = w.iter().map(|a| a.dim()).collect();
                if dims != expected {
                    return Err(Error::Checkpoint(format!(
                        "attention encoder weights do not fit the configured shape {shape:?}"
                    )));
                }
                w
            }
            None => {
                let mut r = rng(ctx.seed);
                let mut w = vec![
                    glorot(din, e, 1.0, &mut r),
                    Array2::zeros((1, e)),
                    glorot(s, e, 0.1, &mut r),
                ];
                for _ in 0..shape.blocks {
                    w.push(glorot(e, e, 1.0, &mut r));
                    w.push(glorot(e, e, 1.0, &mut r));
                    w.push(glorot(e, e, 1.0, &mut r));
                    w.push(glorot(e, e, 0.2, &mut r));
                    w.push(glorot(e, m, 1.0, &mut r));
                    w.push(Array2::zeros((1, m)));
                    w.push(glorot(m, e, 0.2, &mut r));
                    w.push(Array2::zeros((1, e)));
                }
                w
            }
        };
        let mut it = weights.into_iter();
        let mut next = || it.next().expect("weight count checked above");
        let (proj, bias, pos) = (next(), next(), next());
        let blocks = (0..shape.blocks)
            .map(|_| Block {
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        Ok(Self {
            shape,
            proj,
            bias,
            pos,
            blocks,
        })
    }

    fn head_dim(&self) -> usize {
        self.proj.ncols() / self.shape.heads
    }

    fn block_forward(&self, b: &Block, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = x.dot(&b.wq);
        let k = x.dot(&b.wk);
        let v = x.dot(&b.wv);
        let mut o = Array2::zeros(x.raw_dim());
        let mut attn = Vec::with_capacity(self.shape.heads);
        for h in 0..self.shape.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let a = softmax_rows(&scores);
            o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let x1 = &x + &o.dot(&b.wo);
        let pre = x1.dot(&b.w1) + &b.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = &x1 + &hidden.dot(&b.w2) + &b.b2;
        (
            out,
            BlockCache {
                x,
                q,
                k,
                v,
                attn,
                o,
                x1,
                pre,
                hidden,
            },
        )
    }

    /// Returns dX and pushes this block's parameter gradients in order.
    fn block_backward(&self, b: &Block, c: &BlockCache, d_out: &Array2<f64>, grads: &mut Vec<Array2<f64>>) -> Array2<f64> {
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let d_w2 = c.hidden.t().dot(d_out);
        let d_b2 = row_sums(d_out);
        let mut d_pre = d_out.dot(&b.w2.t());
        d_pre.zip_mut_with(&c.pre, |g, p| {
            if *p <= 0.0 {
                *g = 0.0
            }
        });
        let d_w1 = c.x1.t().dot(&d_pre);
        let d_b1 = row_sums(&d_pre);
        let d_x1 = d_out + &d_pre.dot(&b.w1.t());

        let d_wo = c.o.t().dot(&d_x1);
        let d_o = d_x1.dot(&b.wo.t());
        let mut d_q = Array2::zeros(c.q.raw_dim());
        let mut d_k = Array2::zeros(c.k.raw_dim());
        let mut d_v = Array2::zeros(c.v.raw_dim());
        for (h, a) in c.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_o.slice(cols);
            let d_a = d_oh.dot(&c.v.slice(cols).t());
            d_v.slice_mut(cols).assign(&a.t().dot(&d_oh));
            let d_scores = softmax_rows_backward(a, &d_a) * scale;
            d_q.slice_mut(cols).assign(&d_scores.dot(&c.k.slice(cols)));
            d_k.slice_mut(cols).assign(&d_scores.t().dot(&c.q.slice(cols)));
        }
        let d_wq = c.x.t().dot(&d_q);
        let d_wk = c.x.t().dot(&d_k);
        let d_wv = c.x.t().dot(&d_v);
        let d_x = &d_x1 + &d_q.dot(&b.wq.t()) + d_k.dot(&b.wk.t()) + d_v.dot(&b.wv.t());

        grads.extend([d_wq, d_wk, d_wv, d_wo, d_w1, d_b1, d_w2, d_b2]);
        d_x
    }
}

impl EncoderBackend for AttentionEncoder {
    fn kind(&self) -> &'static str {
        "attention"
    }

    fn embed_dim(&self) -> usize {
        self.proj.ncols()
    }

    fn forward(&self, input: &EncoderInput<'_>) -> Result<(Array2<f64>, EncoderCache)> {
        let p = input.patches;
        if p.ncols() != self.proj.nrows() || p.nrows() != self.pos.nrows() {
            return Err(Error::Shape(format!(
                "patches {:?} do not fit encoder ({} patches of width {})",
                p.dim(),
                self.pos.nrows(),
                self.proj.nrows()
            )));
        }
        let mut x = p.dot(&self.proj) + &self.bias + &self.pos;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, cache) = self.block_forward(b, x);
            caches.push(cache);
            x = next;
        }
        Ok((
            x,
            Box::new(Cache {
                patches: p.clone(),
                blocks: caches,
            }),
        ))
    }

    fn backward(&self, cache: &EncoderCache, d_out: &Array2<f64>) -> Vec<Array2<f64>> {
        let cache = cache.downcast_ref::<Cache>().expect("attention encoder cache");
        let mut block_grads: Vec<Vec<Array2<f64>>> = Vec::with_capacity(self.blocks.len());
        let mut d_x = d_out.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut g = Vec::with_capacity(BLOCK_PARAMS);
            d_x = self.block_backward(b, c, &d_x, &mut g);
            block_grads.push(g);
        }
        let mut grads = vec![cache.patches.t().dot(&d_x), row_sums(&d_x), d_x];
        grads.extend(block_grads.into_iter().rev().flatten());
        grads
    }

    fn params(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.proj, &self.bias, &self.pos];
        for b in &self.blocks {
            v.extend([&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.b1, &b.w2, &b.b2]);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.proj, &mut self.bias, &mut self.pos];
        for b in &mut self.blocks {
            v.extend([
                &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo, &mut b.w1, &mut b.b1, &mut b.w2,
                &mut b.b2,
            ]);
        }
        v
    }

    fn state(&self) -> Value {
        serde_json::json!({
            "blocks": self.shape.blocks,
            "heads": self.shape.heads,
            "mlp_hidden": self.shape.mlp_hidden,
            "weights": self.params(),
        })
    }
}
