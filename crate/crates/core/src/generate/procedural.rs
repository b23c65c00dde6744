//! Deterministic stand-in for a diffusion model on the shapes corpus.
//!
//! Re-renders the source's classes with fresh jitter. With probability
//! `noise_rate` one present class is drawn as an absent class instead,
//! which mimics a generator that drifts away from its prompt.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{Generated, GenerationRequest, GeneratorBackend};
use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::shapes::{self, Shape};

pub struct ProceduralGenerator {
    noise_rate: f64,
}

impl ProceduralGenerator {
    pub fn new(noise_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must lie in [0, 1], got {noise_rate}"
            )));
        }
        Ok(Self { noise_rate })
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }
}

impl GeneratorBackend for ProceduralGenerator {
    fn name(&self) -> &str {
        "procedural"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generated> {
        let (pixels, content) = procedural_generate(req, self.noise_rate)?;
        Ok(Generated {
            pixels,
            content: Some(content),
        })
    }
}

/// Returns the rendered image and the classes actually drawn.
pub fn procedural_generate(req: &GenerationRequest, noise_rate: f64) -> Result<(RgbImage, LabelSet)> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Config(format!(
            "noise_rate must lie in [0, 1], got {noise_rate}"
        )));
    }
    let labels = &req.source.labels;
    let cats = labels.categories();
    let shape_of = |idx: usize| {
        Shape::from_name(cats.name(idx)).ok_or_else(|| {
            Error::Config(format!(
                "`{}` is not a shapes-corpus class; the procedural generator cannot render it",
                cats.name(idx)
            ))
        })
    };
    if labels.is_empty() {
        return Err(Error::EmptyLabels(format!(
            "source `{}` has no classes to render",
            req.source.id
        )));
    }
    let mut content: Vec<usize> = labels.indices().collect();
    for &i in &content {
        shape_of(i)?;
    }

    let mut r = rng(req.seed);
    let corrupt = r.gen::<f64>() < noise_rate;
    if corrupt {
        let absent: Vec<usize> = (0..cats.len())
            .filter(|i| !labels.contains_index(*i) && Shape::from_name(cats.name(*i)).is_some())
            .collect();
        if let Some(&replacement) = absent.choose(&mut r) {
            let victim = r.gen_range(0..content.len());
            content[victim] = replacement;
        }
    }

    let (w, h) = req.source.dimensions();
    let shapes: Vec<Shape> = content.iter().map(|&i| shape_of(i)).collect::<Result<_>>()?;
    let background = shapes::noise_background(w, h, &mut r);
    let placements = shapes::place(&shapes, w, h, &mut r).ok_or_else(|| {
        Error::Image(format!("cannot fit {} shapes on a {w}x{h} canvas", shapes.len()))
    })?;
    let pixels = shapes::render(&background, &placements);
    Ok((pixels, LabelSet::from_indices(cats, content)))
}
