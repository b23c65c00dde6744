//! Candidate generation: prompt from labels, conditioning map from the
//! detector branch, then one call to a generator backend.

mod http;
mod procedural;

use std::fmt;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{LabelSet, LabeledImage, Provenance};
use crate::detect::{DetectionMap, Detectors};
use crate::error::{Error, Result};
use crate::registry::{param, Registry};
use crate::seed::derive_seed;

pub use http::{DiffusionClient, DiffusionClientConfig, ENDPOINT_ENV};
pub use procedural::{procedural_generate, ProceduralGenerator};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt(String);

impl Prompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `"a photo of "` followed by the class names, sorted and comma-separated.
pub fn prompt_from_labels(labels: &LabelSet) -> Result<Prompt> {
    let mut names = labels.names();
    if names.is_empty() {
        return Err(Error::EmptyLabels("cannot build a prompt for no classes".into()));
    }
    names.sort();
    Ok(Prompt(format!("a photo of {}", names.join(", "))))
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub source: LabeledImage,
    pub map: DetectionMap,
    pub prompt: Prompt,
    pub steps: u32,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(
        source: LabeledImage,
        map: DetectionMap,
        prompt: Prompt,
        steps: u32,
        seed: u64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if map.dimensions() != source.dimensions() {
            return Err(Error::Shape(format!(
                "detection map {:?} does not match source {:?}",
                map.dimensions(),
                source.dimensions()
            )));
        }
        Ok(Self {
            source,
            map,
            prompt,
            steps,
            seed,
        })
    }
}

/// Backend output. `content` is the set of classes actually rendered, when
/// the backend knows it (the procedural generator does; a diffusion service
/// does not).
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub pixels: RgbImage,
    pub content: Option<LabelSet>,
}

pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<Generated>;
}

pub fn generator_registry() -> Registry<dyn GeneratorBackend> {
    let mut reg: Registry<dyn GeneratorBackend> = Registry::new("generator backend");
    reg.register("procedural", |_, p: &Value| {
        let noise_rate: f64 = param(p, "noise_rate")?.unwrap_or(0.0);
        Ok(Box::new(ProceduralGenerator::new(noise_rate)?))
    });
    reg.register("diffusion-http", |_, p: &Value| {
        let mut cfg = DiffusionClientConfig::from_env();
        if let Some(url) = param::<String>(p, "url")? {
            cfg.url = Some(url);
        }
        if let Some(t) = param(p, "timeout_secs")? {
            cfg.timeout_secs = t;
        }
        if let Some(r) = param(p, "retries")? {
            cfg.retries = r;
        }
        if let Some(b) = param(p, "backoff_ms")? {
            cfg.backoff_ms = b;
        }
        Ok(Box::new(DiffusionClient::new(cfg)?))
    });
    reg
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub steps: u32,
    pub seed_base: u64,
    pub passes: u32,
    pub parallelism: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            seed_base: 0,
            passes: 1,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub image: LabeledImage,
    pub pass: u32,
    /// Rendered classes when the backend reports them.
    pub content: Option<LabelSet>,
    pub map_warning: Option<String>,
}

pub fn candidate_id(source_id: &str, pass: u32) -> String {
    format!("{source_id}~aug{pass}")
}

/// One synthetic candidate for `src`. Labels are provisionally copied from
/// the source; selection replaces them later.
pub fn generate_candidate(
    src: &LabeledImage,
    backend: &dyn GeneratorBackend,
    detectors: &Detectors,
    steps: u32,
    seed: u64,
    pass: u32,
) -> Result<Candidate> {
    if src.provenance != Provenance::Original {
        return Err(Error::Config(format!(
            "`{}` is not an original image",
            src.id
        )));
    }
    let map = detectors.detect(&src.pixels, &src.labels)?;
    let map_warning = map.warning.clone();
    let prompt = prompt_from_labels(&src.labels)?;
    let req = GenerationRequest::new(src.clone(), map, prompt, steps, seed)?;
    let out = backend.generate(&req)?;
    if out.pixels.dimensions() != src.dimensions() {
        return Err(Error::Backend {
            backend: backend.name().to_owned(),
            message: format!(
                "returned {:?} pixels for a {:?} source",
                out.pixels.dimensions(),
                src.dimensions()
            ),
        });
    }
    let image = LabeledImage {
        id: candidate_id(&src.id, pass),
        pixels: out.pixels,
        labels: src.labels.clone(),
        provenance: Provenance::Synthetic,
        source_id: Some(src.id.clone()),
        seed: Some(seed),
    };
    Ok(Candidate {
        image,
        pass,
        content: out.content,
        map_warning,
    })
}

/// Generates `passes` candidates per source with bounded parallelism. Output
/// order is pass-major, then source order, regardless of completion order.
pub fn generate_all(
    sources: &[LabeledImage],
    backend: &dyn GeneratorBackend,
    detectors: &Detectors,
    cfg: &GenerationConfig,
) -> Result<Vec<Candidate>> {
    let jobs: Vec<(u32, &LabeledImage)> = (0..cfg.passes)
        .flat_map(|pass| sources.iter().map(move |s| (pass, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(pass, src)| {
                let seed = derive_seed(cfg.seed_base, &src.id, *pass);
                generate_candidate(src, backend, detectors, cfg.steps, seed, *pass)
            })
            .collect()
    })
}
