//! Client for an external controlled-diffusion service.
//!
//! `POST <url>` with
//! `{image, control_map, control_kind, prompt, steps, seed}` where both
//! images are base64 PNG; the reply is `{image}` (base64 PNG). Transport
//! errors and 5xx replies are retried with exponential backoff.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{Generated, GenerationRequest, GeneratorBackend};
use crate::error::{Error, Result};

pub const ENDPOINT_ENV: &str = "SYNTHAUG_DIFFUSION_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionClientConfig {
    pub url: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for DiffusionClientConfig {
    fn default() -> Self {
        Self {
            url: None,
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

impl DiffusionClientConfig {
    pub fn from_env() -> Self {
        Self {
            url: std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()),
            ..Self::default()
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image: String,
    control_map: String,
    control_kind: &'a str,
    prompt: &'a str,
    steps: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    image: String,
}

pub struct DiffusionClient {
    url: String,
    cfg: DiffusionClientConfig,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl DiffusionClient {
    pub fn new(cfg: DiffusionClientConfig) -> Result<Self> {
        let url = cfg.url.clone().ok_or_else(|| {
            Error::Config(format!(
                "diffusion-http backend needs a `url` parameter or {ENDPOINT_ENV}"
            ))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self { url, cfg, http })
    }

    fn attempt(&self, body: &WireRequest<'_>) -> std::result::Result<RgbImage, Attempt> {
        let resp = self
            .http
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("server returned {status}: {text}")));
        }
        let reply: WireResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("malformed reply: {e}")))?;
        decode_png(&reply.image).map_err(|e| Attempt::Fatal(e.to_string()))
    }
}

pub(crate) fn encode_png(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub(crate) fn decode_png(b64: &str) -> Result<RgbImage> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::Image(format!("bad base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("bad png: {e}")))?;
    Ok(img.to_rgb8())
}

impl GeneratorBackend for DiffusionClient {
    fn name(&self) -> &str {
        "diffusion-http"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Generated> {
        let body = WireRequest {
            image: encode_png(&req.source.pixels)?,
            control_map: STANDARD.encode(req.map.to_png()?),
            control_kind: req.map.kind.as_str(),
            prompt: req.prompt.as_str(),
            steps: req.steps,
            seed: req.seed,
        };
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (n - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(pixels) => {
                    return Ok(Generated {
                        pixels,
                        content: None,
                    })
                }
                Err(Attempt::Fatal(msg)) => {
                    return Err(Error::Backend {
                        backend: self.name().to_owned(),
                        message: msg,
                    })
                }
                Err(Attempt::Retry(msg)) => {
                    log::warn!("diffusion request for `{}` failed (attempt {}): {msg}", req.source.id, n + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Backend {
            backend: self.name().to_owned(),
            message: format!("gave up after {attempts} attempts: {last}"),
        })
    }
}
