//! Pluggable human-pose backends. No pose estimator ships here; the
//! `unavailable` backend makes callers fall back to edge maps.

use image::{Rgb, RgbImage};
use serde_json::Value;

use crate::error::Result;
use crate::registry::{param, Registry};

#[derive(Debug, Clone, PartialEq)]
pub enum PoseEstimate {
    /// The backend cannot run here.
    Unavailable,
    NoPerson,
    Rendered(RgbImage),
}

pub trait PoseBackend: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, pixels: &RgbImage) -> Result<PoseEstimate>;
}

pub struct UnavailablePose;

impl PoseBackend for UnavailablePose {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn estimate(&self, _: &RgbImage) -> Result<PoseEstimate> {
        Ok(PoseEstimate::Unavailable)
    }
}

/// Test backend: renders a constant colour at the input's size, or reports
/// no person.
pub struct ConstantStubPose {
    pub color: [u8; 3],
    pub person: bool,
}

impl PoseBackend for ConstantStubPose {
    fn name(&self) -> &str {
        "constant-stub"
    }

    fn estimate(&self, pixels: &RgbImage) -> Result<PoseEstimate> {
        if !self.person {
            return Ok(PoseEstimate::NoPerson);
        }
        let (w, h) = pixels.dimensions();
        Ok(PoseEstimate::Rendered(RgbImage::from_pixel(w, h, Rgb(self.color))))
    }
}

pub fn pose_registry() -> Registry<dyn PoseBackend> {
    let mut reg: Registry<dyn PoseBackend> = Registry::new("pose backend");
    reg.register("unavailable", |_, _| Ok(Box::new(UnavailablePose)));
    reg.register("constant-stub", |_, p: &Value| {
        Ok(Box::new(ConstantStubPose {
            color: param(p, "color")?.unwrap_or([255, 255, 255]),
            person: param(p, "person")?.unwrap_or(true),
        }))
    });
    reg
}
