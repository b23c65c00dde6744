//! Conditioning maps for controlled generation: an edge map by default, a
//! human-pose rendering when the image is labeled `person`.

mod canny;
mod pose;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::LabelSet;
use crate::error::{Error, Result};

pub use canny::{canny_edges, CannyParams};
pub use pose::{pose_registry, ConstantStubPose, PoseBackend, PoseEstimate, UnavailablePose};

pub const PERSON: &str = "person";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    CannyEdge,
    HumanPose,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::CannyEdge => "canny_edge",
            DetectorKind::HumanPose => "human_pose",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapPixels {
    Gray(GrayImage),
    Rgb(RgbImage),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub kind: DetectorKind,
    pub pixels: MapPixels,
    /// Set when the requested detector could not run and a fallback was used.
    pub warning: Option<String>,
}

impl DetectionMap {
    pub fn dimensions(&self) -> (u32, u32) {
        match &self.pixels {
            MapPixels::Gray(g) => g.dimensions(),
            MapPixels::Rgb(c) => c.dimensions(),
        }
    }

    /// PNG encoding (single channel for edge maps).
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        let res = match &self.pixels {
            MapPixels::Gray(g) => g.write_to(&mut buf, image::ImageFormat::Png),
            MapPixels::Rgb(c) => c.write_to(&mut buf, image::ImageFormat::Png),
        };
        res.map_err(|e| Error::Image(e.to_string()))?;
        Ok(buf.into_inner())
    }
}

pub fn select_detector(labels: &LabelSet) -> DetectorKind {
    if labels.contains(PERSON) {
        DetectorKind::HumanPose
    } else {
        DetectorKind::CannyEdge
    }
}

pub fn edge_map(pixels: &RgbImage, params: &CannyParams) -> Result<DetectionMap> {
    Ok(DetectionMap {
        kind: DetectorKind::CannyEdge,
        pixels: MapPixels::Gray(canny_edges(pixels, params)?),
        warning: None,
    })
}

pub fn pose_map(
    pixels: &RgbImage,
    backend: &dyn PoseBackend,
    fallback: &CannyParams,
) -> Result<DetectionMap> {
    let estimate = backend.estimate(pixels).map_err(|e| Error::Backend {
        backend: backend.name().to_owned(),
        message: e.to_string(),
    })?;
    match estimate {
        PoseEstimate::Unavailable => {
            let msg = format!(
                "pose backend `{}` unavailable, using canny edges",
                backend.name()
            );
            log::warn!("{msg}");
            let mut map = edge_map(pixels, fallback)?;
            map.warning = Some(msg);
            Ok(map)
        }
        PoseEstimate::NoPerson => {
            let (w, h) = pixels.dimensions();
            Ok(DetectionMap {
                kind: DetectorKind::HumanPose,
                pixels: MapPixels::Rgb(RgbImage::new(w, h)),
                warning: None,
            })
        }
        PoseEstimate::Rendered(map) => {
            if map.dimensions() != pixels.dimensions() {
                return Err(Error::Backend {
                    backend: backend.name().to_owned(),
                    message: format!(
                        "pose map is {:?}, image is {:?}",
                        map.dimensions(),
                        pixels.dimensions()
                    ),
                });
            }
            Ok(DetectionMap {
                kind: DetectorKind::HumanPose,
                pixels: MapPixels::Rgb(map),
                warning: None,
            })
        }
    }
}

/// The detectors available to one pipeline run.
pub struct Detectors {
    pub canny: CannyParams,
    pub pose: Box<dyn PoseBackend>,
}

impl Default for Detectors {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            pose: Box::new(UnavailablePose),
        }
    }
}

impl Detectors {
    /// Picks the detector from the labels and produces the map.
    pub fn detect(&self, pixels: &RgbImage, labels: &LabelSet) -> Result<DetectionMap> {
        match select_detector(labels) {
            DetectorKind::HumanPose => pose_map(pixels, self.pose.as_ref(), &self.canny),
            DetectorKind::CannyEdge => edge_map(pixels, &self.canny),
        }
    }
}
