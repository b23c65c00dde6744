//! Augmentation of image-level labeled datasets with controlled generation
//! and confidence-based selection.
//!
//! The flow is: train a patch classifier on the original images, generate
//! one or more synthetic candidates per original (prompted by its labels and
//! conditioned on an edge or pose map), keep the candidates whose confident
//! predictions are a non-empty subset of their source's labels, and append
//! them to the original dataset.

pub mod classifier;
pub mod data;
pub mod detect;
pub mod error;
pub mod generate;
pub mod harness;
pub mod registry;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod shapes;

pub use error::{Error, Result};
