//! Simultaneous Bayesian segmentation and shape classification of
//! overlapping objects in 8-bit grayscale images.
//!
//! Objects are modeled as a marked point process: each point carries a shape
//! template, scale, rotation and an optional template-specific shape
//! parameter. An area-interaction prior penalizes the number of objects and
//! the image area covered more than once, a pixelwise Gaussian likelihood
//! with a minimum-mean rule handles overlaps, and inference runs a
//! reversible-jump MCMC (birth/death, split/merge, template swap) with a
//! Monte Carlo correction for the interaction prior's intractable
//! normalizing constant.
//!
//! The crate also ships a forward simulator, a morphological initializer and
//! a reporting pipeline (MAP summaries, per-object classification
//! probabilities, overlays). See the `examples/` directory for one runnable
//! example per capability, or the `mppseg` binary for the `simulate`, `fit`,
//! `analyze` and `study` commands.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod imageio;
pub mod initializer;
pub mod likelihood;
pub mod prior;
pub mod report;
pub mod sampler;
pub mod seeds;
pub mod simulator;

pub use error::{Error, Result};
