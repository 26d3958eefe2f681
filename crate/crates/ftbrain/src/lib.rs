//! Entropy-guided slice selection and layer-wise transfer learning for
//! volumetric image classification, built on a self-contained CPU tensor
//! core.
//!
//! The pipeline: synthesize or load volumes, rank axial slices by intensity
//! entropy, train a small VGG-style network on the selected slices with a
//! chosen freeze depth, evaluate subject-wise cross-validation folds, test
//! accuracy trends across freeze depths, and project class weights back
//! into activation heatmaps.
//!
//! Everything is seeded and single-threaded by default: the same inputs and
//! seeds produce byte-identical artifacts.

pub mod cam;
pub mod cli;
pub mod dataio;
pub mod entropy;
pub mod error;
pub mod model;
pub mod numcore;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
