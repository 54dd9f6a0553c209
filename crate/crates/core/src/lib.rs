//! Core data model and numerics for the lesion triage pipeline.
//!
//! This crate holds everything that does not need a neural network runtime:
//!
//! * [`manifest`]: JSON Lines image manifests, per-class tallies.
//! * [`split`]: stratified, seeded train/validation partitioning.
//! * [`augment`]: lesion pattern extraction, overlay compositing onto
//!   non-diseased base images, and online random transforms.
//! * [`eval`]: one-vs-rest confusion counts, diagnostic metrics with exact
//!   binomial intervals, and report rendering.
//! * [`synth`]: procedural image generators used for desk-scale training
//!   and the test suites.

pub mod augment;
pub mod class;
pub mod eval;
pub mod manifest;
pub mod raster;
pub mod split;
pub mod synth;

pub use class::{ClassProbabilities, DiseaseClass};
pub use manifest::{Dataset, ImageRecord, Label, Provenance, Source, SplitTag, Verification};
pub use raster::{BinaryMask, PixelBox};
