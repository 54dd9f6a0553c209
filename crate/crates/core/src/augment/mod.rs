//! Layered image augmentation.
//!
//! Two stages. First, lesion patterns are cut out of labeled clinical images
//! ([`extract_pattern`]) and composited onto non-diseased base images with an
//! explicit [`OverlayRecipe`] ([`compose_overlay`]); [`balance_classes`] drives
//! this to even out per-class counts. Every composite enters the manifest as
//! `Unverified` and needs an expert verdict before it can be trained on.
//! Second, [`random_transform`] applies seeded photometric and geometric
//! jitter online, once per image per epoch.

mod balance;
mod overlay;
mod pattern;
mod transform;

pub use balance::{
    balance_classes, balance_classes_with, BaseImage, Balanced, GeneratedImage, PatternGenerator,
    PatternLibrary,
};
pub use overlay::{
    complexion_shift_toward, compose_overlay, Composite, OverlayRecipe, DEFAULT_COMPLEXION_WEIGHT,
    DEFAULT_FEATHER_PX,
};
pub use pattern::{extract_pattern, LesionPattern, MIN_PATTERN_COVERAGE};
pub use transform::{apply_transform, random_transform, TransformConfig, TransformParams};

use crate::class::DiseaseClass;
use crate::raster::DimensionMismatch;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("lesion mask is empty")]
    EmptyMask,
    #[error(transparent)]
    DimensionMismatch(#[from] DimensionMismatch),
    #[error("lesion mask covers only {0:.4} of its bounding box")]
    SparseMask(f64),
    #[error("patterns cannot be taken from non-diseased images")]
    NonDiseasedSource,
    #[error("overlay base must be a non-diseased record, got `{0}`")]
    BaseNotNonDiseased(String),
    #[error("placement centre ({0:.3}, {1:.3}) is outside the base subject mask")]
    PlacementOutsideSubject(f64, f64),
    #[error("transformed pattern {pattern:?} does not fit base {base:?}")]
    PatternLargerThanBase { pattern: (u32, u32), base: (u32, u32) },
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("invalid transform config: {0}")]
    InvalidTransformConfig(String),
    #[error("not enough bases or patterns to augment class `{0}`")]
    InsufficientSources(DiseaseClass),
    #[error("class `{class}` already has {current} records, above target {target}")]
    TargetBelowCurrent {
        class: DiseaseClass,
        current: usize,
        target: usize,
    },
}
