use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum VisionError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("mask is not binary: {0}")]
    NonBinaryMask(String),
    #[error("model not loaded from {0}")]
    ModelNotLoaded(PathBuf),
    #[error("augmented record `{0}` has not been expert-verified")]
    UnverifiedAugmentedRecord(String),
    #[error("record `{0}` is not usable for training (unlabeled or rejected)")]
    IneligibleRecord(String),
    #[error("cannot decode image {path}: {reason}")]
    UndecodableImage { path: PathBuf, reason: String },
    #[error("model exposes no convolutional layer")]
    NoConvLayer,
    #[error("subject mask is empty")]
    EmptySubjectMask,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<VisionError>,
    },
    #[error("image `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<VisionError>,
    },
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VisionError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        VisionError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn for_image(self, id: impl Into<String>) -> Self {
        VisionError::Image {
            id: id.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = VisionError> = std::result::Result<T, E>;

/// Decodes any supported image file into RGB.
pub fn load_rgb(path: impl Into<PathBuf>) -> Result<image::RgbImage> {
    let path = path.into();
    image::open(&path)
        .map(|i| i.to_rgb8())
        .map_err(|e| VisionError::UndecodableImage {
            reason: e.to_string(),
            path,
        })
}
