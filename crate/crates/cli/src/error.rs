use lesion_triage_core::augment::AugmentError;
use lesion_triage_core::eval::EvalError;
use lesion_triage_core::manifest::ManifestError;
use lesion_triage_core::split::SplitError;
use lesion_triage_service::ServiceError;
use lesion_triage_vision::VisionError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MODEL: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Other(_) => "internal",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Data(format!("manifest: {e}"))
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        CliError::Data(format!("split: {e}"))
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        CliError::Data(format!("augment: {e}"))
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(format!("eval: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o: {e}"))
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Data(format!("image: {e}"))
    }
}

fn vision_is_data(e: &VisionError) -> bool {
    match e {
        VisionError::EmptyTrainingSet
        | VisionError::NonBinaryMask(_)
        | VisionError::UnverifiedAugmentedRecord(_)
        | VisionError::IneligibleRecord(_)
        | VisionError::UndecodableImage { .. }
        | VisionError::EmptySubjectMask => true,
        VisionError::Stage { source, .. } | VisionError::Image { source, .. } => vision_is_data(source),
        _ => false,
    }
}

impl From<VisionError> for CliError {
    fn from(e: VisionError) -> Self {
        if vision_is_data(&e) {
            CliError::Data(e.to_string())
        } else {
            CliError::Model(e.to_string())
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Model(v) => v.into(),
            ServiceError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
