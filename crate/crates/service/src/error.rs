use lesion_triage_core::DiseaseClass;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("upload exceeds the {limit}-byte limit")]
    PayloadTooLarge { limit: usize },
    #[error("invalid questionnaire field `{0}`")]
    InvalidQuestionnaire(String),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("record `{0}` is not augmented")]
    NotAugmented(String),
    #[error("record `{0}` has already been reviewed")]
    AlreadyReviewed(String),
    #[error("invalid time range: from is after to")]
    InvalidRange,
    #[error("education content missing for class `{0}`")]
    MissingContent(DiseaseClass),
    #[error("invalid education content: {0}")]
    InvalidContent(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("store: {0}")]
    Store(#[from] rusqlite::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model: {0}")]
    Model(#[from] lesion_triage_vision::VisionError),
}

impl ServiceError {
    /// Stable machine-readable error name used in JSON bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UndecodableImage(_) => "UndecodableImage",
            ServiceError::PayloadTooLarge { .. } => "PayloadTooLarge",
            ServiceError::InvalidQuestionnaire(_) => "InvalidQuestionnaire",
            ServiceError::NotFound(_) => "NotFound",
            ServiceError::NotAugmented(_) => "NotAugmented",
            ServiceError::AlreadyReviewed(_) => "AlreadyReviewed",
            ServiceError::InvalidRange => "InvalidRange",
            ServiceError::MissingContent(_) => "MissingContent",
            ServiceError::InvalidContent(_) => "InvalidContent",
            ServiceError::Unauthorized => "Unauthorized",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Config(_) => "Config",
            ServiceError::Store(_) => "Store",
            ServiceError::Io(_) => "Io",
            ServiceError::Model(_) => "Model",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
