use std::path::PathBuf;

use crate::error::{Result, ServiceError};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub model_dir: PathBuf,
    pub store_path: PathBuf,
    pub max_upload_bytes: usize,
    /// Review endpoints answer 401 when unset.
    pub review_token: Option<String>,
    /// Bundled content is used when unset.
    pub education_path: Option<PathBuf>,
    /// Background classification workers; 0 leaves submissions Pending.
    pub workers: usize,
}

impl ServiceConfig {
    pub fn new(model_dir: impl Into<PathBuf>, store_path: impl Into<PathBuf>) -> Self {
        Self {
            model_dir: model_dir.into(),
            store_path: store_path.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            review_token: None,
            education_path: None,
            workers: 1,
        }
    }

    /// Reads `LT_MODEL_DIR`, `LT_STORE_PATH`, `LT_MAX_UPLOAD_BYTES`,
    /// `LT_REVIEW_TOKEN`, `LT_EDUCATION_PATH` and `LT_WORKERS`.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut c = Self::new(
            get("LT_MODEL_DIR").unwrap_or_else(|| "models".into()),
            get("LT_STORE_PATH").unwrap_or_else(|| "lesion-triage.sqlite3".into()),
        );
        if let Some(v) = get("LT_MAX_UPLOAD_BYTES") {
            c.max_upload_bytes = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| ServiceError::Config(format!("LT_MAX_UPLOAD_BYTES=`{v}` is not a positive integer")))?;
        }
        c.review_token = get("LT_REVIEW_TOKEN").filter(|t| !t.is_empty());
        c.education_path = get("LT_EDUCATION_PATH").map(PathBuf::from);
        if let Some(v) = get("LT_WORKERS") {
            c.workers = v
                .parse()
                .map_err(|_| ServiceError::Config(format!("LT_WORKERS=`{v}` is not an integer")))?;
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_lookup() {
        let env: HashMap<&str, &str> = [
            ("LT_MODEL_DIR", "/m"),
            ("LT_STORE_PATH", "/s.db"),
            ("LT_MAX_UPLOAD_BYTES", "1000"),
            ("LT_REVIEW_TOKEN", "t"),
        ]
        .into();
        let c = ServiceConfig::from_lookup(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.model_dir, PathBuf::from("/m"));
        assert_eq!(c.max_upload_bytes, 1000);
        assert_eq!(c.review_token.as_deref(), Some("t"));
        assert_eq!(c.workers, 1);
        let bad = ServiceConfig::from_lookup(|k| (k == "LT_MAX_UPLOAD_BYTES").then(|| "0".to_string()));
        assert!(matches!(bad, Err(ServiceError::Config(_))));
    }
}
