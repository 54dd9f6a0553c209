use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use lesion_triage_core::DiseaseClass;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Content shipped with the crate, used when no content file is configured.
pub const DEFAULT_CONTENT: &str = include_str!("../content/education.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EducationEntry {
    pub class: DiseaseClass,
    pub class_name: &'static str,
    pub symptoms_text: String,
    pub confirmatory_testing_text: String,
    pub treatment_text: String,
    pub resource_links: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    symptoms: String,
    confirmatory_testing: String,
    #[serde(default)]
    treatment: String,
    #[serde(default)]
    resource_links: Vec<String>,
}

/// Parses a content file and checks that every class has an entry.
pub fn parse_content(text: &str) -> Result<BTreeMap<DiseaseClass, EducationEntry>> {
    let raw: BTreeMap<String, RawEntry> =
        toml::from_str(text).map_err(|e| ServiceError::InvalidContent(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (key, r) in raw {
        let class: DiseaseClass = key
            .parse()
            .map_err(|_| ServiceError::InvalidContent(format!("unknown class key `{key}`")))?;
        if r.symptoms.trim().is_empty() || r.confirmatory_testing.trim().is_empty() {
            return Err(ServiceError::InvalidContent(format!("`{key}` has empty text")));
        }
        if class.is_disease() && r.treatment.trim().is_empty() {
            return Err(ServiceError::InvalidContent(format!("`{key}` has no treatment text")));
        }
        if !class.is_disease() && !r.treatment.trim().is_empty() {
            return Err(ServiceError::InvalidContent(
                "the non-diseased entry holds screening guidance only".into(),
            ));
        }
        if let Some(bad) = r.resource_links.iter().find(|l| !l.starts_with("https://") && !l.starts_with("http://")) {
            return Err(ServiceError::InvalidContent(format!("`{key}` link `{bad}` is not a URL")));
        }
        out.insert(
            class,
            EducationEntry {
                class,
                class_name: class.display_name(),
                symptoms_text: r.symptoms,
                confirmatory_testing_text: r.confirmatory_testing,
                treatment_text: r.treatment,
                resource_links: r.resource_links,
            },
        );
    }
    if let Some(&missing) = DiseaseClass::ALL.iter().find(|c| !out.contains_key(c)) {
        return Err(ServiceError::MissingContent(missing));
    }
    Ok(out)
}

/// Education entries, validated up front and reloadable from their file.
#[derive(Debug)]
pub struct Education {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<DiseaseClass, EducationEntry>>,
}

impl Education {
    pub fn builtin() -> Self {
        Self {
            path: None,
            entries: RwLock::new(parse_content(DEFAULT_CONTENT).expect("bundled content is valid")),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = parse_content(&std::fs::read_to_string(&path)?)?;
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
        })
    }

    /// Re-reads the content file. On error the previous entries stay in place.
    pub fn reload(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let entries = parse_content(&std::fs::read_to_string(path)?)?;
        *self.entries.write().unwrap() = entries;
        Ok(())
    }

    pub fn get(&self, class: DiseaseClass) -> EducationEntry {
        // Validation guarantees every class is present.
        self.entries.read().unwrap()[&class].clone()
    }
}
