//! JSON Lines image manifests.
//!
//! One JSON object per line. Known keys are written in a fixed order and any
//! unknown keys are carried through untouched, so a canonically formatted file
//! survives `load_manifest` followed by `save_manifest` byte for byte.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::class::DiseaseClass;

pub const CURRENT_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("unknown class token `{0}`")]
    UnknownClass(String),
}

/// Record label. `Unlabeled` records may live in a manifest but cannot be split
/// or trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(DiseaseClass),
    Unlabeled,
}

impl Label {
    pub fn class(self) -> Option<DiseaseClass> {
        match self {
            Label::Class(c) => Some(c),
            Label::Unlabeled => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Class(c) => c.token(),
            Label::Unlabeled => "unlabeled",
        }
    }
}

impl FromStr for Label {
    type Err = crate::class::UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "unlabeled" {
            Ok(Label::Unlabeled)
        } else {
            s.parse().map(Label::Class)
        }
    }
}

impl From<DiseaseClass> for Label {
    fn from(c: DiseaseClass) -> Self {
        Label::Class(c)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let token = String::deserialize(deserializer)?;
        token.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $token)] $variant),+
        }

        impl $name {
            pub fn token(self) -> &'static str {
                match self { $($name::$variant => $token),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($token => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }
    };
}

token_enum! {
    /// Channel an image entered the collection through.
    Source {
        Clinician => "clinician",
        WebScraped => "web",
        AppSourced => "app",
        Augmented => "augmented",
    }
}

token_enum! {
    Verification {
        Unverified => "unverified",
        ExpertVerified => "verified",
        Rejected => "rejected",
    }
}

token_enum! {
    SplitTag {
        Unassigned => "unassigned",
        Train => "train",
        Validation => "val",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_note: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Provenance {
    pub fn new(source: Source) -> Self {
        Self {
            source,
            origin_note: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    /// Image location, relative to the manifest's directory.
    pub path: String,
    pub label: Label,
    pub provenance: Provenance,
    pub verification: Verification,
    pub split: SplitTag,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_id: Option<String>,
    /// Optional binary subject mask (background vs subject).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    /// Optional binary lesion mask used for pattern extraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_mask_path: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        label: Label,
        source: Source,
        width_px: u32,
        height_px: u32,
    ) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            label,
            provenance: Provenance::new(source),
            verification: Verification::Unverified,
            split: SplitTag::Unassigned,
            width_px,
            height_px,
            base_id: None,
            recipe_id: None,
            mask_path: None,
            lesion_mask_path: None,
            extra: Map::new(),
        }
    }

    pub fn class(&self) -> Option<DiseaseClass> {
        self.label.class()
    }

    pub fn is_augmented(&self) -> bool {
        self.provenance.source == Source::Augmented
    }

    /// Labeled, not rejected, and, if augmented, signed off by an expert.
    pub fn is_training_eligible(&self) -> bool {
        self.class().is_some()
            && self.verification != Verification::Rejected
            && (!self.is_augmented() || self.verification == Verification::ExpertVerified)
    }

    fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(format!("record `{}` has a zero dimension", self.id));
        }
        if self.is_augmented() && (self.base_id.is_none() || self.recipe_id.is_none()) {
            return Err(format!(
                "augmented record `{}` must carry base_id and recipe_id",
                self.id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub manifest_version: u32,
    /// Directory that relative record paths resolve against.
    pub root: Option<PathBuf>,
    header: Option<Map<String, Value>>,
}

impl Dataset {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        Self {
            records,
            manifest_version: CURRENT_MANIFEST_VERSION,
            root: None,
            header: None,
        }
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = Some(root.into());
        self
    }

    /// A dataset holding `records`, inheriting this dataset's version and root.
    pub fn derive(&self, records: Vec<ImageRecord>) -> Self {
        Self {
            records,
            manifest_version: self.manifest_version,
            root: self.root.clone(),
            header: self.header.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        match &self.root {
            Some(root) => root.join(relative),
            None => PathBuf::from(relative),
        }
    }

    pub fn check_unique_ids(&self) -> Result<(), ManifestError> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(ManifestError::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    /// Decodes every referenced image and checks its recorded dimensions.
    pub fn verify_images(&self) -> Result<(), ManifestError> {
        for r in &self.records {
            let path = self.resolve(&r.path);
            let (w, h) = image::image_dimensions(&path).map_err(|e| {
                ManifestError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                ))
            })?;
            if (w, h) != (r.width_px, r.height_px) {
                return Err(ManifestError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!(
                        "{}: decoded {w}x{h}, manifest says {}x{}",
                        path.display(),
                        r.width_px,
                        r.height_px
                    ),
                )));
            }
        }
        Ok(())
    }
}

/// Per-class counts of labeled records. All six classes are always present.
pub fn class_distribution(dataset: &Dataset) -> BTreeMap<DiseaseClass, usize> {
    let mut counts: BTreeMap<DiseaseClass, usize> =
        DiseaseClass::ALL.iter().map(|c| (*c, 0)).collect();
    for class in dataset.records.iter().filter_map(ImageRecord::class) {
        *counts.entry(class).or_default() += 1;
    }
    counts
}

pub fn parse_manifest(text: &str) -> Result<Dataset, ManifestError> {
    let mut dataset = Dataset::new(Vec::new());
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| ManifestError::MalformedLine { line_no, reason };
        let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(malformed("expected a JSON object".into()));
        };
        if dataset.records.is_empty() && dataset.header.is_none() && is_header(&obj) {
            dataset.manifest_version = obj["manifest_version"]
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| malformed("manifest_version must be a small integer".into()))?;
            dataset.header = Some(obj);
            continue;
        }
        if let Some(label) = obj.get("label").and_then(Value::as_str) {
            if label.parse::<Label>().is_err() {
                return Err(ManifestError::UnknownClass(label.to_string()));
            }
        }
        let record: ImageRecord =
            serde_json::from_value(Value::Object(obj)).map_err(|e| malformed(e.to_string()))?;
        record.check().map_err(malformed)?;
        if !seen.insert(record.id.clone()) {
            return Err(ManifestError::DuplicateId(record.id));
        }
        dataset.records.push(record);
    }
    Ok(dataset)
}

fn is_header(obj: &Map<String, Value>) -> bool {
    obj.contains_key("manifest_version") && !obj.contains_key("id")
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut dataset = parse_manifest(&text)?;
    dataset.root = Some(
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    );
    Ok(dataset)
}

/// Canonical text form: optional header line, then one record per line, each
/// terminated by `\n`.
pub fn render_manifest(dataset: &Dataset) -> String {
    let mut out = String::new();
    if let Some(header) = &dataset.header {
        let mut header = header.clone();
        header.insert("manifest_version".into(), dataset.manifest_version.into());
        out.push_str(&Value::Object(header).to_string());
        out.push('\n');
    }
    for r in &dataset.records {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn save_manifest(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    fs::write(path, render_manifest(dataset))?;
    Ok(())
}

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a half-written manifest.
pub fn save_manifest_atomic(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "manifest path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(render_manifest(dataset).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = concat!(
        r#"{"id":"a1","path":"img/a1.png","label":"warts","provenance":{"source":"clinician","origin_note":"LK"},"verification":"verified","split":"unassigned","width_px":64,"height_px":48,"site":"north"}"#,
        "\n",
        r#"{"id":"a2","path":"img/a2.png","label":"syphilis","provenance":{"source":"augmented"},"verification":"unverified","split":"train","width_px":64,"height_px":64,"base_id":"b9","recipe_id":"r1","zz":{"k":[1,2]},"aa":true}"#,
        "\n",
        r#"{"id":"a3","path":"img/a3.png","label":"unlabeled","provenance":{"source":"app"},"verification":"unverified","split":"unassigned","width_px":10,"height_px":10}"#,
        "\n",
    );

    #[test]
    fn canonical_round_trip_preserves_unknown_keys() {
        let ds = parse_manifest(CANONICAL).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[0].extra["site"], "north");
        assert_eq!(render_manifest(&ds), CANONICAL);
    }

    #[test]
    fn header_line_round_trips() {
        let text = format!("{}\n{}", r#"{"manifest_version":3,"note":"x"}"#, CANONICAL);
        let ds = parse_manifest(&text).unwrap();
        assert_eq!(ds.manifest_version, 3);
        assert_eq!(render_manifest(&ds), text);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let ds = parse_manifest("").unwrap();
        assert!(ds.is_empty());
        assert!(class_distribution(&ds).values().all(|&c| c == 0));
    }

    #[test]
    fn one_record_per_class() {
        let text: String = DiseaseClass::ALL
            .iter()
            .map(|c| {
                format!(
                    r#"{{"id":"{c}","path":"{c}.png","label":"{c}","provenance":{{"source":"web"}},"verification":"unverified","split":"unassigned","width_px":8,"height_px":8}}"#
                ) + "\n"
            })
            .collect();
        let ds = parse_manifest(&text).unwrap();
        assert!(class_distribution(&ds).values().all(|&c| c == 1));
    }

    #[test]
    fn reports_errors() {
        let bad_json = "{\"id\":\n";
        assert!(matches!(
            parse_manifest(bad_json),
            Err(ManifestError::MalformedLine { line_no: 1, .. })
        ));

        let line = CANONICAL.lines().next().unwrap();
        let dup = format!("{line}\n{line}\n");
        assert!(matches!(parse_manifest(&dup), Err(ManifestError::DuplicateId(id)) if id == "a1"));

        let unknown = line.replace("\"warts\"", "\"mpox\"");
        assert!(matches!(parse_manifest(&unknown), Err(ManifestError::UnknownClass(t)) if t == "mpox"));

        let missing = line.replace(r#""width_px":64,"#, "");
        assert!(matches!(
            parse_manifest(&missing),
            Err(ManifestError::MalformedLine { line_no: 1, .. })
        ));

        let augmented_without_base = CANONICAL
            .lines()
            .nth(1)
            .unwrap()
            .replace(r#""base_id":"b9","#, "");
        assert!(matches!(
            parse_manifest(&augmented_without_base),
            Err(ManifestError::MalformedLine { .. })
        ));
    }

    #[test]
    fn training_eligibility() {
        let ds = parse_manifest(CANONICAL).unwrap();
        assert!(ds.records[0].is_training_eligible());
        assert!(!ds.records[1].is_training_eligible());
        assert!(!ds.records[2].is_training_eligible());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let ds = parse_manifest(CANONICAL).unwrap();
        save_manifest_atomic(&ds, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), CANONICAL);
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.root.as_deref(), Some(dir.path()));
        assert_eq!(back.records, ds.records);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
