use std::path::Path;

use lesion_triage_core::augment::TransformConfig;
use lesion_triage_vision::{ClsModelConfig, SegModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Seed used when neither the config file nor the command line sets one.
pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_CONFIG_FILE: &str = "lesion-triage.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub split: SplitSettings,
    pub augment: AugmentSettings,
    pub synthetic: SyntheticSettings,
    pub segmenter: SegModelConfig,
    pub classifier: ClsModelConfig,
    pub transforms: TransformConfig,
    pub eval: EvalSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            split: SplitSettings::default(),
            augment: AugmentSettings::default(),
            synthetic: SyntheticSettings::default(),
            segmenter: SegModelConfig::default(),
            classifier: ClsModelConfig::default(),
            transforms: TransformConfig::standard(),
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub fraction: f64,
    pub exclude_augmented: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            fraction: 0.91,
            exclude_augmented: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSettings {
    /// Records per disease class after balancing; the largest class when unset.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub size: u32,
    /// Background blobs in other classes' colours.
    pub distractors: usize,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self { size: 64, distractors: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ci_level: f64,
    pub saliency_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            saliency_threshold: lesion_triage_vision::pipeline::DEFAULT_SALIENCY_THRESHOLD,
        }
    }
}

impl Settings {
    /// Defaults, then the config file, then `key=value` overrides. An explicit
    /// `path` must exist; the default file is optional.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = serde_json::to_value(Settings::default()).expect("settings serialize");
        let file = path.map(Path::to_path_buf).unwrap_or_else(|| DEFAULT_CONFIG_FILE.into());
        match std::fs::read_to_string(&file) {
            Ok(text) => {
                let parsed: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {}", file.display(), e.message())))?;
                let incoming = serde_json::to_value(parsed).expect("toml converts to json");
                merge(&mut tree, incoming, "").map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
            }
            Err(e) if path.is_none() && e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CliError::Usage(format!("{}: {e}", file.display()))),
        }
        for raw in overrides {
            apply_override(&mut tree, raw)?;
        }
        let settings: Settings =
            serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("invalid override: {e}")))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.segmenter.validate().map_err(|e| usage(&e))?;
        self.classifier.validate().map_err(|e| usage(&e))?;
        self.transforms.validate().map_err(|e| usage(&e))?;
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return Err(CliError::Usage(format!("split.fraction {} outside (0, 1)", self.split.fraction)));
        }
        if !(self.eval.ci_level > 0.0 && self.eval.ci_level < 1.0) {
            return Err(CliError::Usage(format!("eval.ci_level {} outside (0, 1)", self.eval.ci_level)));
        }
        if !(self.eval.saliency_threshold > 0.0 && self.eval.saliency_threshold < 1.0) {
            return Err(CliError::Usage(format!(
                "eval.saliency_threshold {} outside (0, 1)",
                self.eval.saliency_threshold
            )));
        }
        if self.synthetic.size < 16 {
            return Err(CliError::Usage("synthetic.size must be at least 16".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        hex::encode(Sha256::digest(json))
    }
}

/// Overlays `incoming` on `tree`, refusing keys the schema does not have.
fn merge(tree: &mut Value, incoming: Value, prefix: &str) -> Result<(), String> {
    let Value::Object(entries) = incoming else {
        *tree = incoming;
        return Ok(());
    };
    for (key, value) in entries {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let slot = tree
            .as_object_mut()
            .and_then(|m| m.get_mut(&key))
            .ok_or_else(|| format!("unknown setting `{path}`"))?;
        if slot.is_object() != value.is_object() && !slot.is_null() {
            return Err(format!("`{path}` has the wrong shape"));
        }
        merge(slot, value, &path)?;
    }
    Ok(())
}

/// Sets a dotted key that must already exist in the schema. The value is read
/// as a TOML literal, falling back to a bare string.
fn apply_override(tree: &mut Value, raw: &str) -> Result<(), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    let mut slot = &mut *tree;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown setting `{key}`")))?;
    }
    if slot.is_object() {
        return Err(CliError::Usage(format!("`{key}` is a section, not a setting")));
    }
    *slot = parse_literal(value.trim());
    Ok(())
}

fn parse_literal(text: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {text}")) {
        Ok(w) => serde_json::to_value(w.v).unwrap_or(Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}
