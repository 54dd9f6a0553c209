use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The six triage categories: five penile diseases plus the non-diseased class.
///
/// The declaration order is the canonical class order. It is used for tensor
/// indices, report row order and argmax tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiseaseClass {
    GenitalWarts,
    HerpesEruption,
    PenileCancer,
    PenileCandidiasis,
    SyphiliticChancre,
    NonDiseased,
}

pub const NUM_CLASSES: usize = 6;

impl DiseaseClass {
    pub const ALL: [DiseaseClass; NUM_CLASSES] = [
        DiseaseClass::GenitalWarts,
        DiseaseClass::HerpesEruption,
        DiseaseClass::PenileCancer,
        DiseaseClass::PenileCandidiasis,
        DiseaseClass::SyphiliticChancre,
        DiseaseClass::NonDiseased,
    ];

    /// The five disease classes, excluding [`DiseaseClass::NonDiseased`].
    pub const DISEASES: [DiseaseClass; 5] = [
        DiseaseClass::GenitalWarts,
        DiseaseClass::HerpesEruption,
        DiseaseClass::PenileCancer,
        DiseaseClass::PenileCandidiasis,
        DiseaseClass::SyphiliticChancre,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Short wire token used in manifests, CSV logs and URLs.
    pub fn token(self) -> &'static str {
        match self {
            DiseaseClass::GenitalWarts => "warts",
            DiseaseClass::HerpesEruption => "hsv",
            DiseaseClass::PenileCancer => "cancer",
            DiseaseClass::PenileCandidiasis => "candidiasis",
            DiseaseClass::SyphiliticChancre => "syphilis",
            DiseaseClass::NonDiseased => "none",
        }
    }

    /// Human-readable row label used in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            DiseaseClass::GenitalWarts => "Genital Warts",
            DiseaseClass::HerpesEruption => "Herpes Eruption",
            DiseaseClass::PenileCancer => "Penile Cancer",
            DiseaseClass::PenileCandidiasis => "Penile Candidiasis",
            DiseaseClass::SyphiliticChancre => "Syphilis",
            DiseaseClass::NonDiseased => "Non-Diseased",
        }
    }

    pub fn is_disease(self) -> bool {
        self != DiseaseClass::NonDiseased
    }
}

impl fmt::Display for DiseaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class token `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for DiseaseClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DiseaseClass::ALL
            .into_iter()
            .find(|c| c.token() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}

impl Serialize for DiseaseClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for DiseaseClass {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let token = String::deserialize(deserializer)?;
        token.parse().map_err(serde::de::Error::custom)
    }
}

/// A normalized probability vector over the six classes together with its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    probs: [f64; NUM_CLASSES],
    predicted: DiseaseClass,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbabilityError {
    #[error("probability vector contains a non-finite or negative entry")]
    InvalidEntry,
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
}

impl ClassProbabilities {
    /// Wraps an already-normalized vector. Entries must be finite, in [0, 1],
    /// and sum to one within 1e-6.
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self, ProbabilityError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(ProbabilityError::InvalidEntry);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ProbabilityError::NotNormalized(sum));
        }
        Ok(Self {
            predicted: argmax(&probs),
            probs,
        })
    }

    /// Numerically stable softmax over raw logits.
    pub fn from_logits(logits: &[f64; NUM_CLASSES]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; NUM_CLASSES];
        let mut total = 0.0;
        for (p, l) in probs.iter_mut().zip(logits) {
            *p = (l - max).exp();
            total += *p;
        }
        for p in &mut probs {
            *p /= total;
        }
        Self {
            predicted: argmax(&probs),
            probs,
        }
    }

    pub fn prob(&self, class: DiseaseClass) -> f64 {
        self.probs[class.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.probs
    }

    pub fn predicted(&self) -> DiseaseClass {
        self.predicted
    }

    pub fn confidence(&self) -> f64 {
        self.prob(self.predicted)
    }
}

/// First maximum wins, so ties resolve in canonical class order.
fn argmax(values: &[f64; NUM_CLASSES]) -> DiseaseClass {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if values[i] > values[best] {
            best = i;
        }
    }
    DiseaseClass::ALL[best]
}
