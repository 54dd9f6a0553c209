use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgeBand {
    #[serde(rename = "18-30")]
    From18To30,
    #[serde(rename = "31-50")]
    From31To50,
    #[serde(rename = "over50")]
    Over50,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symptom {
    PenilePain,
    PenileDischarge,
    PainBurningUrination,
    NoneOther,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LastContact {
    #[serde(rename = "under1mo")]
    Under1Month,
    #[serde(rename = "1to3mo")]
    OneToThreeMonths,
    #[serde(rename = "over3mo")]
    Over3Months,
    #[serde(rename = "never")]
    Never,
}

macro_rules! ordered {
    ($t:ty, [$($v:expr),+], $labels:expr) => {
        impl $t {
            pub const ALL: &'static [$t] = &[$($v),+];

            pub fn token(self) -> &'static str {
                let i = Self::ALL.iter().position(|&x| x == self).unwrap();
                $labels[i].0
            }

            pub fn label(self) -> &'static str {
                let i = Self::ALL.iter().position(|&x| x == self).unwrap();
                $labels[i].1
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }
    };
}

ordered!(
    AgeBand,
    [AgeBand::From18To30, AgeBand::From31To50, AgeBand::Over50],
    [("18-30", "18-30 years"), ("31-50", "31-50 years"), ("over50", ">50 years")]
);
ordered!(
    Symptom,
    [Symptom::PenilePain, Symptom::PenileDischarge, Symptom::PainBurningUrination, Symptom::NoneOther],
    [
        ("penile_pain", "Penile pain"),
        ("penile_discharge", "Penile discharge"),
        ("pain_burning_urination", "Pain/burning when urinating"),
        ("none_other", "None of the above / other"),
    ]
);
ordered!(
    LastContact,
    [LastContact::Under1Month, LastContact::OneToThreeMonths, LastContact::Over3Months, LastContact::Never],
    [
        ("under1mo", "< 1 month"),
        ("1to3mo", "1-3 months"),
        ("over3mo", "> 3 months"),
        ("never", "Never"),
    ]
);

/// Answers collected alongside each scan. The country is self-reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Questionnaire {
    pub age_band: AgeBand,
    pub country: String,
    pub symptoms: BTreeSet<Symptom>,
    pub last_contact: LastContact,
}

impl Questionnaire {
    /// Parses and validates a JSON questionnaire. Errors name the offending field.
    pub fn parse(json: &str) -> Result<Self, ServiceError> {
        let value: serde_json::Value =
            serde_json::from_str(json).map_err(|_| ServiceError::InvalidQuestionnaire("questionnaire".into()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ServiceError::InvalidQuestionnaire("questionnaire".into()))?;
        for field in ["age_band", "country", "symptoms", "last_contact"] {
            let v = obj.get(field).ok_or_else(|| ServiceError::InvalidQuestionnaire(field.into()))?;
            let ok = match field {
                "age_band" => serde_json::from_value::<AgeBand>(v.clone()).is_ok(),
                "country" => v.is_string(),
                "symptoms" => serde_json::from_value::<Vec<Symptom>>(v.clone()).is_ok(),
                _ => serde_json::from_value::<LastContact>(v.clone()).is_ok(),
            };
            if !ok {
                return Err(ServiceError::InvalidQuestionnaire(field.into()));
            }
        }
        if let Some(extra) = obj.keys().find(|k| !["age_band", "country", "symptoms", "last_contact"].contains(&k.as_str())) {
            return Err(ServiceError::InvalidQuestionnaire(extra.clone()));
        }
        let q: Questionnaire =
            serde_json::from_value(value).map_err(|_| ServiceError::InvalidQuestionnaire("questionnaire".into()))?;
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if isocountry::CountryCode::for_alpha2(&self.country).is_err() {
            return Err(ServiceError::InvalidQuestionnaire("country".into()));
        }
        if self.symptoms.is_empty()
            || (self.symptoms.contains(&Symptom::NoneOther) && self.symptoms.len() > 1)
        {
            return Err(ServiceError::InvalidQuestionnaire("symptoms".into()));
        }
        Ok(())
    }
}

/// Display name for an ISO alpha-2 code, falling back to the code itself.
pub fn country_name(code: &str) -> String {
    isocountry::CountryCode::for_alpha2(code)
        .map(|c| c.name().to_string())
        .unwrap_or_else(|_| code.to_string())
}
