//! Strict validation of structured backend replies.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::scores::{Criterion, CriterionScores, MAX_SCORE, MIN_SCORE};

use super::prompt::PromptFamily;

/// Why a reply failed its family's schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemaViolation {
    InvalidJson { detail: String },
    NotAnObject,
    MissingKey { key: String },
    ExtraKey { key: String },
    WrongType { key: String },
    NonIntegerScore { key: String },
    OutOfRange { key: String, value: String },
    EmptyText { key: String },
}

impl SchemaViolation {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SchemaViolation::InvalidJson { .. } => "invalid_json",
            SchemaViolation::NotAnObject => "not_an_object",
            SchemaViolation::MissingKey { .. } => "missing_key",
            SchemaViolation::ExtraKey { .. } => "extra_key",
            SchemaViolation::WrongType { .. } => "wrong_type",
            SchemaViolation::NonIntegerScore { .. } => "non_integer_score",
            SchemaViolation::OutOfRange { .. } => "out_of_range",
            SchemaViolation::EmptyText { .. } => "empty_text",
        }
    }
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::InvalidJson { detail } => write!(f, "reply is not valid JSON ({detail})"),
            SchemaViolation::NotAnObject => f.write_str("reply is not a JSON object"),
            SchemaViolation::MissingKey { key } => write!(f, "missing required property {key:?}"),
            SchemaViolation::ExtraKey { key } => write!(f, "unexpected property {key:?}"),
            SchemaViolation::WrongType { key } => write!(f, "property {key:?} has the wrong type"),
            SchemaViolation::NonIntegerScore { key } => write!(f, "{key:?} must be an integer"),
            SchemaViolation::OutOfRange { key, value } => {
                write!(f, "{key:?} = {value} is outside [{MIN_SCORE}, {MAX_SCORE}]")
            }
            SchemaViolation::EmptyText { key } => write!(f, "property {key:?} is empty"),
        }
    }
}

impl std::error::Error for SchemaViolation {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidatedReply {
    /// `Recaption` or `Badcaption`, depending on the family.
    pub caption: Option<String>,
    pub scores: CriterionScores,
}

/// Parses a reply object and checks it against the family schema. Nothing is
/// coerced: `"7"` and `7.0` are both rejected as scores.
pub fn validate_response(family: PromptFamily, raw_reply: &str) -> Result<ValidatedReply, SchemaViolation> {
    let value: Value = serde_json::from_str(raw_reply.trim()).map_err(|e| SchemaViolation::InvalidJson {
        detail: e.to_string(),
    })?;
    let Value::Object(object) = value else {
        return Err(SchemaViolation::NotAnObject);
    };
    validate_object(family, &object)
}

pub fn validate_object(family: PromptFamily, object: &Map<String, Value>) -> Result<ValidatedReply, SchemaViolation> {
    let keys = family.property_keys();
    if let Some(extra) = object.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(SchemaViolation::ExtraKey { key: extra.clone() });
    }
    if let Some(missing) = keys.iter().find(|k| !object.contains_key(**k)) {
        return Err(SchemaViolation::MissingKey {
            key: missing.to_string(),
        });
    }

    let text = |key: &str| -> Result<String, SchemaViolation> {
        match &object[key] {
            Value::String(s) if s.trim().is_empty() => Err(SchemaViolation::EmptyText { key: key.into() }),
            Value::String(s) => Ok(s.clone()),
            _ => Err(SchemaViolation::WrongType { key: key.into() }),
        }
    };

    let caption = family.caption_key().map(text).transpose()?;
    let mut scores = CriterionScores::uniform(MIN_SCORE, "");
    for criterion in Criterion::ALL {
        let key = criterion.score_key();
        let score = match &object[key] {
            Value::Number(n) => match n.as_i64() {
                Some(v) if (MIN_SCORE as i64..=MAX_SCORE as i64).contains(&v) => v as u8,
                Some(_) => {
                    return Err(SchemaViolation::OutOfRange {
                        key: key.into(),
                        value: n.to_string(),
                    })
                }
                None if n.is_u64() => {
                    return Err(SchemaViolation::OutOfRange {
                        key: key.into(),
                        value: n.to_string(),
                    })
                }
                None => return Err(SchemaViolation::NonIntegerScore { key: key.into() }),
            },
            _ => return Err(SchemaViolation::WrongType { key: key.into() }),
        };
        let a = scores.get_mut(criterion);
        a.score = score;
        a.explanation = text(criterion.explanation_key())?;
    }
    Ok(ValidatedReply { caption, scores })
}
