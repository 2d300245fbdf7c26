//! The six-criterion score block and its validation.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 10;

/// One of the six scored aspects of an image-caption pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    Overall,
    TextQuality,
    ImageTextMatching,
    ObjectDetail,
    SemanticUnderstanding,
    TextChartDescription,
}

impl Criterion {
    /// Overall first, then the five criteria in their canonical order.
    pub const ALL: [Criterion; 6] = [
        Criterion::Overall,
        Criterion::TextQuality,
        Criterion::ImageTextMatching,
        Criterion::ObjectDetail,
        Criterion::SemanticUnderstanding,
        Criterion::TextChartDescription,
    ];

    pub const DETAILED: [Criterion; 5] = [
        Criterion::TextQuality,
        Criterion::ImageTextMatching,
        Criterion::ObjectDetail,
        Criterion::SemanticUnderstanding,
        Criterion::TextChartDescription,
    ];

    pub const fn label(self) -> &'static str {
        match self {
            Criterion::Overall => "Overall",
            Criterion::TextQuality => "Text Quality",
            Criterion::ImageTextMatching => "Image-Text Matching",
            Criterion::ObjectDetail => "Object Detail",
            Criterion::SemanticUnderstanding => "Semantic Understanding",
            Criterion::TextChartDescription => "Text/Chart Description",
        }
    }

    pub const fn score_key(self) -> &'static str {
        match self {
            Criterion::Overall => "Overall Score",
            Criterion::TextQuality => "Text Quality Score",
            Criterion::ImageTextMatching => "Image-Text Matching Score",
            Criterion::ObjectDetail => "Object Detail Score",
            Criterion::SemanticUnderstanding => "Semantic Understanding Score",
            Criterion::TextChartDescription => "Text/Chart Description Score",
        }
    }

    pub const fn explanation_key(self) -> &'static str {
        match self {
            Criterion::Overall => "Overall Explanation",
            Criterion::TextQuality => "Text Quality Explanation",
            Criterion::ImageTextMatching => "Image-Text Matching Explanation",
            Criterion::ObjectDetail => "Object Detail Explanation",
            Criterion::SemanticUnderstanding => "Semantic Understanding Explanation",
            Criterion::TextChartDescription => "Text/Chart Description Explanation",
        }
    }

    /// All twelve field names in canonical order (score then explanation).
    pub fn field_keys() -> impl Iterator<Item = &'static str> {
        Criterion::ALL
            .into_iter()
            .flat_map(|c| [c.score_key(), c.explanation_key()])
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Assessment {
    pub score: u8,
    pub explanation: String,
}

impl Assessment {
    pub fn new(score: u8, explanation: impl Into<String>) -> Self {
        Self {
            score,
            explanation: explanation.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("{field} = {value} is outside [1, 10]")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("{0} is not an integer")]
    NotInteger(&'static str),
    #[error("{0} has the wrong type")]
    WrongType(&'static str),
}

/// Scores and explanations for the overall verdict and each criterion.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CriterionScores {
    pub overall: Assessment,
    pub text_quality: Assessment,
    pub image_text_matching: Assessment,
    pub object_detail: Assessment,
    pub semantic_understanding: Assessment,
    pub text_chart_description: Assessment,
}

impl CriterionScores {
    /// Every criterion gets the same score; explanations are labelled per criterion.
    pub fn uniform(score: u8, explanation: &str) -> Self {
        let a = |c: Criterion| Assessment::new(score, format!("{}: {explanation}", c.label()));
        Self {
            overall: a(Criterion::Overall),
            text_quality: a(Criterion::TextQuality),
            image_text_matching: a(Criterion::ImageTextMatching),
            object_detail: a(Criterion::ObjectDetail),
            semantic_understanding: a(Criterion::SemanticUnderstanding),
            text_chart_description: a(Criterion::TextChartDescription),
        }
    }

    pub fn from_fn(mut f: impl FnMut(Criterion) -> Assessment) -> Self {
        Self {
            overall: f(Criterion::Overall),
            text_quality: f(Criterion::TextQuality),
            image_text_matching: f(Criterion::ImageTextMatching),
            object_detail: f(Criterion::ObjectDetail),
            semantic_understanding: f(Criterion::SemanticUnderstanding),
            text_chart_description: f(Criterion::TextChartDescription),
        }
    }

    pub fn get(&self, criterion: Criterion) -> &Assessment {
        match criterion {
            Criterion::Overall => &self.overall,
            Criterion::TextQuality => &self.text_quality,
            Criterion::ImageTextMatching => &self.image_text_matching,
            Criterion::ObjectDetail => &self.object_detail,
            Criterion::SemanticUnderstanding => &self.semantic_understanding,
            Criterion::TextChartDescription => &self.text_chart_description,
        }
    }

    pub fn get_mut(&mut self, criterion: Criterion) -> &mut Assessment {
        match criterion {
            Criterion::Overall => &mut self.overall,
            Criterion::TextQuality => &mut self.text_quality,
            Criterion::ImageTextMatching => &mut self.image_text_matching,
            Criterion::ObjectDetail => &mut self.object_detail,
            Criterion::SemanticUnderstanding => &mut self.semantic_understanding,
            Criterion::TextChartDescription => &mut self.text_chart_description,
        }
    }

    pub fn overall_score(&self) -> u8 {
        self.overall.score
    }

    /// Reads the twelve verbatim fields from a key-value object.
    ///
    /// Scores must be JSON integers; `7.0` is rejected rather than rounded.
    /// Unknown keys are ignored here, callers that need closed objects check
    /// that separately.
    pub fn from_object(object: &Map<String, Value>) -> Result<Self, ScoreError> {
        let mut out = Self::uniform(MIN_SCORE, "");
        for criterion in Criterion::ALL {
            let score_key = criterion.score_key();
            let explanation_key = criterion.explanation_key();
            let score = object
                .get(score_key)
                .ok_or(ScoreError::MissingField(score_key))?;
            let score = integer_score(score_key, score)?;
            let explanation = match object.get(explanation_key) {
                None => return Err(ScoreError::MissingField(explanation_key)),
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(ScoreError::WrongType(explanation_key)),
            };
            *out.get_mut(criterion) = Assessment { score, explanation };
        }
        Ok(out)
    }

    /// Appends the twelve fields in canonical order.
    pub fn write_object(&self, object: &mut Map<String, Value>) {
        for criterion in Criterion::ALL {
            let a = self.get(criterion);
            object.insert(criterion.score_key().to_owned(), Value::from(a.score));
            object.insert(
                criterion.explanation_key().to_owned(),
                Value::from(a.explanation.clone()),
            );
        }
    }

    pub fn to_object(&self) -> Map<String, Value> {
        let mut object = Map::new();
        self.write_object(&mut object);
        object
    }
}

/// Parses a JSON score value, requiring an integer in `[1, 10]`.
pub fn integer_score(field: &'static str, value: &Value) -> Result<u8, ScoreError> {
    let Value::Number(n) = value else {
        return Err(ScoreError::WrongType(field));
    };
    let v = match (n.as_i64(), n.as_u64()) {
        (Some(v), _) => v,
        (None, Some(_)) => i64::MAX,
        (None, None) => return Err(ScoreError::NotInteger(field)),
    };
    check_range(field, v)
}

pub fn check_range(field: &'static str, value: i64) -> Result<u8, ScoreError> {
    if (MIN_SCORE as i64..=MAX_SCORE as i64).contains(&value) {
        Ok(value as u8)
    } else {
        Err(ScoreError::OutOfRange { field, value })
    }
}

/// Returns the candidate unchanged if every score is in `[1, 10]` and every
/// explanation is non-empty.
pub fn validate_scores(candidate: CriterionScores) -> Result<CriterionScores, ScoreError> {
    for criterion in Criterion::ALL {
        let a = candidate.get(criterion);
        check_range(criterion.score_key(), a.score as i64)?;
        if a.explanation.trim().is_empty() {
            return Err(ScoreError::MissingField(criterion.explanation_key()));
        }
    }
    Ok(candidate)
}

impl Serialize for CriterionScores {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(12))?;
        for criterion in Criterion::ALL {
            let a = self.get(criterion);
            map.serialize_entry(criterion.score_key(), &a.score)?;
            map.serialize_entry(criterion.explanation_key(), &a.explanation)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for CriterionScores {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let object = Map::<String, Value>::deserialize(deserializer)?;
        if let Some(extra) = object
            .keys()
            .find(|k| !Criterion::field_keys().any(|f| f == k.as_str()))
        {
            return Err(D::Error::custom(format!("unknown score field {extra:?}")));
        }
        let scores = CriterionScores::from_object(&object).map_err(D::Error::custom)?;
        validate_scores(scores).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn football() -> CriterionScores {
        let mut s = CriterionScores::uniform(8, "solid");
        s.overall.score = 9;
        s.image_text_matching.score = 10;
        s.semantic_understanding.score = 9;
        s
    }

    #[test]
    fn mid_range_scores_are_valid() {
        let s = CriterionScores::uniform(7, "fine");
        assert_eq!(validate_scores(s.clone()), Ok(s));
    }

    #[test]
    fn football_example_is_valid() {
        let s = football();
        assert_eq!(validate_scores(s.clone()).unwrap().overall_score(), 9);
    }

    #[test]
    fn zero_overall_is_out_of_range() {
        let mut s = CriterionScores::uniform(7, "fine");
        s.overall.score = 0;
        assert_eq!(
            validate_scores(s),
            Err(ScoreError::OutOfRange {
                field: "Overall Score",
                value: 0
            })
        );
    }

    #[test]
    fn empty_explanation_is_missing() {
        let mut s = CriterionScores::uniform(7, "fine");
        s.object_detail.explanation = "  ".into();
        assert_eq!(
            validate_scores(s),
            Err(ScoreError::MissingField("Object Detail Explanation"))
        );
    }

    #[test]
    fn exhaustive_range_check() {
        for criterion in Criterion::ALL {
            for v in 0..=u8::MAX {
                let mut s = CriterionScores::uniform(5, "x");
                s.get_mut(criterion).score = v;
                let ok = validate_scores(s).is_ok();
                assert_eq!(ok, (1..=10).contains(&v), "{criterion} = {v}");
            }
        }
    }

    #[test]
    fn fractional_scores_are_rejected() {
        let mut object = CriterionScores::uniform(6, "x").to_object();
        object.insert("Text Quality Score".into(), json!(6.0));
        assert_eq!(
            CriterionScores::from_object(&object),
            Err(ScoreError::NotInteger("Text Quality Score"))
        );
        object.insert("Text Quality Score".into(), json!("6"));
        assert_eq!(
            CriterionScores::from_object(&object),
            Err(ScoreError::WrongType("Text Quality Score"))
        );
    }

    #[test]
    fn huge_scores_are_out_of_range_not_wrapped() {
        assert!(matches!(
            integer_score("Overall Score", &json!(u64::MAX)),
            Err(ScoreError::OutOfRange { .. })
        ));
        assert!(matches!(
            integer_score("Overall Score", &json!(266)),
            Err(ScoreError::OutOfRange { value: 266, .. })
        ));
    }

    #[test]
    fn serde_uses_verbatim_keys_in_order() {
        let text = serde_json::to_string(&football()).unwrap();
        assert!(text.starts_with(r#"{"Overall Score":9,"Overall Explanation":"Overall: solid","Text Quality Score":8"#));
        let keys: Vec<_> = Criterion::field_keys().collect();
        assert_eq!(keys.len(), 12);
        assert_eq!(keys[10], "Text/Chart Description Score");
        let back: CriterionScores = serde_json::from_str(&text).unwrap();
        assert_eq!(back, football());
    }
}
