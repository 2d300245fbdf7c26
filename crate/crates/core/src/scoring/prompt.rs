//! System prompts and response schemas for the three annotation families.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::scores::Criterion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    /// Score an original caption.
    Score,
    /// Write a better one-sentence caption and score it.
    RewriteHigh,
    /// Write a deliberately bad one-sentence caption and score it.
    GenerateLow,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 3] = [
        PromptFamily::Score,
        PromptFamily::RewriteHigh,
        PromptFamily::GenerateLow,
    ];

    /// The extra caption property this family's replies carry.
    pub fn caption_key(self) -> Option<&'static str> {
        match self {
            PromptFamily::Score => None,
            PromptFamily::RewriteHigh => Some("Recaption"),
            PromptFamily::GenerateLow => Some("Badcaption"),
        }
    }

    pub fn schema_id(self) -> &'static str {
        match self {
            PromptFamily::Score => "caption_score",
            PromptFamily::RewriteHigh => "caption_rewrite",
            PromptFamily::GenerateLow => "caption_degrade",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptFamily::Score => "score",
            PromptFamily::RewriteHigh => "rewrite_high",
            PromptFamily::GenerateLow => "generate_low",
        }
    }

    /// Required properties in order.
    pub fn property_keys(self) -> Vec<&'static str> {
        self.caption_key()
            .into_iter()
            .chain(Criterion::field_keys())
            .collect()
    }
}

const CRITERIA: &str = "\
1. Text Quality: Grammar, vocabulary, fluency, readability, length, structure
2. Image-Text Matching: Accuracy in representing key elements and overall theme
3. Object Detail: Detailed descriptions of objects (color, size, position, shape, material, etc.)
4. Semantic Understanding: Additional information beyond visual content
5. Text/Chart Description: If the image contains significant text or charts, evaluate how well the caption describes this content";

const SCORE_ROLE: &str = "\
Your role is to serve as an impartial and objective evaluator of image captions. \
Please evaluate the given caption with the following criteria and provide each criteria score and explanation, \
then an overall score and explanation.";

const REWRITE_ROLE: &str = "\
Your role is to serve as an assistant that generates captions of good quality for images. \
You will be given an original caption of low quality, and you need to generate a one-sentence high-quality re-caption. Output:
1. The generated high-quality re-caption
2. Give a high score of your re-caption based on the provided criteria";

const DEGRADE_ROLE: &str = "\
Your role is to serve as an assistant that generates bad captions of given images. \
You will be given an original caption of relatively good quality, and you need to generate an one-sentence bad-quality caption. Output:
1. The generated bad-quality caption, could be inaccurate, image-text mismatching, or irrelevant information
2. Give a low score of your bad-quality caption based on the provided criteria. Give explanation; use varying words rather than repeating the instructions.";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub family: PromptFamily,
    pub system_text: String,
    pub schema_id: String,
}

impl PromptTemplate {
    pub fn for_family(family: PromptFamily) -> Self {
        let system_text = match family {
            PromptFamily::Score => format!(
                "{SCORE_ROLE}\n\nEvaluate the caption based on:\n{CRITERIA}\n\nOutput Format:\n\
                 - [criteria] Score: <integer from 1 to 10>\n\
                 - [criteria] Explanation: <explanation of your evaluation>"
            ),
            PromptFamily::RewriteHigh => format!(
                "{REWRITE_ROLE}\n\nEvaluation Criteria:\n{CRITERIA}\n\nOutput Format:\n\
                 - Recaption: <your one-sentence high-quality re-caption>\n\
                 - [criteria] Score: <score of your re-caption, integer from 1 to 10>\n\
                 - [criteria] Explanation: <explanation of your evaluation>"
            ),
            PromptFamily::GenerateLow => format!(
                "{DEGRADE_ROLE}\n\nEvaluation Criteria:\n{CRITERIA}\n\nOutput Format:\n\
                 - Badcaption: <your one-sentence bad-quality caption>\n\
                 - [criteria] Score: <score of your bad-quality caption, integer from 1 to 10>\n\
                 - [criteria] Explanation: <explanation of your evaluation>"
            ),
        };
        Self {
            family,
            system_text,
            schema_id: family.schema_id().to_owned(),
        }
    }

    /// JSON schema with every property required and no extras allowed.
    pub fn json_schema(&self) -> Value {
        let mut properties = Map::new();
        for key in self.family.property_keys() {
            let ty = if key.ends_with(" Score") { "integer" } else { "string" };
            properties.insert(key.to_owned(), json!({ "type": ty }));
        }
        json!({
            "type": "object",
            "properties": properties,
            "required": self.family.property_keys(),
            "additionalProperties": false,
        })
    }

    /// The `response_format` object of a chat-completion request.
    pub fn response_format(&self) -> Value {
        json!({
            "type": "json_schema",
            "json_schema": {
                "name": self.schema_id,
                "strict": true,
                "schema": self.json_schema(),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemas_match_property_lists() {
        let score = PromptTemplate::for_family(PromptFamily::Score).json_schema();
        assert_eq!(score["properties"].as_object().unwrap().len(), 12);
        assert_eq!(score["additionalProperties"], false);
        assert_eq!(score["properties"]["Overall Score"]["type"], "integer");
        assert_eq!(score["properties"]["Overall Explanation"]["type"], "string");

        let rewrite = PromptTemplate::for_family(PromptFamily::RewriteHigh).json_schema();
        let keys: Vec<_> = rewrite["properties"].as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 13);
        assert_eq!(keys[0], "Recaption");
        assert_eq!(rewrite["properties"]["Recaption"]["type"], "string");

        let degrade = PromptTemplate::for_family(PromptFamily::GenerateLow).json_schema();
        assert_eq!(degrade["required"][0], "Badcaption");
    }

    #[test]
    fn system_texts_are_nonempty_and_distinct() {
        let texts: Vec<_> = PromptFamily::ALL
            .iter()
            .map(|f| PromptTemplate::for_family(*f).system_text)
            .collect();
        assert!(texts.iter().all(|t| !t.trim().is_empty()));
        assert_ne!(texts[0], texts[1]);
        assert!(texts[1].contains("Recaption:"));
        assert!(texts[2].contains("Badcaption:"));
    }
}
