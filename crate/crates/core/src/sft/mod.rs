//! Rendering training examples as user/assistant conversations and parsing
//! assistant targets back.
//!
//! Targets lead with the optional recaption and the overall score, the score
//! string ending in the `<overall>` marker, so a generator can be stopped as
//! soon as the marker appears.

pub mod marker;
pub mod pools;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::contrastive::TrainingExample;
use crate::hash::keyed_u64;
use crate::record::{CaptionVariant, DatasetVariant, SftRecord, Split};
use crate::scores::{check_range, validate_scores, Criterion, CriterionScores, ScoreError};

pub use marker::{MARKER, ESCAPED_MARKER};
pub use pools::InstructionPools;

pub const IMAGE_PLACEHOLDER: &str = "[Image]";
pub const RECAPTION_KEY: &str = "Recaption";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TargetError {
    #[error("layout error: {0}")]
    Layout(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

fn layout(msg: impl Into<String>) -> TargetError {
    TargetError::Layout(msg.into())
}

/// A composed assistant target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComposedTarget {
    pub text: String,
    /// Set when a caption or explanation contained the marker and was escaped.
    pub marker_collision: bool,
}

/// The fields recovered from an assistant target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedTarget {
    pub recaption: Option<String>,
    pub scores: CriterionScores,
}

/// Picks the three instructions for an example.
///
/// The choice depends only on `(seed, pair_id, input_variant)`.
pub fn select_instructions<'p>(
    example: &TrainingExample,
    pools: &'p InstructionPools,
    seed: u64,
) -> (&'p str, &'p str, &'p str) {
    select_instructions_for(&example.pair_id, example.input_variant, pools, seed)
}

pub fn select_instructions_for<'p>(
    pair_id: &str,
    variant: CaptionVariant,
    pools: &'p InstructionPools,
    seed: u64,
) -> (&'p str, &'p str, &'p str) {
    let parts: [&[u8]; 2] = [pair_id.as_bytes(), variant.as_str().as_bytes()];
    let pick = |domain: &str, pool: &'p [String]| -> &'p str {
        let h = keyed_u64(seed, domain, &parts);
        &pool[(h % pool.len() as u64) as usize]
    };
    (
        pick("sft-score-instruction", &pools.score_pool),
        pick("sft-rewrite-instruction", &pools.rewrite_pool),
        pick("sft-format-instruction", &pools.format_pool),
    )
}

/// Builds the user turn: image placeholder, score instruction with caption,
/// rewrite instruction, format instruction.
pub fn compose_user(example: &TrainingExample, pools: &InstructionPools, seed: u64) -> String {
    compose_user_for(&example.pair_id, example.input_variant, &example.input_caption, pools, seed)
}

pub fn compose_user_for(
    pair_id: &str,
    variant: CaptionVariant,
    caption: &str,
    pools: &InstructionPools,
    seed: u64,
) -> String {
    let (score, rewrite, format) = select_instructions_for(pair_id, variant, pools, seed);
    format!("{IMAGE_PLACEHOLDER}\n{score}: {caption}\n{rewrite}\n{format}")
}

fn push_json_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// Renders the assistant target with its fixed key order.
pub fn compose_target(example: &TrainingExample) -> ComposedTarget {
    let mut collision = false;
    let mut escaped = |s: &str| {
        let (e, hit) = marker::escape(s);
        collision |= hit;
        e.into_owned()
    };
    let scores = &example.target_scores;
    let mut out = String::with_capacity(512);
    out.push('{');
    if let Some(recaption) = &example.target_recaption {
        push_json_string(&mut out, RECAPTION_KEY);
        out.push_str(": ");
        push_json_string(&mut out, &escaped(recaption));
        out.push_str(", ");
    }
    push_json_string(&mut out, Criterion::Overall.score_key());
    out.push_str(": \"");
    out.push_str(&scores.overall.score.to_string());
    out.push_str(MARKER);
    out.push_str("\", ");
    push_json_string(&mut out, Criterion::Overall.explanation_key());
    out.push_str(": ");
    push_json_string(&mut out, &escaped(&scores.overall.explanation));
    for criterion in Criterion::DETAILED {
        let a = scores.get(criterion);
        out.push_str(", ");
        push_json_string(&mut out, criterion.score_key());
        out.push_str(": ");
        out.push_str(&a.score.to_string());
        out.push_str(", ");
        push_json_string(&mut out, criterion.explanation_key());
        out.push_str(": ");
        push_json_string(&mut out, &escaped(&a.explanation));
    }
    out.push('}');
    ComposedTarget {
        text: out,
        marker_collision: collision,
    }
}

fn unescape_field(key: &str, value: &Value) -> Result<String, TargetError> {
    let Value::String(s) = value else {
        return Err(layout(format!("{key} must be a string")));
    };
    marker::unescape(s).ok_or_else(|| layout(format!("unescaped marker inside {key}")))
}

/// Parses the digits of an overall score string ending in the marker.
pub fn parse_overall_value(value: &str) -> Result<u8, TargetError> {
    let digits = value
        .strip_suffix(MARKER)
        .ok_or_else(|| layout("overall score does not end with the marker"))?;
    if digits.is_empty() || digits.len() > 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(layout(format!("overall score {digits:?} is not an integer")));
    }
    let value: i64 = digits.parse().map_err(|_| layout("overall score overflow"))?;
    Ok(check_range(Criterion::Overall.score_key(), value)?)
}

/// Inverse of [`compose_target`].
pub fn parse_target(text: &str) -> Result<ParsedTarget, TargetError> {
    let markers = marker::marker_count(text);
    if markers != 1 {
        return Err(layout(format!("expected one {MARKER} marker, found {markers}")));
    }
    let object: Map<String, Value> =
        serde_json::from_str(text).map_err(|e| layout(format!("not a key-value object: {e}")))?;

    let mut expected: Vec<&str> = Vec::with_capacity(13);
    if object.keys().next().map(String::as_str) == Some(RECAPTION_KEY) {
        expected.push(RECAPTION_KEY);
    }
    expected.extend(Criterion::field_keys());
    let keys: Vec<&str> = object.keys().map(String::as_str).collect();
    if keys != expected {
        return Err(layout(format!("keys out of layout: {keys:?}")));
    }

    let recaption = match object.get(RECAPTION_KEY) {
        Some(v) => Some(unescape_field(RECAPTION_KEY, v)?),
        None => None,
    };
    let overall_key = Criterion::Overall.score_key();
    let Some(Value::String(overall)) = object.get(overall_key) else {
        return Err(layout("overall score must be a string"));
    };
    let overall = parse_overall_value(overall)?;

    let mut scores = CriterionScores::uniform(overall, "");
    scores.overall.explanation = unescape_field(
        Criterion::Overall.explanation_key(),
        &object[Criterion::Overall.explanation_key()],
    )?;
    for criterion in Criterion::DETAILED {
        let a = scores.get_mut(criterion);
        a.score = crate::scores::integer_score(criterion.score_key(), &object[criterion.score_key()])?;
        a.explanation = unescape_field(criterion.explanation_key(), &object[criterion.explanation_key()])?;
    }
    Ok(ParsedTarget {
        recaption,
        scores: validate_scores(scores)?,
    })
}

/// Renders one full conversation record.
pub fn format_record(
    example: &TrainingExample,
    pools: &InstructionPools,
    seed: u64,
    variant: DatasetVariant,
    split: Split,
) -> (SftRecord, bool) {
    let target = compose_target(example);
    (
        SftRecord {
            pair_id: example.pair_id.clone(),
            user_text: compose_user(example, pools, seed),
            target_text: target.text,
            dataset_variant: variant,
            split,
        },
        target.marker_collision,
    )
}
