//! Record types shared by every pipeline stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{Record, RecordError};
use crate::scores::{validate_scores, CriterionScores, MAX_SCORE, MIN_SCORE};
use crate::sft::marker;

/// One image locator with its caption as found in a raw corpus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPair {
    pub id: String,
    pub image_ref: String,
    pub caption: String,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl RawPair {
    pub fn new(id: impl Into<String>, image_ref: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image_ref: image_ref.into(),
            caption: caption.into(),
            source_meta: BTreeMap::new(),
        }
    }
}

impl Record for RawPair {
    fn check(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::invalid("empty id"));
        }
        if self.image_ref.trim().is_empty() {
            return Err(RecordError::invalid("empty image_ref"));
        }
        if self.caption.trim().is_empty() {
            return Err(RecordError::invalid("empty caption"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionVariant {
    Original,
    RewrittenHigh,
    GeneratedLow,
}

impl CaptionVariant {
    pub fn phase(self) -> Phase {
        match self {
            CaptionVariant::Original => Phase::Phase1,
            CaptionVariant::RewrittenHigh | CaptionVariant::GeneratedLow => Phase::Phase2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionVariant::Original => "original",
            CaptionVariant::RewrittenHigh => "rewritten_high",
            CaptionVariant::GeneratedLow => "generated_low",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    Phase2,
}

/// Counts sentence terminators (`.`, `!`, `?` and their full-width forms).
///
/// A run of terminators counts once, and a terminator only ends a sentence when
/// followed by whitespace or the end of the text, so `3.5` and `...` are not
/// sentence breaks.
pub fn sentence_count(text: &str) -> usize {
    let is_term = |c: char| matches!(c, '.' | '!' | '?' | '。' | '！' | '？');
    let chars: Vec<char> = text.trim_end().chars().collect();
    let mut count = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_term(chars[i]) {
            let mut j = i;
            while j + 1 < chars.len() && is_term(chars[j + 1]) {
                j += 1;
            }
            let at_end = j + 1 == chars.len();
            let before_space = !at_end && chars[j + 1].is_whitespace();
            let closing_quote = !at_end && matches!(chars[j + 1], '"' | '\'' | ')' | '”');
            if at_end || before_space || closing_quote {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

pub fn is_single_sentence(text: &str) -> bool {
    !text.trim().is_empty() && sentence_count(text) <= 1
}

/// A scored caption variant for one pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub pair_id: String,
    pub variant: CaptionVariant,
    pub phase: Phase,
    #[serde(rename = "caption")]
    pub caption_text: String,
    pub scores: CriterionScores,
}

impl AnnotationRecord {
    pub fn new(
        pair_id: impl Into<String>,
        variant: CaptionVariant,
        caption_text: impl Into<String>,
        scores: CriterionScores,
    ) -> Result<Self, RecordError> {
        let record = Self {
            pair_id: pair_id.into(),
            variant,
            phase: variant.phase(),
            caption_text: caption_text.into(),
            scores,
        };
        record.check()?;
        Ok(record)
    }

    pub fn overall(&self) -> u8 {
        self.scores.overall.score
    }
}

impl Record for AnnotationRecord {
    fn check(&self) -> Result<(), RecordError> {
        if self.phase != self.variant.phase() {
            return Err(RecordError::invalid(format!(
                "variant {} requires {:?}",
                self.variant.as_str(),
                self.variant.phase()
            )));
        }
        if self.variant != CaptionVariant::Original && !is_single_sentence(&self.caption_text) {
            return Err(RecordError::invalid("generated caption must be a single sentence"));
        }
        if self.caption_text.trim().is_empty() {
            return Err(RecordError::invalid("empty caption"));
        }
        validate_scores(self.scores.clone())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetVariant {
    /// Originals, rewrites and degradations with recaption targets.
    Aitqe,
    /// Original captions and their scores only.
    Base,
    /// Base plus the phase-2 captions as plain scored inputs.
    BaseContrastive,
    /// Base plus recaption targets on low-scoring originals.
    BaseRewrite,
}

impl DatasetVariant {
    pub const ALL: [DatasetVariant; 4] = [
        DatasetVariant::Aitqe,
        DatasetVariant::Base,
        DatasetVariant::BaseContrastive,
        DatasetVariant::BaseRewrite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetVariant::Aitqe => "aitqe",
            DatasetVariant::Base => "base",
            DatasetVariant::BaseContrastive => "base_contrastive",
            DatasetVariant::BaseRewrite => "base_rewrite",
        }
    }
}

impl std::str::FromStr for DatasetVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown dataset variant {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One user/assistant conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftRecord {
    pub pair_id: String,
    #[serde(rename = "user")]
    pub user_text: String,
    #[serde(rename = "assistant")]
    pub target_text: String,
    #[serde(rename = "variant")]
    pub dataset_variant: DatasetVariant,
    pub split: Split,
}

impl SftRecord {
    /// True when the assistant reply leads with a recaption.
    pub fn has_recaption(&self) -> bool {
        self.target_text.starts_with("{\"Recaption\"")
    }
}

impl Record for SftRecord {
    fn check(&self) -> Result<(), RecordError> {
        let n = marker::marker_count(&self.target_text);
        if n != 1 {
            return Err(RecordError::invalid(format!(
                "assistant text has {n} overall markers"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceFlag {
    /// Scored below the keep threshold but the reply carried no recaption.
    MissingRecaption,
    /// Scored at or above the keep threshold yet the reply carried a recaption.
    UnexpectedRecaption,
    /// The backend never produced a usable reply.
    Quarantined,
}

/// Output of the enhancer for one input pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancedPair {
    pub id: String,
    pub image_ref: String,
    #[serde(rename = "caption")]
    pub final_caption: String,
    /// `None` only for quarantined pairs, which never received a score.
    #[serde(rename = "overall")]
    pub overall_score: Option<u8>,
    pub was_rewritten: bool,
    pub original_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<EnhanceFlag>,
}

impl Record for EnhancedPair {
    fn check(&self) -> Result<(), RecordError> {
        if !self.was_rewritten && self.final_caption != self.original_caption {
            return Err(RecordError::invalid("caption changed without rewrite"));
        }
        match self.overall_score {
            Some(s) if !(MIN_SCORE..=MAX_SCORE).contains(&s) => {
                Err(RecordError::invalid(format!("overall {s} outside [1, 10]")))
            }
            None if self.flag != Some(EnhanceFlag::Quarantined) => {
                Err(RecordError::invalid("missing overall on a non-quarantined pair"))
            }
            None if self.was_rewritten => Err(RecordError::invalid("quarantined pair marked rewritten")),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_counting() {
        assert_eq!(sentence_count("A red car parked."), 1);
        assert_eq!(sentence_count("A red car parked"), 0);
        assert_eq!(sentence_count("A dog. A cat."), 2);
        assert_eq!(sentence_count("Wait... what?"), 2);
        assert_eq!(sentence_count("Version 3.5 of the logo!"), 1);
        assert_eq!(sentence_count("Item 0:0.1 shown."), 1);
        assert!(is_single_sentence("A dog on grass."));
        assert!(!is_single_sentence("A dog on grass. It runs."));
        assert!(!is_single_sentence("   "));
    }

    #[test]
    fn annotation_phase_follows_variant() {
        let s = CriterionScores::uniform(5, "ok");
        let r = AnnotationRecord::new("p", CaptionVariant::RewrittenHigh, "A cat.", s.clone()).unwrap();
        assert_eq!(r.phase, Phase::Phase2);
        let mut bad = r.clone();
        bad.phase = Phase::Phase1;
        assert!(bad.check().is_err());
        assert!(AnnotationRecord::new("p", CaptionVariant::GeneratedLow, "A. B.", s.clone()).is_err());
        // originals may be multi-sentence
        assert!(AnnotationRecord::new("p", CaptionVariant::Original, "A. B.", s).is_ok());
    }

    #[test]
    fn enhanced_pair_invariants() {
        let mut p = EnhancedPair {
            id: "1".into(),
            image_ref: "img".into(),
            final_caption: "x".into(),
            overall_score: Some(9),
            was_rewritten: false,
            original_caption: "x".into(),
            flag: None,
        };
        assert!(p.check().is_ok());
        p.final_caption = "y".into();
        assert!(p.check().is_err());
        p.was_rewritten = true;
        assert!(p.check().is_ok());
        p.overall_score = None;
        assert!(p.check().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in DatasetVariant::ALL {
            assert_eq!(v.as_str().parse::<DatasetVariant>().unwrap(), v);
        }
        assert!("nope".parse::<DatasetVariant>().is_err());
    }
}
