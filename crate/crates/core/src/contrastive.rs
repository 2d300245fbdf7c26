//! Routing phase-1 annotations to phase-2 requests and assembling training
//! examples for each dataset variant.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::keyed_u64;
use crate::record::{AnnotationRecord, CaptionVariant, DatasetVariant, Phase};
use crate::scores::CriterionScores;

pub const DEFAULT_LOW_THRESHOLD: u8 = 7;
pub const DEFAULT_HIGH_THRESHOLD: u8 = 8;

/// One `{image + caption : target}` training pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TrainingExample {
    pub pair_id: String,
    pub input_caption: String,
    pub input_variant: CaptionVariant,
    pub target_recaption: Option<String>,
    /// Scores of `input_caption`, never of the recaption.
    pub target_scores: CriterionScores,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    RequestRewrite,
    RequestDegrade,
    NoPhase2,
}

/// Decides which phase-2 prompt a phase-1 record needs.
///
/// `low_thr < high_thr` is the caller's responsibility; see [`Thresholds`].
pub fn route(record: &AnnotationRecord, low_thr: u8, high_thr: u8) -> Route {
    debug_assert!(low_thr < high_thr);
    debug_assert_eq!(record.phase, Phase::Phase1);
    let overall = record.overall();
    if overall <= low_thr {
        Route::RequestRewrite
    } else if overall >= high_thr {
        Route::RequestDegrade
    } else {
        Route::NoPhase2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: u8,
    pub high: u8,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            low: DEFAULT_LOW_THRESHOLD,
            high: DEFAULT_HIGH_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn new(low: u8, high: u8) -> Result<Self, String> {
        if low >= high {
            return Err(format!("low threshold {low} must be below high threshold {high}"));
        }
        Ok(Self { low, high })
    }

    pub fn route(&self, record: &AnnotationRecord) -> Route {
        route(record, self.low, self.high)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssembleError {
    #[error("phase-2 record for {0:?} has no phase-1 parent")]
    DanglingPhase2(String),
    #[error("pair {0:?} has more than one phase-2 record")]
    ConflictingPhase2(String),
    #[error("record for {0:?} is in the wrong phase")]
    WrongPhase(String),
}

/// Per-variant bookkeeping for the build manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembleCounts {
    pub pairs: usize,
    pub examples: usize,
    pub with_recaption: usize,
    pub with_phase2: usize,
    pub base_fallbacks: usize,
}

fn example(
    record: &AnnotationRecord,
    recaption: Option<&str>,
) -> TrainingExample {
    TrainingExample {
        pair_id: record.pair_id.clone(),
        input_caption: record.caption_text.clone(),
        input_variant: record.variant,
        target_recaption: recaption.map(str::to_owned),
        target_scores: record.scores.clone(),
    }
}

/// Builds training examples in phase-1 order.
///
/// A generated-low companion marks a high pair and a rewritten-high companion
/// marks a low pair. Pairs without a companion (no phase-2 request, or the
/// request was quarantined) contribute only `{(I,C):S}` in every variant.
pub fn assemble(
    phase1: &[AnnotationRecord],
    phase2: &[AnnotationRecord],
    variant: DatasetVariant,
) -> Result<(Vec<TrainingExample>, AssembleCounts), AssembleError> {
    let mut parents: HashMap<&str, ()> = HashMap::with_capacity(phase1.len());
    for record in phase1 {
        if record.phase != Phase::Phase1 {
            return Err(AssembleError::WrongPhase(record.pair_id.clone()));
        }
        parents.insert(&record.pair_id, ());
    }
    let mut companions: HashMap<&str, &AnnotationRecord> = HashMap::with_capacity(phase2.len());
    for record in phase2 {
        if record.phase != Phase::Phase2 {
            return Err(AssembleError::WrongPhase(record.pair_id.clone()));
        }
        if !parents.contains_key(record.pair_id.as_str()) {
            return Err(AssembleError::DanglingPhase2(record.pair_id.clone()));
        }
        if companions.insert(&record.pair_id, record).is_some() {
            return Err(AssembleError::ConflictingPhase2(record.pair_id.clone()));
        }
    }

    let mut out = Vec::with_capacity(phase1.len() * 2);
    let mut counts = AssembleCounts {
        pairs: phase1.len(),
        ..AssembleCounts::default()
    };
    for original in phase1 {
        let companion = companions.get(original.pair_id.as_str()).copied();
        if companion.is_some() {
            counts.with_phase2 += 1;
        }
        match (variant, companion) {
            (_, None) | (DatasetVariant::Base, Some(_)) => {
                if companion.is_none() {
                    counts.base_fallbacks += 1;
                }
                out.push(example(original, None));
            }
            (DatasetVariant::Aitqe, Some(c)) => match c.variant {
                CaptionVariant::GeneratedLow => {
                    out.push(example(original, None));
                    out.push(example(c, Some(&original.caption_text)));
                }
                _ => {
                    out.push(example(original, Some(&c.caption_text)));
                    out.push(example(c, None));
                }
            },
            (DatasetVariant::BaseContrastive, Some(c)) => {
                out.push(example(original, None));
                out.push(example(c, None));
            }
            (DatasetVariant::BaseRewrite, Some(c)) => match c.variant {
                CaptionVariant::RewrittenHigh => out.push(example(original, Some(&c.caption_text))),
                _ => out.push(example(original, None)),
            },
        }
    }
    counts.examples = out.len();
    counts.with_recaption = out.iter().filter(|e| e.target_recaption.is_some()).count();
    Ok((out, counts))
}

/// Number of pairs that go to validation: `max(1, floor(fraction * pairs))`,
/// or zero for an empty input.
pub fn val_pair_count(pairs: usize, val_fraction: f64) -> usize {
    if pairs == 0 {
        return 0;
    }
    ((val_fraction * pairs as f64).floor() as usize).clamp(1, pairs)
}

/// Splits by pair so that all examples of one image land on the same side.
///
/// The validation pairs are those with the lowest keyed hash of
/// `(seed, pair_id)`. Example order is preserved within each side.
pub fn split(
    examples: Vec<TrainingExample>,
    val_fraction: f64,
    seed: u64,
) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
    let mut first_seen: BTreeMap<&str, ()> = BTreeMap::new();
    for e in &examples {
        first_seen.insert(&e.pair_id, ());
    }
    let mut ranked: Vec<(u64, &str)> = first_seen
        .keys()
        .map(|id| (keyed_u64(seed, "split", &[id.as_bytes()]), *id))
        .collect();
    ranked.sort_unstable();
    let n_val = val_pair_count(ranked.len(), val_fraction);
    let val_ids: std::collections::HashSet<String> =
        ranked[..n_val].iter().map(|(_, id)| id.to_string()).collect();

    examples.into_iter().partition(|e| !val_ids.contains(&e.pair_id))
}
