//! Deterministic stand-in for the annotation service, plus a fault injector.
//!
//! The mock's output is a pure function of `(seed, pair_id, caption)`:
//!
//! * `h = keyed_u64(seed, "mock-overall", [pair_id, caption])`. With
//!   probability `high_share` (decided by `unit_interval(h)`) the overall score
//!   is `8 + (h & 0xff) % 3`, otherwise `1 + (h & 0xff) % 7`.
//! * Criterion `i` (1..=5 in canonical order) scores
//!   `clamp(overall + keyed_u64(seed, "mock-criterion", [pair_id, caption, [i]]) % 5 - 2, 1, 10)`.
//! * A rewrite is `"A clear photo of the scene in image {pair_id}."` scored
//!   `8 + keyed_u64(seed, "mock-rewrite", [pair_id]) % 3`.
//! * A degradation is `"Something unrelated to image {pair_id}."` scored
//!   `1 + keyed_u64(seed, "mock-degrade", [pair_id]) % (original - 1)`, or 1
//!   when the original is 1.

use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::hash::{keyed_u64, unit_interval};
use crate::scores::{Assessment, Criterion, CriterionScores};

use super::backend::{BackendError, ChatBackend, ChatRequest};
use super::prompt::PromptFamily;

/// Share of high-mode pairs, roughly the fraction of a web corpus scoring 8+.
pub const DEFAULT_HIGH_SHARE: f64 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct MockBackend {
    pub seed: u64,
    pub high_share: f64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            high_share: DEFAULT_HIGH_SHARE,
        }
    }

    pub fn with_high_share(seed: u64, high_share: f64) -> Self {
        Self {
            seed,
            high_share: high_share.clamp(0.0, 1.0),
        }
    }

    pub fn overall_for(&self, pair_id: &str, caption: &str) -> u8 {
        let h = keyed_u64(self.seed, "mock-overall", &[pair_id.as_bytes(), caption.as_bytes()]);
        let b = h & 0xff;
        if unit_interval(h) < self.high_share {
            8 + (b % 3) as u8
        } else {
            1 + (b % 7) as u8
        }
    }

    fn scores_around(&self, overall: u8, pair_id: &str, caption: &str, tone: &str) -> CriterionScores {
        CriterionScores::from_fn(|c| {
            let score = match c {
                Criterion::Overall => overall,
                _ => {
                    let i = Criterion::DETAILED.iter().position(|d| *d == c).unwrap() as u8 + 1;
                    let h = keyed_u64(
                        self.seed,
                        "mock-criterion",
                        &[pair_id.as_bytes(), caption.as_bytes(), &[i]],
                    );
                    (overall as i64 + (h % 5) as i64 - 2).clamp(1, 10) as u8
                }
            };
            Assessment::new(score, format!("{} rated {score} out of 10 for {tone}", c.label()))
        })
    }

    pub fn score_for(&self, pair_id: &str, caption: &str) -> CriterionScores {
        let overall = self.overall_for(pair_id, caption);
        self.scores_around(overall, pair_id, caption, "the given caption")
    }

    pub fn recaption_for(pair_id: &str) -> String {
        format!("A clear photo of the scene in image {pair_id}.")
    }

    pub fn badcaption_for(pair_id: &str) -> String {
        format!("Something unrelated to image {pair_id}.")
    }

    pub fn rewrite_scores_for(&self, pair_id: &str) -> CriterionScores {
        let overall = 8 + (keyed_u64(self.seed, "mock-rewrite", &[pair_id.as_bytes()]) % 3) as u8;
        self.scores_around(overall, pair_id, &Self::recaption_for(pair_id), "the rewritten caption")
    }

    pub fn degrade_scores_for(&self, pair_id: &str, original_overall: u8) -> CriterionScores {
        let overall = if original_overall <= 1 {
            1
        } else {
            let h = keyed_u64(self.seed, "mock-degrade", &[pair_id.as_bytes()]);
            1 + (h % (original_overall as u64 - 1)) as u8
        };
        self.scores_around(overall, pair_id, &Self::badcaption_for(pair_id), "the degraded caption")
    }

    /// The reply object for a family, keys in schema order.
    pub fn reply_object(&self, family: PromptFamily, pair_id: &str, caption: &str) -> Map<String, Value> {
        let mut object = Map::new();
        let scores = match family {
            PromptFamily::Score => self.score_for(pair_id, caption),
            PromptFamily::RewriteHigh => {
                object.insert("Recaption".into(), json!(Self::recaption_for(pair_id)));
                self.rewrite_scores_for(pair_id)
            }
            PromptFamily::GenerateLow => {
                object.insert("Badcaption".into(), json!(Self::badcaption_for(pair_id)));
                self.degrade_scores_for(pair_id, self.overall_for(pair_id, caption))
            }
        };
        scores.write_object(&mut object);
        object
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let family = request
            .meta
            .family
            .ok_or_else(|| BackendError::Fatal("mock needs a prompt family".into()))?;
        let caption = request
            .caption()
            .ok_or_else(|| BackendError::Fatal("request has no caption".into()))?;
        Ok(Value::Object(self.reply_object(family, &request.meta.pair_id, caption)).to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    MissingKey,
    ExtraKey,
    OutOfRange,
    NonInteger,
    MultiSentence,
    Transient,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub pair_id: String,
    pub family: PromptFamily,
    pub attempt: u32,
    pub kind: FaultKind,
}

/// Wraps a backend and corrupts a deterministic fraction of its replies.
///
/// A `sticky_share` of the faulty `(pair, family)` slots fail on every attempt,
/// which exercises quarantine; the rest fail only on the attempt they were
/// drawn for, which exercises recovery.
pub struct FaultyBackend<B> {
    inner: B,
    seed: u64,
    rate: f64,
    sticky_share: f64,
    log: Mutex<Vec<InjectedFault>>,
}

impl<B: ChatBackend> FaultyBackend<B> {
    pub fn new(inner: B, seed: u64, rate: f64, sticky_share: f64) -> Self {
        Self {
            inner,
            seed,
            rate,
            sticky_share,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn injected(&self) -> Vec<InjectedFault> {
        self.log.lock().unwrap().clone()
    }

    fn draw(&self, pair_id: &str, family: PromptFamily, attempt: u32) -> Option<FaultKind> {
        let slot = keyed_u64(self.seed, "fault-slot", &[pair_id.as_bytes(), family.as_str().as_bytes()]);
        let sticky = unit_interval(slot) < self.rate * self.sticky_share;
        let h = keyed_u64(
            self.seed,
            "fault-attempt",
            &[pair_id.as_bytes(), family.as_str().as_bytes(), &attempt.to_le_bytes()],
        );
        let transient_share = 1.0 - self.sticky_share;
        let faulty = sticky || unit_interval(h) < self.rate * transient_share;
        if !faulty {
            return None;
        }
        let kinds: &[FaultKind] = match family {
            PromptFamily::Score => &[
                FaultKind::MissingKey,
                FaultKind::ExtraKey,
                FaultKind::OutOfRange,
                FaultKind::NonInteger,
                FaultKind::Transient,
            ],
            _ => &[
                FaultKind::MissingKey,
                FaultKind::ExtraKey,
                FaultKind::OutOfRange,
                FaultKind::NonInteger,
                FaultKind::MultiSentence,
                FaultKind::Transient,
            ],
        };
        Some(kinds[(h >> 8) as usize % kinds.len()])
    }
}

/// Applies a fault to a well-formed reply object.
pub fn corrupt(object: &mut Map<String, Value>, family: PromptFamily, kind: FaultKind) {
    match kind {
        FaultKind::MissingKey => {
            object.shift_remove("Object Detail Explanation");
        }
        FaultKind::ExtraKey => {
            object.insert("Confidence".into(), json!("high"));
        }
        FaultKind::OutOfRange => {
            object.insert("Overall Score".into(), json!(11));
        }
        FaultKind::NonInteger => {
            object.insert("Text Quality Score".into(), json!(6.5));
        }
        FaultKind::MultiSentence => {
            if let Some(key) = family.caption_key() {
                object.insert(key.into(), json!("A first sentence. A second sentence follows."));
            }
        }
        FaultKind::Transient => {}
    }
}

#[async_trait]
impl<B: ChatBackend> ChatBackend for FaultyBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let family = request.meta.family.unwrap_or(PromptFamily::Score);
        let fault = self.draw(&request.meta.pair_id, family, request.meta.attempt);
        if let Some(kind) = fault {
            self.log.lock().unwrap().push(InjectedFault {
                pair_id: request.meta.pair_id.clone(),
                family,
                attempt: request.meta.attempt,
                kind,
            });
            if kind == FaultKind::Transient {
                return Err(BackendError::Unavailable("injected transient failure".into()));
            }
        }
        let reply = self.inner.complete(request).await?;
        match fault {
            Some(kind) => {
                let Ok(Value::Object(mut object)) = serde_json::from_str::<Value>(&reply) else {
                    return Ok(reply);
                };
                corrupt(&mut object, family, kind);
                Ok(Value::Object(object).to_string())
            }
            None => Ok(reply),
        }
    }
}
