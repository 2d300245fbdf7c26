//! Keep-or-rewrite enhancement and top-K filtering with a trained scorer.

pub mod model;
pub mod sse;
pub mod stream;
pub mod topk;

use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self as fstream, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::analytics::Histogram;
use crate::codec::{Record, RecordError};
use crate::record::{CaptionVariant, EnhanceFlag, EnhancedPair, RawPair};
use crate::scoring::BackendError;
use crate::sft::{compose_user_for, InstructionPools};

pub use model::{HttpScorer, MockScorer, ReplyStream, ScorerModel, ScorerRequest};
pub use stream::{parse_stream, parse_streaming, EarlyStopResult, EarlyStopScanner, StreamError};
pub use topk::{filter_topk, Scored};

pub const DEFAULT_KEEP_THRESHOLD: u8 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub keep_threshold: u8,
    /// Seeds instruction selection for the user turn.
    pub seed: u64,
    /// Retries for transient backend failures.
    pub retry_limit: u32,
    /// Fresh generations after a truncated or malformed reply.
    pub reask_limit: u32,
    #[serde(with = "crate::scoring::backend::millis")]
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            keep_threshold: DEFAULT_KEEP_THRESHOLD,
            seed: 0,
            retry_limit: 3,
            reask_limit: 2,
            backoff: Duration::from_millis(500),
            max_in_flight: 16,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnhanceError {
    #[error("keep threshold {0} outside [1, 10]")]
    BadThreshold(u8),
    #[error("max_in_flight must be at least 1")]
    NoConcurrency,
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        if !(1..=10).contains(&self.keep_threshold) {
            return Err(EnhanceError::BadThreshold(self.keep_threshold));
        }
        if self.max_in_flight == 0 {
            return Err(EnhanceError::NoConcurrency);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairOutcome {
    Scored(EarlyStopResult),
    Quarantined(ScoreFailure),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Replies kept arriving truncated or malformed.
    Unreadable,
    BackendUnavailable,
    BackendFatal,
}

/// A pair the scorer never produced a usable reply for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub pair_id: String,
    pub kind: FailureKind,
    pub attempts: u32,
    pub detail: String,
}

impl Record for ScoreFailure {
    fn check(&self) -> Result<(), RecordError> {
        if self.pair_id.is_empty() {
            return Err(RecordError::invalid("empty pair id"));
        }
        Ok(())
    }
}

/// Applies the keep-or-rewrite rule to one scored pair.
pub fn decide(pair: &RawPair, outcome: &PairOutcome, keep_threshold: u8) -> EnhancedPair {
    let mut out = EnhancedPair {
        id: pair.id.clone(),
        image_ref: pair.image_ref.clone(),
        final_caption: pair.caption.clone(),
        overall_score: None,
        was_rewritten: false,
        original_caption: pair.caption.clone(),
        flag: None,
    };
    match outcome {
        PairOutcome::Quarantined(_) => out.flag = Some(EnhanceFlag::Quarantined),
        PairOutcome::Scored(result) => {
            out.overall_score = Some(result.overall);
            match (result.overall >= keep_threshold, &result.recaption) {
                (true, None) => {}
                (true, Some(_)) => out.flag = Some(EnhanceFlag::UnexpectedRecaption),
                (false, Some(recaption)) => {
                    out.final_caption = recaption.clone();
                    out.was_rewritten = true;
                }
                (false, None) => out.flag = Some(EnhanceFlag::MissingRecaption),
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub total: usize,
    /// Original caption retained after scoring (includes missing recaptions).
    pub kept: usize,
    pub rewritten: usize,
    pub missing_recaption: usize,
    pub unexpected_recaption: usize,
    pub quarantined: usize,
    pub stopped_early: usize,
    /// Reply characters read across all scored pairs.
    pub consumed_chars: u64,
    pub histogram: Histogram,
}

impl RunStats {
    fn record(&mut self, pair: &EnhancedPair, outcome: &PairOutcome) {
        self.total += 1;
        if let PairOutcome::Scored(r) = outcome {
            self.stopped_early += r.stopped_early as usize;
            self.consumed_chars += r.consumed_chars as u64;
            self.histogram.add(r.overall);
        }
        match pair.flag {
            Some(EnhanceFlag::Quarantined) => self.quarantined += 1,
            Some(EnhanceFlag::MissingRecaption) => self.missing_recaption += 1,
            Some(EnhanceFlag::UnexpectedRecaption) => self.unexpected_recaption += 1,
            None => {}
        }
        if pair.was_rewritten {
            self.rewritten += 1;
        } else if pair.flag != Some(EnhanceFlag::Quarantined) {
            self.kept += 1;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnhanceRun {
    /// One output per input, in input order.
    pub pairs: Vec<EnhancedPair>,
    pub failures: Vec<ScoreFailure>,
    pub stats: RunStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterRun {
    /// Selected pairs, best first.
    pub selected: Vec<EnhancedPair>,
    pub failures: Vec<ScoreFailure>,
    pub scored: usize,
}

/// Drives a [`ScorerModel`] over a corpus.
pub struct Enhancer<M> {
    model: M,
    config: EnhanceConfig,
    pools: InstructionPools,
    permits: Arc<Semaphore>,
}

impl<M: ScorerModel> Enhancer<M> {
    pub fn new(model: M, config: EnhanceConfig) -> Result<Self, EnhanceError> {
        config.validate()?;
        let permits = Arc::new(Semaphore::new(config.max_in_flight));
        Ok(Self {
            model,
            config,
            pools: InstructionPools::default(),
            permits,
        })
    }

    /// Shares a permit pool with other callers of the same backend.
    pub fn with_permits(mut self, permits: Arc<Semaphore>) -> Self {
        self.permits = permits;
        self
    }

    pub fn config(&self) -> &EnhanceConfig {
        &self.config
    }

    pub fn request(&self, pair: &RawPair, attempt: u32) -> ScorerRequest {
        ScorerRequest {
            pair_id: pair.id.clone(),
            image_ref: pair.image_ref.clone(),
            caption: pair.caption.clone(),
            user_text: compose_user_for(&pair.id, CaptionVariant::Original, &pair.caption, &self.pools, self.config.seed),
            attempt,
        }
    }

    /// Scores one pair, stopping each generation at the marker.
    pub async fn score(&self, pair: &RawPair) -> PairOutcome {
        let (mut retries, mut reasks, mut attempt) = (0u32, 0u32, 0u32);
        loop {
            let request = self.request(pair, attempt);
            attempt += 1;
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                match self.model.generate(&request).await {
                    Ok(stream) => parse_stream(stream).await,
                    Err(e) => Err(e),
                }
            };
            let failure = |kind: FailureKind, detail: String| {
                PairOutcome::Quarantined(ScoreFailure {
                    pair_id: pair.id.clone(),
                    kind,
                    attempts: attempt,
                    detail,
                })
            };
            match result {
                Ok(Ok(scored)) => return PairOutcome::Scored(scored),
                Ok(Err(e)) if reasks < self.config.reask_limit => {
                    tracing::debug!(pair = %pair.id, error = %e, "re-asking scorer");
                    reasks += 1;
                }
                Ok(Err(e)) => return failure(FailureKind::Unreadable, e.to_string()),
                Err(BackendError::Unavailable(d)) if retries < self.config.retry_limit => {
                    tracing::debug!(pair = %pair.id, error = %d, "retrying scorer");
                    let delay = self.config.backoff.saturating_mul(1u32 << retries.min(16));
                    if !delay.is_zero() {
                        tokio::time::sleep(delay).await;
                    }
                    retries += 1;
                }
                Err(BackendError::Unavailable(d)) => return failure(FailureKind::BackendUnavailable, d),
                Err(BackendError::Fatal(d)) => return failure(FailureKind::BackendFatal, d),
            }
        }
    }

    pub async fn enhance_pair(&self, pair: &RawPair) -> EnhancedPair {
        decide(pair, &self.score(pair).await, self.config.keep_threshold)
    }

    async fn score_all(&self, pairs: &[RawPair]) -> Vec<PairOutcome> {
        fstream::iter(pairs)
            .map(|p| self.score(p))
            .buffered(self.config.max_in_flight)
            .collect()
            .await
    }

    /// Enhances every pair; output order and cardinality match the input.
    pub async fn enhance_dataset(&self, pairs: &[RawPair]) -> EnhanceRun {
        let outcomes = self.score_all(pairs).await;
        let mut run = EnhanceRun {
            pairs: Vec::with_capacity(pairs.len()),
            ..EnhanceRun::default()
        };
        for (pair, outcome) in pairs.iter().zip(outcomes) {
            let enhanced = decide(pair, &outcome, self.config.keep_threshold);
            run.stats.record(&enhanced, &outcome);
            if let PairOutcome::Quarantined(f) = outcome {
                run.failures.push(f);
            }
            run.pairs.push(enhanced);
        }
        run
    }

    /// Keeps the `k` best-scoring pairs with their original captions.
    /// Quarantined pairs are never selected.
    pub async fn filter_dataset(&self, pairs: &[RawPair], k: usize) -> FilterRun {
        let outcomes = self.score_all(pairs).await;
        let mut run = FilterRun::default();
        let mut scored = Vec::new();
        let mut by_id = std::collections::HashMap::new();
        for (pair, outcome) in pairs.iter().zip(&outcomes) {
            match outcome {
                PairOutcome::Scored(r) => {
                    scored.push(Scored {
                        id: pair.id.clone(),
                        overall: r.overall,
                    });
                    by_id.insert(pair.id.as_str(), (pair, r.overall));
                }
                PairOutcome::Quarantined(f) => run.failures.push(f.clone()),
            }
        }
        run.scored = scored.len();
        run.selected = filter_topk(&scored, k)
            .into_iter()
            .map(|id| {
                let (pair, overall) = by_id[id.as_str()];
                EnhancedPair {
                    id: pair.id.clone(),
                    image_ref: pair.image_ref.clone(),
                    final_caption: pair.caption.clone(),
                    overall_score: Some(overall),
                    was_rewritten: false,
                    original_caption: pair.caption.clone(),
                    flag: None,
                }
            })
            .collect();
        run
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<RawPair> {
        (0..n)
            .map(|i| RawPair::new(format!("0:{i}"), format!("img/{i}.jpg"), format!("caption number {i}")))
            .collect()
    }

    fn config(keep: u8) -> EnhanceConfig {
        EnhanceConfig {
            keep_threshold: keep,
            backoff: Duration::ZERO,
            ..EnhanceConfig::default()
        }
    }

    fn scored(overall: u8, recaption: Option<&str>) -> PairOutcome {
        PairOutcome::Scored(EarlyStopResult {
            recaption: recaption.map(str::to_owned),
            overall,
            consumed_chars: 10,
            stopped_early: true,
        })
    }

    #[test]
    fn decision_rule() {
        let p = RawPair::new("a", "i", "orig");
        let kept = decide(&p, &scored(9, None), 8);
        assert_eq!((kept.final_caption.as_str(), kept.was_rewritten, kept.flag), ("orig", false, None));
        let rw = decide(&p, &scored(4, Some("New one.")), 8);
        assert_eq!((rw.final_caption.as_str(), rw.was_rewritten), ("New one.", true));
        assert_eq!(decide(&p, &scored(4, None), 8).flag, Some(EnhanceFlag::MissingRecaption));
        assert_eq!(decide(&p, &scored(8, Some("x")), 8).flag, Some(EnhanceFlag::UnexpectedRecaption));
        let q = decide(
            &p,
            &PairOutcome::Quarantined(ScoreFailure {
                pair_id: "a".into(),
                kind: FailureKind::Unreadable,
                attempts: 3,
                detail: "x".into(),
            }),
            8,
        );
        assert_eq!((q.overall_score, q.was_rewritten, q.flag), (None, false, Some(EnhanceFlag::Quarantined)));
        for out in [kept, rw, q] {
            out.check().unwrap();
        }
    }

    #[tokio::test]
    async fn volume_and_counting_oracle() {
        let input = pairs(1000);
        let mock = MockScorer::new(11).with_faults(0.05);
        let enhancer = Enhancer::new(mock.clone(), config(8)).unwrap();
        let run = enhancer.enhance_dataset(&input).await;
        assert_eq!(run.pairs.len(), input.len());
        for (a, b) in run.pairs.iter().zip(&input) {
            assert_eq!(a.id, b.id);
        }
        let expected_rewrites = input
            .iter()
            .filter(|p| !mock.is_faulty(&p.id) && mock.scores.overall_for(&p.id, &p.caption) < 8)
            .count();
        assert_eq!(run.stats.rewritten, expected_rewrites);
        let faulty = input.iter().filter(|p| mock.is_faulty(&p.id)).count();
        assert!(faulty > 0);
        assert_eq!(run.stats.quarantined, faulty);
        assert_eq!(run.failures.len(), faulty);
        assert!(run.failures.iter().all(|f| f.kind == FailureKind::Unreadable && f.attempts == 3));
        assert_eq!(run.stats.kept + run.stats.rewritten + run.stats.quarantined, 1000);
        assert_eq!(run.stats.histogram.total as usize, 1000 - faulty);
        assert_eq!(run.stats.histogram.below(8) as usize, run.stats.rewritten);
        assert_eq!(run.stats.stopped_early, 1000 - faulty);
    }

    #[tokio::test]
    async fn empty_input() {
        let enhancer = Enhancer::new(MockScorer::new(1), config(8)).unwrap();
        let run = enhancer.enhance_dataset(&[]).await;
        assert!(run.pairs.is_empty());
        assert_eq!(run.stats, RunStats::default());
    }

    #[tokio::test]
    async fn filter_matches_oracle() {
        let input = pairs(300);
        let mock = MockScorer::new(3);
        let enhancer = Enhancer::new(mock.clone(), config(8)).unwrap();
        let run = enhancer.filter_dataset(&input, 40).await;
        let mut oracle: Vec<(u8, String)> = input
            .iter()
            .map(|p| (mock.scores.overall_for(&p.id, &p.caption), p.id.clone()))
            .collect();
        oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let ids: Vec<_> = run.selected.iter().map(|p| p.id.clone()).collect();
        let expected: Vec<_> = oracle[..40].iter().map(|(_, id)| id.clone()).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn threshold_validation() {
        assert_eq!(config(0).validate(), Err(EnhanceError::BadThreshold(0)));
        assert_eq!(config(11).validate(), Err(EnhanceError::BadThreshold(11)));
        assert!(config(1).validate().is_ok());
    }
}
