//! Running the score, rewrite and degrade prompts against a backend.
//!
//! Each record is driven through its own retry loop:
//!
//! * transient backend failures are retried with exponential backoff up to
//!   `retry_limit` times, then the record is quarantined;
//! * schema violations are re-asked up to `reask_limit` times with the
//!   violation appended to the conversation;
//! * multi-sentence captions and degraded captions that do not score below
//!   the original get a single re-ask.
//!
//! Calls run in a bounded window of `max_in_flight` and results come back in
//! input order. The permit pool is shared, so several producers driving the
//! same [`Annotator`] still respect the limit together.

pub mod backend;
pub mod http;
pub mod mock;
pub mod prompt;
pub mod schema;

use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::codec::Record;
use crate::contrastive::{Route, Thresholds};
use crate::record::{is_single_sentence, AnnotationRecord, CaptionVariant, RawPair};

pub use backend::{BackendConfig, BackendError, ChatBackend, ChatMessage, ChatRequest};
pub use prompt::{PromptFamily, PromptTemplate};
pub use schema::{validate_response, SchemaViolation, ValidatedReply};

/// Re-asks granted for contract violations (sentence count, degrade ordering).
pub const CONTRACT_REASKS: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarantineKind {
    SchemaViolation,
    SentenceViolation,
    NotLower,
    BackendUnavailable,
    BackendFatal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineReason {
    pub kind: QuarantineKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ArchiveOutcome {
    Parsed { record: AnnotationRecord },
    Quarantined { reason: QuarantineReason },
}

/// One archive line: the request, every raw reply, and the final outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub pair_id: String,
    pub family: PromptFamily,
    pub request: ChatRequest,
    pub attempts: Vec<AttemptLog>,
    pub outcome: ArchiveOutcome,
}

impl Record for ArchiveEntry {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub pair_id: String,
    pub family: PromptFamily,
    pub reason: QuarantineReason,
}

impl Record for QuarantineEntry {}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotated {
    pub outcome: Result<AnnotationRecord, QuarantineReason>,
    pub archive: ArchiveEntry,
}

/// Results of a batch, in input order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationRun {
    pub records: Vec<AnnotationRecord>,
    pub quarantined: Vec<QuarantineEntry>,
    pub archive: Vec<ArchiveEntry>,
}

impl AnnotationRun {
    pub fn requested(&self) -> usize {
        self.archive.len()
    }

    /// Records quarantined because the backend stayed unavailable.
    pub fn backend_exhausted(&self) -> usize {
        self.quarantined
            .iter()
            .filter(|q| q.reason.kind == QuarantineKind::BackendUnavailable)
            .count()
    }

    fn push(&mut self, annotated: Annotated) {
        match annotated.outcome {
            Ok(record) => self.records.push(record),
            Err(reason) => self.quarantined.push(QuarantineEntry {
                pair_id: annotated.archive.pair_id.clone(),
                family: annotated.archive.family,
                reason,
            }),
        }
        self.archive.push(annotated.archive);
    }
}

impl FromIterator<Annotated> for AnnotationRun {
    fn from_iter<T: IntoIterator<Item = Annotated>>(iter: T) -> Self {
        let mut run = AnnotationRun::default();
        for a in iter {
            run.push(a);
        }
        run
    }
}

/// A phase-2 job: the pair and its phase-1 overall score.
#[derive(Clone, Debug)]
pub struct Phase2Job {
    pub pair: RawPair,
    pub family: PromptFamily,
    pub original_overall: u8,
}

pub struct Annotator<B> {
    backend: B,
    config: BackendConfig,
    templates: [PromptTemplate; 3],
    permits: Arc<Semaphore>,
}

enum Step {
    Done(Result<ValidatedReply, QuarantineReason>),
    Reask(String),
}

impl<B: ChatBackend> Annotator<B> {
    pub fn new(backend: B, config: BackendConfig) -> Self {
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Self {
            backend,
            templates: PromptFamily::ALL.map(PromptTemplate::for_family),
            config,
            permits,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    fn template(&self, family: PromptFamily) -> &PromptTemplate {
        &self.templates[PromptFamily::ALL.iter().position(|f| *f == family).unwrap()]
    }

    async fn call(&self, request: &mut ChatRequest, attempts: &mut Vec<AttemptLog>) -> Result<String, QuarantineReason> {
        let mut retries = 0;
        loop {
            request.meta.attempt = attempts.len() as u32;
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closes");
                self.backend.complete(request).await
            };
            match result {
                Ok(reply) => return Ok(reply),
                Err(err) => {
                    attempts.push(AttemptLog {
                        attempt: request.meta.attempt,
                        raw_reply: None,
                        error: Some(err.to_string()),
                    });
                    match err {
                        BackendError::Fatal(detail) => {
                            return Err(QuarantineReason {
                                kind: QuarantineKind::BackendFatal,
                                detail,
                            })
                        }
                        BackendError::Unavailable(detail) if retries >= self.config.retry_limit => {
                            return Err(QuarantineReason {
                                kind: QuarantineKind::BackendUnavailable,
                                detail,
                            })
                        }
                        BackendError::Unavailable(_) => {
                            let delay = self.config.backoff.saturating_mul(1u32 << retries.min(16));
                            if !delay.is_zero() {
                                tokio::time::sleep(delay).await;
                            }
                            retries += 1;
                        }
                    }
                }
            }
        }
    }

    /// Drives one record to a validated reply or a quarantine reason.
    async fn run(
        &self,
        family: PromptFamily,
        pair: &RawPair,
        original_overall: Option<u8>,
    ) -> (Result<ValidatedReply, QuarantineReason>, ChatRequest, Vec<AttemptLog>) {
        let initial = ChatRequest::annotation(&self.config, self.template(family), pair);
        let mut request = initial.clone();
        let mut attempts = Vec::new();
        let mut schema_reasks = 0;
        let mut contract_reasks = 0;

        let result = loop {
            let raw = match self.call(&mut request, &mut attempts).await {
                Ok(raw) => raw,
                Err(reason) => break Err(reason),
            };
            let step = match validate_response(family, &raw) {
                Err(violation) => {
                    if schema_reasks < self.config.reask_limit {
                        schema_reasks += 1;
                        Step::Reask(format!("schema violation ({}): {violation}", violation.code()))
                    } else {
                        Step::Done(Err(QuarantineReason {
                            kind: QuarantineKind::SchemaViolation,
                            detail: format!("schema violation ({}): {violation}", violation.code()),
                        }))
                    }
                }
                Ok(reply) => match contract_violation(family, &reply, original_overall) {
                    None => Step::Done(Ok(reply)),
                    Some((_, detail)) if contract_reasks < CONTRACT_REASKS => {
                        contract_reasks += 1;
                        Step::Reask(detail)
                    }
                    Some((kind, detail)) => Step::Done(Err(QuarantineReason { kind, detail })),
                },
            };
            attempts.push(AttemptLog {
                attempt: request.meta.attempt,
                raw_reply: Some(raw.clone()),
                error: match &step {
                    Step::Done(Ok(_)) => None,
                    Step::Done(Err(reason)) => Some(reason.detail.clone()),
                    Step::Reask(detail) => Some(detail.clone()),
                },
            });
            match step {
                Step::Done(result) => break result,
                Step::Reask(detail) => {
                    request.messages.push(ChatMessage::text("assistant", raw));
                    request.messages.push(ChatMessage::text(
                        "user",
                        format!("Your previous reply was rejected: {detail}. Reply again with a JSON object that follows the schema."),
                    ));
                }
            }
        };
        (result, initial, attempts)
    }

    async fn annotate(&self, family: PromptFamily, pair: &RawPair, original_overall: Option<u8>) -> Annotated {
        let (result, request, attempts) = self.run(family, pair, original_overall).await;
        let outcome = result.and_then(|reply| {
            let (variant, caption) = match family {
                PromptFamily::Score => (CaptionVariant::Original, pair.caption.clone()),
                PromptFamily::RewriteHigh => (CaptionVariant::RewrittenHigh, reply.caption.clone().unwrap_or_default()),
                PromptFamily::GenerateLow => (CaptionVariant::GeneratedLow, reply.caption.clone().unwrap_or_default()),
            };
            AnnotationRecord::new(pair.id.clone(), variant, caption, reply.scores).map_err(|e| QuarantineReason {
                kind: QuarantineKind::SchemaViolation,
                detail: e.to_string(),
            })
        });
        let archive = ArchiveEntry {
            pair_id: pair.id.clone(),
            family,
            request,
            attempts,
            outcome: match &outcome {
                Ok(record) => ArchiveOutcome::Parsed { record: record.clone() },
                Err(reason) => ArchiveOutcome::Quarantined { reason: reason.clone() },
            },
        };
        Annotated { outcome, archive }
    }

    /// Phase-1 scoring of an original caption.
    pub async fn score_pair(&self, pair: &RawPair) -> Annotated {
        self.annotate(PromptFamily::Score, pair, None).await
    }

    /// Asks for a one-sentence improved caption with its self-assessed scores.
    pub async fn rewrite_caption(&self, pair: &RawPair, original_overall: u8) -> Annotated {
        self.annotate(PromptFamily::RewriteHigh, pair, Some(original_overall)).await
    }

    /// Asks for a one-sentence degraded caption scoring below the original.
    pub async fn generate_bad_caption(&self, pair: &RawPair, original_overall: u8) -> Annotated {
        self.annotate(PromptFamily::GenerateLow, pair, Some(original_overall)).await
    }

    /// Scores every pair; output order equals input order.
    pub async fn score_all(&self, pairs: &[RawPair]) -> AnnotationRun {
        stream::iter(pairs)
            .map(|pair| self.score_pair(pair))
            .buffered(self.config.max_in_flight.max(1))
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect()
    }

    pub async fn run_phase2(&self, jobs: &[Phase2Job]) -> AnnotationRun {
        stream::iter(jobs)
            .map(|job| self.annotate(job.family, &job.pair, Some(job.original_overall)))
            .buffered(self.config.max_in_flight.max(1))
            .collect::<Vec<_>>()
            .await
            .into_iter()
            .collect()
    }
}

/// Routes phase-1 records to phase-2 jobs, in phase-1 order. Records whose
/// pair is missing from `pairs` are skipped and returned separately.
pub fn plan_phase2<'a>(
    pairs: &'a [RawPair],
    phase1: &[AnnotationRecord],
    thresholds: Thresholds,
) -> (Vec<Phase2Job>, Vec<String>) {
    let by_id: std::collections::HashMap<&str, &'a RawPair> =
        pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut jobs = Vec::new();
    let mut orphans = Vec::new();
    for record in phase1 {
        let family = match thresholds.route(record) {
            Route::RequestRewrite => PromptFamily::RewriteHigh,
            Route::RequestDegrade => PromptFamily::GenerateLow,
            Route::NoPhase2 => continue,
        };
        match by_id.get(record.pair_id.as_str()) {
            Some(pair) => jobs.push(Phase2Job {
                pair: (*pair).clone(),
                family,
                original_overall: record.overall(),
            }),
            None => orphans.push(record.pair_id.clone()),
        }
    }
    (jobs, orphans)
}

fn contract_violation(
    family: PromptFamily,
    reply: &ValidatedReply,
    original_overall: Option<u8>,
) -> Option<(QuarantineKind, String)> {
    if family == PromptFamily::Score {
        return None;
    }
    let caption = reply.caption.as_deref().unwrap_or_default();
    if !is_single_sentence(caption) {
        return Some((
            QuarantineKind::SentenceViolation,
            "the caption must be exactly one sentence".into(),
        ));
    }
    if family == PromptFamily::GenerateLow {
        if let Some(original) = original_overall {
            if reply.scores.overall.score >= original {
                return Some((
                    QuarantineKind::NotLower,
                    format!(
                        "the bad caption scored {} but must score below the original {original}",
                        reply.scores.overall.score
                    ),
                ));
            }
        }
    }
    None
}
