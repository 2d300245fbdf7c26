//! Generative scorers that stream replies in the SFT target layout.

use std::collections::VecDeque;

use async_trait::async_trait;
use futures::stream::{self, BoxStream, StreamExt};

use crate::contrastive::TrainingExample;
use crate::hash::{keyed_u64, unit_interval};
use crate::record::CaptionVariant;
use crate::scoring::backend::{BackendConfig, ChatMessage, ChatRequest, ContentPart, ImageUrl, MessageContent, RequestMeta};
use crate::scoring::http::HttpBackend;
use crate::scoring::mock::MockBackend;
use crate::scoring::BackendError;
use crate::sft::compose_target;

use super::sse::{SseDecoder, SseEvent};

pub type ReplyStream = BoxStream<'static, Result<String, BackendError>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScorerRequest {
    pub pair_id: String,
    pub image_ref: String,
    pub caption: String,
    /// The composed user turn (image placeholder and instructions).
    pub user_text: String,
    pub attempt: u32,
}

/// A trained scorer that streams its reply as text fragments.
#[async_trait]
pub trait ScorerModel: Send + Sync {
    async fn generate(&self, request: &ScorerRequest) -> Result<ReplyStream, BackendError>;
}

#[async_trait]
impl<T: ScorerModel + ?Sized> ScorerModel for std::sync::Arc<T> {
    async fn generate(&self, request: &ScorerRequest) -> Result<ReplyStream, BackendError> {
        (**self).generate(request).await
    }
}

/// Mock scorer built on the [`MockBackend`] score definition.
///
/// It emits a recaption only when the overall score is below
/// `rewrite_below`, and a `fault_rate` share of pairs always stream a reply
/// that ends before the marker.
#[derive(Clone, Debug)]
pub struct MockScorer {
    pub scores: MockBackend,
    pub rewrite_below: u8,
    pub fault_rate: f64,
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        Self {
            scores: MockBackend::new(seed),
            rewrite_below: 8,
            fault_rate: 0.0,
        }
    }

    pub fn with_faults(mut self, fault_rate: f64) -> Self {
        self.fault_rate = fault_rate;
        self
    }

    pub fn is_faulty(&self, pair_id: &str) -> bool {
        unit_interval(keyed_u64(self.scores.seed, "scorer-fault", &[pair_id.as_bytes()])) < self.fault_rate
    }

    /// The full reply the mock would generate for a pair.
    pub fn reply_for(&self, pair_id: &str, caption: &str) -> String {
        let scores = self.scores.score_for(pair_id, caption);
        let recaption = (scores.overall.score < self.rewrite_below).then(|| MockBackend::recaption_for(pair_id));
        compose_target(&TrainingExample {
            pair_id: pair_id.to_owned(),
            input_caption: caption.to_owned(),
            input_variant: CaptionVariant::Original,
            target_recaption: recaption,
            target_scores: scores,
        })
        .text
    }

    /// Deterministic fragmentation into pieces of 1 to 16 characters.
    pub fn fragment(&self, pair_id: &str, text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut n = 0u64;
        while i < chars.len() {
            let len = 1 + (keyed_u64(self.scores.seed, "scorer-chunk", &[pair_id.as_bytes(), &n.to_le_bytes()]) % 16) as usize;
            let end = (i + len).min(chars.len());
            out.push(chars[i..end].iter().collect());
            i = end;
            n += 1;
        }
        out
    }
}

#[async_trait]
impl ScorerModel for MockScorer {
    async fn generate(&self, request: &ScorerRequest) -> Result<ReplyStream, BackendError> {
        let mut reply = self.reply_for(&request.pair_id, &request.caption);
        if self.is_faulty(&request.pair_id) {
            let cut = reply.find("\"Overall Score\"").unwrap_or(0) + 8;
            reply.truncate(cut);
        }
        let chunks = self.fragment(&request.pair_id, &reply);
        Ok(stream::iter(chunks.into_iter().map(Ok)).boxed())
    }
}

/// Streams from an OpenAI-compatible chat-completion endpoint.
pub struct HttpScorer {
    http: HttpBackend,
    config: BackendConfig,
}

impl HttpScorer {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            http: HttpBackend::new(config)?,
            config: config.clone(),
        })
    }

    pub fn request(&self, request: &ScorerRequest) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: MessageContent::Parts(vec![
                    ContentPart::ImageUrl {
                        image_url: ImageUrl {
                            url: request.image_ref.clone(),
                        },
                    },
                    ContentPart::Text {
                        text: request.user_text.clone(),
                    },
                ]),
            }],
            response_format: None,
            stream: Some(true),
            params: self.config.params.clone(),
            meta: RequestMeta {
                pair_id: request.pair_id.clone(),
                family: None,
                attempt: request.attempt,
            },
        }
    }
}

struct SseState {
    bytes: BoxStream<'static, reqwest::Result<Vec<u8>>>,
    decoder: SseDecoder,
    queue: VecDeque<String>,
    done: bool,
}

#[async_trait]
impl ScorerModel for HttpScorer {
    async fn generate(&self, request: &ScorerRequest) -> Result<ReplyStream, BackendError> {
        let response = self.http.post(&self.request(request)).await?;
        let state = SseState {
            bytes: response.bytes_stream().map(|r| r.map(|b| b.to_vec())).boxed(),
            decoder: SseDecoder::new(),
            queue: VecDeque::new(),
            done: false,
        };
        let deltas = stream::unfold(state, |mut st| async move {
            loop {
                if let Some(text) = st.queue.pop_front() {
                    return Some((Ok(text), st));
                }
                if st.done {
                    return None;
                }
                let decoded = match st.bytes.next().await {
                    Some(Ok(bytes)) => st.decoder.push(&bytes),
                    Some(Err(e)) => Err(super::sse::SseError::Server(e.to_string())),
                    None => {
                        st.done = true;
                        st.decoder.finish().map(|e| e.into_iter().collect())
                    }
                };
                match decoded {
                    Ok(events) => {
                        for event in events {
                            match event {
                                SseEvent::Delta(text) => st.queue.push_back(text),
                                SseEvent::Done => st.done = true,
                            }
                        }
                    }
                    Err(e) => {
                        st.done = true;
                        st.queue.clear();
                        return Some((Err(BackendError::Unavailable(e.to_string())), st));
                    }
                }
            }
        });
        Ok(deltas.boxed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sft::parse_target;

    #[test]
    fn mock_reply_is_a_valid_target() {
        let m = MockScorer::new(5);
        for i in 0..200 {
            let id = format!("0:{i}");
            let reply = m.reply_for(&id, "a caption");
            let parsed = parse_target(&reply).unwrap();
            assert_eq!(parsed.recaption.is_some(), parsed.scores.overall.score < 8);
            assert_eq!(m.fragment(&id, &reply).concat(), reply);
        }
    }

    #[tokio::test]
    async fn faulty_pairs_truncate_before_marker() {
        let m = MockScorer::new(5).with_faults(1.0);
        let req = ScorerRequest {
            pair_id: "1".into(),
            image_ref: "x".into(),
            caption: "c".into(),
            user_text: "u".into(),
            attempt: 0,
        };
        let chunks: Vec<_> = m.generate(&req).await.unwrap().collect().await;
        let text: String = chunks.into_iter().map(Result::unwrap).collect();
        assert!(!text.contains("<overall>"));
    }
}
