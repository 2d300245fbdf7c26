//! Backend abstraction and the chat-completion wire types.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::record::RawPair;

use super::prompt::{PromptFamily, PromptTemplate};

pub const MAX_RETRY_LIMIT: u32 = 10;
pub const MAX_IN_FLIGHT: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model_name: String,
    pub max_in_flight: usize,
    /// Retries for transient failures, on top of the first call.
    pub retry_limit: u32,
    /// Re-asks after a schema violation before the record is quarantined.
    pub reask_limit: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// First backoff delay; doubles on every retry.
    #[serde(with = "millis")]
    pub backoff: Duration,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// Extra request parameters (temperature and so on), passed through untouched.
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

pub(crate) mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "gpt-4o-2024-08-06".into(),
            max_in_flight: 16,
            retry_limit: 3,
            reask_limit: 2,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(500),
            credential_env: "OPENAI_API_KEY".into(),
            params: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 || self.max_in_flight > MAX_IN_FLIGHT {
            return Err(format!("max_in_flight must be in [1, {MAX_IN_FLIGHT}]"));
        }
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(format!("retry_limit must be at most {MAX_RETRY_LIMIT}"));
        }
        if self.reask_limit > MAX_RETRY_LIMIT {
            return Err(format!("reask_limit must be at most {MAX_RETRY_LIMIT}"));
        }
        if self.endpoint.trim().is_empty() {
            return Err("endpoint is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    /// Retrying will not help: bad credentials, malformed request.
    #[error("backend rejected the request: {0}")]
    Fatal(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: MessageContent,
}

impl ChatMessage {
    pub fn text(role: &str, text: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: MessageContent::Text(text.into()),
        }
    }
}

/// Identifies the record a request belongs to. Not sent on the wire.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RequestMeta {
    pub pair_id: String,
    pub family: Option<PromptFamily>,
    /// Zero-based call index within the record, counting retries and re-asks.
    pub attempt: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_format: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<bool>,
    #[serde(flatten)]
    pub params: BTreeMap<String, Value>,
    #[serde(skip)]
    pub meta: RequestMeta,
}

impl ChatRequest {
    /// System prompt, then one user turn with the image and the caption.
    pub fn annotation(config: &BackendConfig, template: &PromptTemplate, pair: &RawPair) -> Self {
        let user = ChatMessage {
            role: "user".into(),
            content: MessageContent::Parts(vec![
                ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: pair.image_ref.clone(),
                    },
                },
                ContentPart::Text {
                    text: format!("Caption: {}", pair.caption),
                },
            ]),
        };
        Self {
            model: config.model_name.clone(),
            messages: vec![ChatMessage::text("system", template.system_text.clone()), user],
            response_format: Some(template.response_format()),
            stream: None,
            params: config.params.clone(),
            meta: RequestMeta {
                pair_id: pair.id.clone(),
                family: Some(template.family),
                attempt: 0,
            },
        }
    }

    /// The caption text of the first user turn, if any.
    pub fn caption(&self) -> Option<&str> {
        self.messages.iter().find(|m| m.role == "user").and_then(|m| match &m.content {
            MessageContent::Text(t) => Some(t.as_str()),
            MessageContent::Parts(parts) => parts.iter().find_map(|p| match p {
                ContentPart::Text { text } => Some(text.strip_prefix("Caption: ").unwrap_or(text)),
                _ => None,
            }),
        })
    }

    pub fn image_locator(&self) -> Option<&str> {
        self.messages.iter().find_map(|m| match &m.content {
            MessageContent::Parts(parts) => parts.iter().find_map(|p| match p {
                ContentPart::ImageUrl { image_url } => Some(image_url.url.as_str()),
                _ => None,
            }),
            _ => None,
        })
    }
}

/// Something that answers chat-completion requests with the reply text.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[async_trait]
impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let config = BackendConfig::default();
        let template = PromptTemplate::for_family(PromptFamily::Score);
        let pair = RawPair::new("0:0", "http://x/img.jpg", "a dog");
        let mut req = ChatRequest::annotation(&config, &template, &pair);
        req.params.insert("temperature".into(), serde_json::json!(0.2));
        let wire = serde_json::to_value(&req).unwrap();
        assert_eq!(wire["messages"][0]["role"], "system");
        assert_eq!(wire["messages"][1]["content"][0]["type"], "image_url");
        assert_eq!(wire["messages"][1]["content"][0]["image_url"]["url"], "http://x/img.jpg");
        assert_eq!(wire["messages"][1]["content"][1]["text"], "Caption: a dog");
        assert_eq!(wire["response_format"]["json_schema"]["name"], "caption_score");
        assert_eq!(wire["temperature"], 0.2);
        assert!(wire.get("meta").is_none());
        assert_eq!(req.caption(), Some("a dog"));
        assert_eq!(req.image_locator(), Some("http://x/img.jpg"));
    }

    #[test]
    fn config_limits() {
        let mut c = BackendConfig::default();
        c.validate().unwrap();
        c.retry_limit = 11;
        assert!(c.validate().is_err());
        c.retry_limit = 0;
        c.max_in_flight = 0;
        assert!(c.validate().is_err());
        c.max_in_flight = 1025;
        assert!(c.validate().is_err());
    }
}
