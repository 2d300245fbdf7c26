//! Chat-completion client over HTTP.

use std::path::Path;

use async_trait::async_trait;
use base64::Engine;
use serde_json::Value;

use super::backend::{BackendConfig, BackendError, ChatBackend, ChatRequest, ContentPart, MessageContent};

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    /// The API key is read from the environment variable named in the config;
    /// when it is unset requests go out without an `Authorization` header.
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        let api_key = std::env::var(&config.credential_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            tracing::warn!(var = %config.credential_env, "no credential found in environment");
        }
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            api_key,
        })
    }

    pub(crate) async fn post(&self, request: &ChatRequest) -> Result<reqwest::Response, BackendError> {
        let body = inline_local_images(request)?;
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(classify)?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let detail = response.text().await.unwrap_or_default();
        let msg = format!("HTTP {status}: {}", detail.chars().take(200).collect::<String>());
        if status.as_u16() == 429 || status.is_server_error() || status.as_u16() == 408 {
            Err(BackendError::Unavailable(msg))
        } else {
            Err(BackendError::Fatal(msg))
        }
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_builder() {
        BackendError::Fatal(e.to_string())
    } else {
        BackendError::Unavailable(e.to_string())
    }
}

/// Local image paths are sent as base64 data URLs; remote URLs pass through.
fn inline_local_images(request: &ChatRequest) -> Result<ChatRequest, BackendError> {
    let mut request = request.clone();
    for message in &mut request.messages {
        let MessageContent::Parts(parts) = &mut message.content else {
            continue;
        };
        for part in parts {
            if let ContentPart::ImageUrl { image_url } = part {
                image_url.url = image_data_url(&image_url.url)?;
            }
        }
    }
    Ok(request)
}

pub fn image_data_url(locator: &str) -> Result<String, BackendError> {
    let lower = locator.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("data:") {
        return Ok(locator.to_owned());
    }
    let path = locator.strip_prefix("file://").unwrap_or(locator);
    let bytes = std::fs::read(path).map_err(|e| BackendError::Fatal(format!("cannot read image {path}: {e}")))?;
    let mime = match Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    };
    let payload = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(format!("data:{mime};base64,{payload}"))
}

/// Pulls `choices[0].message.content` out of a completion body.
pub fn extract_content(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Unavailable("completion body has no message content".into()))
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let response = self.post(request).await?;
        let body: Value = response.json().await.map_err(classify)?;
        extract_content(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn remote_urls_pass_through() {
        assert_eq!(image_data_url("https://a/b.png").unwrap(), "https://a/b.png");
    }

    #[test]
    fn local_files_become_data_urls() {
        let mut f = tempfile::Builder::new().suffix(".png").tempfile().unwrap();
        f.write_all(b"abc").unwrap();
        let url = image_data_url(f.path().to_str().unwrap()).unwrap();
        assert_eq!(url, "data:image/png;base64,YWJj");
        assert!(matches!(image_data_url("/no/such/file.jpg"), Err(BackendError::Fatal(_))));
    }

    #[test]
    fn content_extraction() {
        let body = serde_json::json!({"choices": [{"message": {"content": "{}"}}]});
        assert_eq!(extract_content(&body).unwrap(), "{}");
        assert!(extract_content(&serde_json::json!({})).is_err());
    }
}
