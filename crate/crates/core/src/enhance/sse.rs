//! Decoder for server-sent-event chat-completion streams.

use serde_json::Value;
use thiserror::Error;

/// Lines longer than this are treated as a protocol error.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SseEvent {
    /// A fragment of generated text.
    Delta(String),
    /// The server signalled the end of the stream.
    Done,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SseError {
    #[error("event payload is not valid JSON: {0}")]
    BadPayload(String),
    #[error("server reported an error: {0}")]
    Server(String),
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    LineTooLong,
}

/// Splits a byte stream into lines (tolerating chunk boundaries anywhere,
/// including inside UTF-8 sequences) and decodes `data:` lines.
#[derive(Debug, Default)]
pub struct SseDecoder {
    pending: Vec<u8>,
}

impl SseDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<SseEvent>, SseError> {
        self.pending.extend_from_slice(bytes);
        let mut events = Vec::new();
        let mut start = 0;
        while let Some(offset) = self.pending[start..].iter().position(|&b| b == b'\n') {
            let end = start + offset;
            let line = String::from_utf8_lossy(&self.pending[start..end]).into_owned();
            start = end + 1;
            if let Some(event) = decode_line(&line)? {
                events.push(event);
            }
        }
        self.pending.drain(..start);
        if self.pending.len() > MAX_LINE_BYTES {
            return Err(SseError::LineTooLong);
        }
        Ok(events)
    }

    /// Decodes a final unterminated line, if any.
    pub fn finish(&mut self) -> Result<Option<SseEvent>, SseError> {
        let line = String::from_utf8_lossy(&std::mem::take(&mut self.pending)).into_owned();
        decode_line(&line)
    }
}

pub fn decode_line(line: &str) -> Result<Option<SseEvent>, SseError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let Some(data) = line.strip_prefix("data:") else {
        // comments, `event:`, `id:`, `retry:` and blank separators
        return Ok(None);
    };
    let data = data.strip_prefix(' ').unwrap_or(data);
    if data.trim() == "[DONE]" {
        return Ok(Some(SseEvent::Done));
    }
    let value: Value = serde_json::from_str(data).map_err(|e| SseError::BadPayload(e.to_string()))?;
    if let Some(error) = value.get("error") {
        let msg = error
            .get("message")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| error.to_string());
        return Err(SseError::Server(msg));
    }
    Ok(value
        .pointer("/choices/0/delta/content")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(|s| SseEvent::Delta(s.to_owned())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BODY: &str = "data: {\"choices\":[{\"delta\":{\"role\":\"assistant\"}}]}\n\n\
data: {\"choices\":[{\"delta\":{\"content\":\"{\\\"Overall\"}}]}\n\n\
: keep-alive\n\
data: {\"choices\":[{\"delta\":{\"content\":\" Score\\\": \\\"ü\"}}]}\r\n\r\n\
data: [DONE]\n\n";

    fn decode_all(chunks: &[&[u8]]) -> Vec<SseEvent> {
        let mut d = SseDecoder::new();
        let mut out = Vec::new();
        for c in chunks {
            out.extend(d.push(c).unwrap());
        }
        out.extend(d.finish().unwrap());
        out
    }

    #[test]
    fn decodes_deltas_and_done() {
        let events = decode_all(&[BODY.as_bytes()]);
        assert_eq!(
            events,
            vec![
                SseEvent::Delta("{\"Overall".into()),
                SseEvent::Delta(" Score\": \"ü".into()),
                SseEvent::Done
            ]
        );
    }

    #[test]
    fn byte_level_chunking_is_invisible() {
        let bytes = BODY.as_bytes();
        let whole = decode_all(&[bytes]);
        for split in 0..bytes.len() {
            assert_eq!(decode_all(&[&bytes[..split], &bytes[split..]]), whole, "split at {split}");
        }
        let singles: Vec<&[u8]> = bytes.chunks(1).collect();
        assert_eq!(decode_all(&singles), whole);
    }

    #[test]
    fn errors_are_surfaced() {
        assert!(matches!(decode_line("data: {nope"), Err(SseError::BadPayload(_))));
        assert_eq!(
            decode_line("data: {\"error\":{\"message\":\"overloaded\"}}"),
            Err(SseError::Server("overloaded".into()))
        );
        assert_eq!(decode_line("event: ping"), Ok(None));
    }

    #[test]
    fn unbounded_lines_are_rejected() {
        let mut d = SseDecoder::new();
        let big = vec![b'x'; MAX_LINE_BYTES + 1];
        assert_eq!(d.push(&big), Err(SseError::LineTooLong));
    }
}
