//! Incremental scanner that stops reading a reply at the `<overall>` marker.
//!
//! The scanner keeps the consumed prefix (it needs the recaption) but only
//! re-examines the last `MARKER.len()` bytes of the previous buffer on each
//! push, so a marker split across chunks is found without rescanning.

use futures::{FutureExt, Stream, StreamExt};
use thiserror::Error;

use crate::scores::{Criterion, ScoreError};
use crate::sft::{marker, parse_overall_value, TargetError, MARKER, RECAPTION_KEY};

/// Replies longer than this without a marker are rejected as malformed.
pub const MAX_PREFIX_BYTES: usize = 64 * 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EarlyStopResult {
    pub recaption: Option<String>,
    pub overall: u8,
    /// Characters up to and including the marker.
    pub consumed_chars: usize,
    /// True when reading stopped before the end of the reply.
    pub stopped_early: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StreamError {
    #[error("stream ended after {consumed_chars} characters without an overall marker")]
    Truncated { consumed_chars: usize },
    #[error("malformed reply prefix: {0}")]
    Layout(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl From<TargetError> for StreamError {
    fn from(e: TargetError) -> Self {
        match e {
            TargetError::Layout(m) => StreamError::Layout(m),
            TargetError::Score(s) => StreamError::Score(s),
        }
    }
}

#[derive(Debug, Default)]
pub struct EarlyStopScanner {
    buf: String,
    scan_from: usize,
}

impl EarlyStopScanner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one fragment. Returns the result once the marker is complete;
    /// the caller should then stop generation.
    pub fn push(&mut self, chunk: &str) -> Result<Option<EarlyStopResult>, StreamError> {
        self.buf.push_str(chunk);
        if let Some(first) = self.buf.trim_start().chars().next() {
            if first != '{' {
                return Err(StreamError::Layout("reply does not start with '{'".into()));
            }
        }
        let mut from = self.scan_from;
        while !self.buf.is_char_boundary(from) {
            from -= 1;
        }
        let window = &self.buf[from..];
        // A hit preceded by `<` is the middle of an escaped marker.
        let hit = window.match_indices(MARKER).map(|(i, _)| from + i).find(|&i| {
            i == 0 || self.buf.as_bytes()[i - 1] != b'<'
        });
        match hit {
            Some(start) => {
                let end = start + MARKER.len();
                let trailing = end < self.buf.len();
                let mut result = parse_prefix(&self.buf[..end])?;
                result.stopped_early = trailing;
                Ok(Some(result))
            }
            None => {
                if self.buf.len() > MAX_PREFIX_BYTES {
                    return Err(StreamError::Layout(format!(
                        "no marker within {MAX_PREFIX_BYTES} bytes"
                    )));
                }
                // Keep enough to see a marker straddling the next boundary,
                // plus the byte that decides whether it is escaped.
                self.scan_from = self.buf.len().saturating_sub(MARKER.len());
                Ok(None)
            }
        }
    }

    /// Call when the stream ends without a result.
    pub fn finish(self) -> StreamError {
        StreamError::Truncated {
            consumed_chars: self.buf.chars().count(),
        }
    }
}

/// Scans fragments until the marker is complete. Fragments after the one
/// holding the marker are never pulled from the iterator.
pub fn parse_streaming<I, S>(chunks: I) -> Result<EarlyStopResult, StreamError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut scanner = EarlyStopScanner::new();
    let mut chunks = chunks.into_iter().peekable();
    while let Some(chunk) = chunks.next() {
        if let Some(mut result) = scanner.push(chunk.as_ref())? {
            result.stopped_early |= chunks.peek().is_some();
            return Ok(result);
        }
    }
    Err(scanner.finish())
}

/// Async variant over a fallible chunk stream. The stream is dropped as soon
/// as the marker is found, which cancels generation for HTTP streams.
pub async fn parse_stream<S, E>(stream: S) -> Result<Result<EarlyStopResult, StreamError>, E>
where
    S: Stream<Item = Result<String, E>> + Unpin,
{
    let mut stream = stream;
    let mut scanner = EarlyStopScanner::new();
    while let Some(chunk) = stream.next().await {
        match scanner.push(&chunk?) {
            Err(e) => return Ok(Err(e)),
            Ok(Some(mut result)) => {
                // Only look at what is already buffered; never wait for more.
                result.stopped_early |= !matches!(stream.next().now_or_never(), Some(None));
                return Ok(Ok(result));
            }
            Ok(None) => {}
        }
    }
    Ok(Err(scanner.finish()))
}

struct Cursor<'a> {
    s: &'a str,
    i: usize,
}

impl<'a> Cursor<'a> {
    fn ws(&mut self) {
        while let Some(c) = self.s[self.i..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.i += c.len_utf8();
        }
    }

    fn expect(&mut self, c: char) -> Result<(), StreamError> {
        self.ws();
        if self.s[self.i..].starts_with(c) {
            self.i += c.len_utf8();
            Ok(())
        } else {
            Err(StreamError::Layout(format!("expected {c:?} at offset {}", self.i)))
        }
    }

    /// A complete JSON string literal.
    fn string(&mut self) -> Result<String, StreamError> {
        self.ws();
        let start = self.i;
        let bytes = self.s.as_bytes();
        if bytes.get(start) != Some(&b'"') {
            return Err(StreamError::Layout(format!("expected a string at offset {start}")));
        }
        let mut j = start + 1;
        while j < bytes.len() {
            match bytes[j] {
                b'\\' => j += 2,
                b'"' => {
                    self.i = j + 1;
                    return serde_json::from_str(&self.s[start..=j])
                        .map_err(|e| StreamError::Layout(format!("bad string literal: {e}")));
                }
                _ => j += 1,
            }
        }
        Err(StreamError::Layout("unterminated string before marker".into()))
    }
}

/// Parses `{"Recaption": "...", "Overall Score": "N<overall>` or
/// `{"Overall Score": "N<overall>`.
fn parse_prefix(prefix: &str) -> Result<EarlyStopResult, StreamError> {
    let mut c = Cursor { s: prefix, i: 0 };
    c.expect('{')?;
    let mut key = c.string()?;
    c.expect(':')?;
    let mut recaption = None;
    if key == RECAPTION_KEY {
        let raw = c.string()?;
        recaption = Some(
            marker::unescape(&raw).ok_or_else(|| StreamError::Layout("unescaped marker in recaption".into()))?,
        );
        c.expect(',')?;
        key = c.string()?;
        c.expect(':')?;
    }
    if key != Criterion::Overall.score_key() {
        return Err(StreamError::Layout(format!("unexpected leading key {key:?}")));
    }
    c.expect('"')?;
    let overall = parse_overall_value(&prefix[c.i..])?;
    Ok(EarlyStopResult {
        recaption,
        overall,
        consumed_chars: prefix.chars().count(),
        stopped_early: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straddling_marker() {
        let chunks = [
            "{\"Recaption\": \"A dog",
            " on grass.\", \"Overall Sc",
            "ore\": \"4<ove",
            "rall>\"...",
        ];
        let r = parse_streaming(chunks).unwrap();
        assert_eq!(r.recaption.as_deref(), Some("A dog on grass."));
        assert_eq!(r.overall, 4);
        assert!(r.stopped_early);
        let full: String = chunks.concat();
        assert_eq!(r.consumed_chars, full.find("<overall>").unwrap() + MARKER.len());
    }

    #[test]
    fn later_chunks_are_not_pulled() {
        let mut pulled = 0;
        let chunks = ["{\"Overall Score\": \"9<overall>\"", ", \"x\"", "..."]
            .into_iter()
            .inspect(|_| pulled += 1);
        let r = parse_streaming(chunks).unwrap();
        assert_eq!((r.recaption, r.overall), (None, 9));
        assert_eq!(pulled, 2, "one chunk consumed plus one peeked");
    }

    #[test]
    fn mid_marker_end_is_truncated() {
        let err = parse_streaming(["{\"Overall Score\": \"9<ove"]).unwrap_err();
        assert!(matches!(err, StreamError::Truncated { .. }));
        assert!(matches!(parse_streaming(Vec::<String>::new()), Err(StreamError::Truncated { consumed_chars: 0 })));
    }

    #[test]
    fn escaped_marker_in_recaption_is_skipped() {
        let text = "{\"Recaption\": \"x <<overall>> y.\", \"Overall Score\": \"2<overall>\", ";
        for split in 1..text.len() {
            if !text.is_char_boundary(split) {
                continue;
            }
            let r = parse_streaming([&text[..split], &text[split..]]).unwrap();
            assert_eq!(r.recaption.as_deref(), Some("x <overall> y."));
            assert_eq!(r.overall, 2);
        }
    }

    #[test]
    fn malformed_prefixes() {
        assert!(matches!(parse_streaming(["hello <overall>"]), Err(StreamError::Layout(_))));
        assert!(matches!(
            parse_streaming(["{\"Text Quality Score\": \"3<overall>\""]),
            Err(StreamError::Layout(_))
        ));
        assert!(matches!(
            parse_streaming(["{\"Overall Score\": \"12<overall>\""]),
            Err(StreamError::Score(_))
        ));
        assert!(matches!(
            parse_streaming(["{\"Overall Score\": \"a<overall>\""]),
            Err(StreamError::Layout(_))
        ));
    }

    #[test]
    fn exact_end_at_marker_is_not_early() {
        let r = parse_streaming(["{\"Overall Score\": \"9<overall>"]).unwrap();
        assert!(!r.stopped_early);
    }

    #[tokio::test]
    async fn async_stream_variant() {
        let chunks = vec![
            Ok::<_, ()>("{\"Overall Score\": \"7<ov".to_string()),
            Ok("erall>\", ".to_string()),
            Ok("\"Overall Explanation\": \"...\"}".to_string()),
        ];
        let r = parse_stream(futures::stream::iter(chunks)).await.unwrap().unwrap();
        assert_eq!(r.overall, 7);
        assert!(r.stopped_early);
        let failing = futures::stream::iter(vec![Err::<String, _>("boom")]);
        assert_eq!(parse_stream(failing).await.unwrap_err(), "boom");
    }
}
