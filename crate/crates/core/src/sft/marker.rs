//! The `<overall>` stop marker and its escaping.
//!
//! Text that itself contains the marker is escaped by doubling it to
//! `<<overall>>`. After escaping, every marker occurrence inside free text is
//! immediately preceded by `<`, so the single real marker is the only one
//! that is not. Both the batch parser and the streaming scanner rely on this.

use std::borrow::Cow;

pub const MARKER: &str = "<overall>";
pub const ESCAPED_MARKER: &str = "<<overall>>";

/// Escapes marker occurrences; the flag reports whether any were found.
pub fn escape(text: &str) -> (Cow<'_, str>, bool) {
    if text.contains(MARKER) {
        (Cow::Owned(text.replace(MARKER, ESCAPED_MARKER)), true)
    } else {
        (Cow::Borrowed(text), false)
    }
}

/// Reverses [`escape`]. Returns `None` when the text holds a bare marker,
/// which [`escape`] can never produce.
pub fn unescape(text: &str) -> Option<String> {
    if !text.contains(MARKER) {
        return Some(text.to_owned());
    }
    // Every marker must sit inside a doubled block.
    if real_markers(text).next().is_some() {
        return None;
    }
    Some(text.replace(ESCAPED_MARKER, MARKER))
}

/// Byte offsets of markers not preceded by `<`.
pub fn real_markers(text: &str) -> impl Iterator<Item = usize> + '_ {
    text.match_indices(MARKER)
        .map(|(i, _)| i)
        .filter(move |&i| i == 0 || text.as_bytes()[i - 1] != b'<')
}

pub fn marker_count(text: &str) -> usize {
    real_markers(text).count()
}
