//! Line-delimited record files.
//!
//! Every record is one compact JSON object per line. Key order follows the
//! struct declaration and map-valued fields are ordered maps, so serializing
//! equal records always yields identical bytes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::scores::ScoreError;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<RecordError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RecordError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        RecordError::Invalid(msg.into())
    }
}

/// A type stored in line-delimited record files.
pub trait Record: Serialize + DeserializeOwned {
    /// Invariants that the type system does not already enforce.
    fn check(&self) -> Result<(), RecordError> {
        Ok(())
    }
}

/// Serializes one record as a single newline-terminated line.
pub fn canonical_serialize<R: Record>(record: &R) -> Vec<u8> {
    let mut out = serde_json::to_vec(record).expect("record types always serialize");
    out.push(b'\n');
    out
}

/// Parses one line (with or without its trailing newline) and checks invariants.
pub fn parse_record<R: Record>(line: &str) -> Result<R, RecordError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let record: R = serde_json::from_str(line)?;
    record.check()?;
    Ok(record)
}

pub fn write_records<'a, R, W, I>(writer: W, records: I) -> io::Result<()>
where
    R: Record + 'a,
    W: Write,
    I: IntoIterator<Item = &'a R>,
{
    let mut writer = BufWriter::new(writer);
    for record in records {
        writer.write_all(&canonical_serialize(record))?;
    }
    writer.flush()
}

pub fn write_records_to<'a, R, I>(path: &Path, records: I) -> io::Result<()>
where
    R: Record + 'a,
    I: IntoIterator<Item = &'a R>,
{
    write_records(File::create(path)?, records)
}

/// Reads a whole record file. Blank lines are skipped; the first bad line
/// aborts with its 1-based line number.
pub fn read_records<R: Record>(path: &Path) -> Result<Vec<R>, RecordError> {
    read_records_from(BufReader::new(File::open(path)?))
}

pub fn read_records_from<R: Record, B: BufRead>(reader: B) -> Result<Vec<R>, RecordError> {
    let mut out = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(&line).map_err(|e| RecordError::AtLine {
            line: index + 1,
            source: Box::new(e),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{AnnotationRecord, CaptionVariant, RawPair};
    use crate::scores::CriterionScores;

    #[test]
    fn serialization_is_deterministic() {
        let mut p = RawPair::new("0:1", "img/1.jpg", "A cat");
        p.source_meta.insert("shard".into(), "0".into());
        p.source_meta.insert("dataset".into(), "laion".into());
        assert_eq!(canonical_serialize(&p), canonical_serialize(&p.clone()));
        assert_eq!(
            String::from_utf8(canonical_serialize(&p)).unwrap(),
            "{\"id\":\"0:1\",\"image_ref\":\"img/1.jpg\",\"caption\":\"A cat\",\"source_meta\":{\"dataset\":\"laion\",\"shard\":\"0\"}}\n"
        );
    }

    #[test]
    fn explanation_changes_bytes() {
        let a = AnnotationRecord::new("p", CaptionVariant::Original, "c", CriterionScores::uniform(5, "a")).unwrap();
        let mut b = a.clone();
        b.scores.object_detail.explanation.push('!');
        assert_ne!(canonical_serialize(&a), canonical_serialize(&b));
    }

    #[test]
    fn parse_rejects_invalid_records() {
        assert!(parse_record::<RawPair>(r#"{"id":"1","image_ref":"x","caption":"  "}"#).is_err());
        assert!(parse_record::<RawPair>(r#"{"id":"1","image_ref":"x","caption":"c","zzz":1}"#).is_err());
        assert!(parse_record::<RawPair>("not json").is_err());
        let ok: RawPair = parse_record("{\"id\":\"1\",\"image_ref\":\"x\",\"caption\":\"c\"}\r\n").unwrap();
        assert!(ok.source_meta.is_empty());
    }

    #[test]
    fn scores_out_of_range_fail_to_parse() {
        let a = AnnotationRecord::new("p", CaptionVariant::Original, "c", CriterionScores::uniform(5, "a")).unwrap();
        let line = String::from_utf8(canonical_serialize(&a)).unwrap();
        let broken = line.replace("\"Overall Score\":5", "\"Overall Score\":11");
        assert!(parse_record::<AnnotationRecord>(&broken).is_err());
    }

    #[test]
    fn read_reports_line_numbers() {
        let data = "{\"id\":\"1\",\"image_ref\":\"x\",\"caption\":\"c\"}\n\nbroken\n";
        let err = read_records_from::<RawPair, _>(data.as_bytes()).unwrap_err();
        assert!(matches!(err, RecordError::AtLine { line: 3, .. }));
    }
}
