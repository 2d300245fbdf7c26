//! Loading raw corpora into [`RawPair`] streams, deterministic sampling and
//! deduplication.

use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::io;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::hash::keyed_u64;
use crate::record::RawPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One JSON object per line with `image_ref`, `caption` and optional `id`.
    LineRecords,
    /// `image_ref<TAB>caption` per line.
    TabSeparated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub shard_paths: Vec<PathBuf>,
    pub format: CorpusFormat,
    /// Number of non-blank lines across all shards, when known up front.
    #[serde(default)]
    pub total_count: Option<u64>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("corpus manifest lists no shards")]
    EmptyManifest,
    #[error("shard {path} cannot be read: {source}")]
    MissingShard {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("manifest declares {expected} records but shards hold {actual}")]
    CountMismatch { expected: u64, actual: u64 },
}

/// A line that failed to parse. Loading continues past it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub shard: usize,
    pub line: usize,
    pub raw: String,
    pub error: String,
}

impl Reject {
    /// Renders the reject in the shard's own format plus an error column.
    pub fn to_line(&self, format: CorpusFormat) -> String {
        match format {
            CorpusFormat::LineRecords => {
                let mut object = Map::new();
                object.insert("shard".into(), Value::from(self.shard));
                object.insert("line".into(), Value::from(self.line));
                object.insert("raw".into(), Value::from(self.raw.clone()));
                object.insert("error".into(), Value::from(self.error.clone()));
                let mut line = Value::Object(object).to_string();
                line.push('\n');
                line
            }
            CorpusFormat::TabSeparated => {
                let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
                format!("{}\t{}\n", clean(&self.raw), clean(&self.error))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Loaded {
    pub pairs: Vec<RawPair>,
    pub rejects: Vec<Reject>,
}

/// Parses one shard line. Blank lines yield `Ok(None)`.
pub fn parse_line(
    format: CorpusFormat,
    shard: usize,
    line_index: usize,
    line: &str,
) -> Result<Option<RawPair>, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.trim().is_empty() {
        return Ok(None);
    }
    let mut pair = match format {
        CorpusFormat::LineRecords => parse_object_line(line)?,
        CorpusFormat::TabSeparated => {
            let (image_ref, caption) = line
                .split_once('\t')
                .ok_or_else(|| "expected image_ref<TAB>caption".to_string())?;
            RawPair::new("", image_ref.trim(), caption.trim())
        }
    };
    if pair.id.is_empty() {
        pair.id = format!("{shard}:{line_index}");
    }
    if pair.image_ref.trim().is_empty() {
        return Err("empty image_ref".into());
    }
    if pair.caption.trim().is_empty() {
        return Err("empty caption".into());
    }
    pair.source_meta.insert("shard".into(), shard.to_string());
    pair.source_meta.insert("line".into(), line_index.to_string());
    Ok(Some(pair))
}

fn parse_object_line(line: &str) -> Result<RawPair, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let Value::Object(object) = value else {
        return Err("expected a JSON object".into());
    };
    let mut pair = RawPair::new("", "", "");
    for (key, value) in object {
        match (key.as_str(), value) {
            ("id", Value::String(s)) => pair.id = s,
            ("image_ref", Value::String(s)) => pair.image_ref = s,
            ("caption", Value::String(s)) => pair.caption = s,
            ("id" | "image_ref" | "caption", _) => return Err(format!("field {key} must be a string")),
            ("source_meta", Value::Object(meta)) => {
                for (k, v) in meta {
                    pair.source_meta.insert(k, scalar_text(v)?);
                }
            }
            (_, v) => {
                pair.source_meta.insert(key, scalar_text(v)?);
            }
        }
    }
    if pair.image_ref.is_empty() && pair.caption.is_empty() {
        return Err("missing image_ref and caption".into());
    }
    Ok(pair)
}

fn scalar_text(value: Value) -> Result<String, String> {
    match value {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Null => Ok(String::new()),
        _ => Err("metadata values must be scalars".into()),
    }
}

struct ShardOutput {
    lines: u64,
    parsed: Vec<Result<RawPair, Reject>>,
}

fn load_shard(format: CorpusFormat, shard: usize, path: &PathBuf) -> Result<ShardOutput, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::MissingShard {
        path: path.clone(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let mut out = ShardOutput {
        lines: 0,
        parsed: Vec::new(),
    };
    for (line_index, line) in text.split('\n').enumerate() {
        match parse_line(format, shard, line_index, line) {
            Ok(None) => {}
            Ok(Some(pair)) => {
                out.lines += 1;
                out.parsed.push(Ok(pair));
            }
            Err(error) => {
                out.lines += 1;
                out.parsed.push(Err(Reject {
                    shard,
                    line: line_index,
                    raw: line.trim_end_matches('\r').to_string(),
                    error,
                }));
            }
        }
    }
    Ok(out)
}

/// Loads every shard, yielding pairs in shard order then line order.
///
/// Shards are read in parallel and merged in manifest order. Malformed lines
/// and repeated ids become rejects; a missing shard aborts the load.
pub fn load_pairs(manifest: &CorpusManifest) -> Result<Loaded, IngestError> {
    if manifest.shard_paths.is_empty() {
        return Err(IngestError::EmptyManifest);
    }
    let shards = manifest
        .shard_paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| load_shard(manifest.format, i, path))
        .collect::<Result<Vec<_>, _>>()?;

    let total: u64 = shards.iter().map(|s| s.lines).sum();
    if let Some(expected) = manifest.total_count {
        if expected != total {
            return Err(IngestError::CountMismatch {
                expected,
                actual: total,
            });
        }
    }

    let mut loaded = Loaded::default();
    let mut seen = HashSet::new();
    for shard in shards {
        for item in shard.parsed {
            match item {
                Ok(pair) => {
                    if seen.insert(pair.id.clone()) {
                        loaded.pairs.push(pair);
                    } else {
                        loaded.rejects.push(Reject {
                            shard: pair.source_meta["shard"].parse().unwrap_or_default(),
                            line: pair.source_meta["line"].parse().unwrap_or_default(),
                            error: format!("duplicate id {:?}", pair.id),
                            raw: serde_json::to_string(&pair).unwrap_or_default(),
                        });
                    }
                }
                Err(reject) => loaded.rejects.push(reject),
            }
        }
    }
    Ok(loaded)
}

/// Uniform sample of `min(n, len)` pairs without replacement, in input order.
///
/// Each element's priority is a keyed hash of `(seed, index)`; the `n` lowest
/// priorities win. One pass, `O(n)` memory.
pub fn sample<I>(stream: I, n: usize, seed: u64) -> Vec<RawPair>
where
    I: IntoIterator<Item = RawPair>,
{
    if n == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<(u64, usize, RawPairByIndex)> = BinaryHeap::with_capacity(n + 1);
    for (index, pair) in stream.into_iter().enumerate() {
        let priority = keyed_u64(seed, "sample", &[&(index as u64).to_le_bytes()]);
        if heap.len() < n {
            heap.push((priority, index, RawPairByIndex(pair)));
        } else if let Some(top) = heap.peek() {
            if (priority, index) < (top.0, top.1) {
                heap.pop();
                heap.push((priority, index, RawPairByIndex(pair)));
            }
        }
    }
    let mut chosen: Vec<_> = heap.into_iter().map(|(_, i, p)| (i, p.0)).collect();
    chosen.sort_unstable_by_key(|(i, _)| *i);
    chosen.into_iter().map(|(_, p)| p).collect()
}

// The heap orders by (priority, index), which are unique; the payload never
// takes part in comparisons.
struct RawPairByIndex(RawPair);

impl PartialEq for RawPairByIndex {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for RawPairByIndex {}
impl PartialOrd for RawPairByIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for RawPairByIndex {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupeKey {
    Caption,
    ImageRef,
    Both,
}

impl std::str::FromStr for DedupeKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caption" => Ok(DedupeKey::Caption),
            "image_ref" => Ok(DedupeKey::ImageRef),
            "both" => Ok(DedupeKey::Both),
            _ => Err(format!("unknown dedupe key {s:?}")),
        }
    }
}

/// Drops later pairs whose key was already seen. Order is preserved.
pub fn dedupe<I>(stream: I, key: DedupeKey) -> impl Iterator<Item = RawPair>
where
    I: IntoIterator<Item = RawPair>,
{
    let mut seen: HashSet<(String, String)> = HashSet::new();
    stream.into_iter().filter(move |pair| {
        let k = match key {
            DedupeKey::Caption => (pair.caption.clone(), String::new()),
            DedupeKey::ImageRef => (String::new(), pair.image_ref.clone()),
            DedupeKey::Both => (pair.caption.clone(), pair.image_ref.clone()),
        };
        seen.insert(k)
    })
}
