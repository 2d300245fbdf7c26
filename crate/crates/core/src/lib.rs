//! Image-caption quality scoring, contrastive SFT dataset construction and
//! caption enhancement.
//!
//! The pipeline stages, in order:
//!
//! * [`ingest`] loads raw image-caption pairs from sharded corpora;
//! * [`scoring`] annotates pairs against six criteria through a chat backend;
//! * [`contrastive`] routes annotations to rewrite/degrade requests and
//!   assembles training examples;
//! * [`sft`] renders examples as conversations;
//! * [`enhance`] applies a trained scorer to keep, rewrite or filter pairs;
//! * [`analytics`] reports score and token statistics.

pub mod analytics;
pub mod codec;
pub mod contrastive;
pub mod enhance;
pub mod hash;
pub mod ingest;
pub mod record;
pub mod scores;
pub mod scoring;
pub mod sft;

pub use codec::{read_records, write_records, Record, RecordError};
pub use record::{AnnotationRecord, CaptionVariant, DatasetVariant, EnhancedPair, RawPair, SftRecord, Split};
pub use scores::{Criterion, CriterionScores};
