//! User instruction pools for SFT conversations.

use std::collections::HashSet;

use thiserror::Error;

pub const SCORE_INSTRUCTIONS: [&str; 20] = [
    "Evaluate the caption",
    "Rate the effectiveness of the caption",
    "Assess the quality of the caption",
    "Analyze the caption's impact",
    "Grade the caption",
    "Measure the caption's effectiveness",
    "Appraise the caption",
    "Judge the caption's quality",
    "Determine the caption's score",
    "Quantify the caption's effectiveness",
    "Rank the caption",
    "Gauge the caption's strength",
    "Review and score the caption",
    "Provide a rating for the caption",
    "Critique and score the caption",
    "Assign a value to the caption",
    "Weigh the merits of the caption",
    "Calculate the caption's score",
    "Estimate the caption's effectiveness",
    "Examine and rate the caption",
];

pub const REWRITE_INSTRUCTIONS: [&str; 10] = [
    "If score is low, give a recap of the image",
    "If low score, recaption the image",
    "if score is low, give a short summary of the image",
    "if score is low, give a short description of the image",
    "For low-scoring images, provide a concise overview",
    "When the score is low, briefly describe the main elements of the image",
    "If the score is below threshold, generate a new caption",
    "For poorly scored images, summarize the key visual components",
    "If the image scores low, provide a succinct description of its content",
    "When faced with a low-scoring image, offer a brief caption of what it depicts",
];

// Entries are kept verbatim, including the truncated last one.
pub const FORMAT_INSTRUCTIONS: [&str; 20] = [
    "Respond using a dictionary structure",
    "Format your answer as a dict",
    "Present the result in a key-value pair format",
    "Output the response as a dictionary",
    "Provide the answer in a dict-like structure",
    "Use a dictionary format for your reply",
    "Structure your response as a dict",
    "Return the information in a key-value format",
    "Organize the answer in a dict format",
    "Express the result using dictionary notation",
    "Format the output as a key-value dictionary",
    "Give the answer in a dict structure",
    "Represent the response using a dictionary",
    "Reply with a dict-formatted answer",
    "Construct your response as a dictionary",
    "Arrange the information in a dict format",
    "Present the data in a key-value dictionary",
    "Formulate your answer as a dict",
    "Deliver the response in dictionary format",
    "Compose your reply using a dict structur",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("{pool} pool has {actual} entries, expected {expected}")]
    WrongSize {
        pool: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{pool} pool has an empty entry")]
    EmptyEntry { pool: &'static str },
    #[error("{pool} pool repeats {entry:?}")]
    Duplicate { pool: &'static str, entry: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstructionPools {
    pub score_pool: Vec<String>,
    pub rewrite_pool: Vec<String>,
    pub format_pool: Vec<String>,
}

impl Default for InstructionPools {
    fn default() -> Self {
        let own = |s: &[&str]| s.iter().map(|e| e.to_string()).collect();
        Self {
            score_pool: own(&SCORE_INSTRUCTIONS),
            rewrite_pool: own(&REWRITE_INSTRUCTIONS),
            format_pool: own(&FORMAT_INSTRUCTIONS),
        }
    }
}

impl InstructionPools {
    pub fn validate(&self) -> Result<(), PoolError> {
        check_pool("score", &self.score_pool, SCORE_INSTRUCTIONS.len())?;
        check_pool("rewrite", &self.rewrite_pool, REWRITE_INSTRUCTIONS.len())?;
        check_pool("format", &self.format_pool, FORMAT_INSTRUCTIONS.len())
    }
}

fn check_pool(pool: &'static str, entries: &[String], expected: usize) -> Result<(), PoolError> {
    if entries.len() != expected {
        return Err(PoolError::WrongSize {
            pool,
            expected,
            actual: entries.len(),
        });
    }
    let mut seen = HashSet::new();
    for entry in entries {
        if entry.trim().is_empty() {
            return Err(PoolError::EmptyEntry { pool });
        }
        if !seen.insert(entry.as_str()) {
            return Err(PoolError::Duplicate {
                pool,
                entry: entry.clone(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_pools_are_valid() {
        InstructionPools::default().validate().unwrap();
    }

    #[test]
    fn bad_pools_are_rejected() {
        let mut p = InstructionPools::default();
        p.rewrite_pool.pop();
        assert!(matches!(p.validate(), Err(PoolError::WrongSize { pool: "rewrite", .. })));
        let mut p = InstructionPools::default();
        p.score_pool[3] = p.score_pool[0].clone();
        assert!(matches!(p.validate(), Err(PoolError::Duplicate { .. })));
        let mut p = InstructionPools::default();
        p.format_pool[0] = " ".into();
        assert_eq!(p.validate(), Err(PoolError::EmptyEntry { pool: "format" }));
    }
}
