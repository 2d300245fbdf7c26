//! Score histograms, score-difference distributions, rewrite rates and
//! token-accounting reports.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{AnnotationRecord, EnhancedPair, SftRecord};
use crate::scores::{MAX_SCORE, MIN_SCORE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("model and reference share no ids")]
    EmptyIntersection,
    #[error("invalid token count {0:?}")]
    BadTokenCount(String),
}

/// Counts per overall score, `bins[s - 1]` for score `s`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: [u64; 10],
    pub total: u64,
}

impl Histogram {
    pub fn add(&mut self, score: u8) {
        debug_assert!((MIN_SCORE..=MAX_SCORE).contains(&score));
        self.bins[score as usize - 1] += 1;
        self.total += 1;
    }

    pub fn merge(mut self, other: Histogram) -> Histogram {
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self.total += other.total;
        self
    }

    pub fn count(&self, score: u8) -> u64 {
        self.bins[score as usize - 1]
    }

    /// Records scoring strictly below `score`.
    pub fn below(&self, score: u8) -> u64 {
        self.bins[..(score as usize).saturating_sub(1).min(10)].iter().sum()
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| {
            let sum: u64 = self.bins.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
            sum as f64 / self.total as f64
        })
    }
}

impl FromIterator<u8> for Histogram {
    fn from_iter<T: IntoIterator<Item = u8>>(iter: T) -> Self {
        let mut h = Histogram::default();
        for s in iter {
            h.add(s);
        }
        h
    }
}

pub fn score_histogram(records: &[AnnotationRecord]) -> Histogram {
    records
        .par_iter()
        .fold(Histogram::default, |mut h, r| {
            h.add(r.overall());
            h
        })
        .reduce(Histogram::default, Histogram::merge)
}

/// Histogram of scored enhancer outputs; quarantined pairs are skipped.
pub fn enhanced_histogram(pairs: &[EnhancedPair]) -> Histogram {
    pairs.iter().filter_map(|p| p.overall_score).collect()
}

/// Differences `model - reference` over the shared ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffDistribution {
    /// `bins[d + 9]` counts difference `d` for `d` in `-9..=9`.
    pub bins: [u64; 19],
    pub total: u64,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl DiffDistribution {
    pub fn count(&self, diff: i8) -> u64 {
        self.bins[(diff + 9) as usize]
    }
}

pub fn score_diff_distribution(
    model: &HashMap<String, u8>,
    reference: &HashMap<String, u8>,
) -> Result<DiffDistribution, AnalyticsError> {
    let mut bins = [0u64; 19];
    let mut total = 0u64;
    let mut sum = 0i64;
    let mut sum_sq = 0i64;
    for (id, &m) in model {
        let Some(&r) = reference.get(id) else { continue };
        let d = m as i64 - r as i64;
        bins[(d + 9) as usize] += 1;
        total += 1;
        sum += d;
        sum_sq += d * d;
    }
    if total == 0 {
        return Err(AnalyticsError::EmptyIntersection);
    }
    // Integer sums keep the moments exact and independent of map order.
    let n = total as f64;
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 * n - (sum as f64) * (sum as f64)) / (n * n);
    Ok(DiffDistribution {
        bins,
        total,
        mean,
        stddev: var.max(0.0).sqrt(),
    })
}

pub fn rewrite_rate(pairs: &[EnhancedPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|p| p.was_rewritten).count() as f64 / pairs.len() as f64
}

/// Share of SFT targets that carry a recaption.
pub fn recaption_rate(records: &[SftRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.has_recaption()).count() as f64 / records.len() as f64
}

/// A non-negative token count with three decimal places, so averages such
/// as `27.15` add without rounding error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenCount(u64);

impl TokenCount {
    const SCALE: u64 = 1000;

    pub fn from_thousandths(v: u64) -> Self {
        Self(v)
    }

    pub fn whole(v: u64) -> Self {
        Self(v * Self::SCALE)
    }

    pub fn thousandths(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// Mean of whole counts, rounded half-up to three decimals.
    pub fn mean(counts: &[u64]) -> Self {
        if counts.is_empty() {
            return Self(0);
        }
        let n = counts.len() as u128;
        let sum: u128 = counts.iter().map(|&c| c as u128 * Self::SCALE as u128).sum();
        Self(((sum * 2 + n) / (2 * n)) as u64)
    }
}

impl Add for TokenCount {
    type Output = TokenCount;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Mul<u64> for TokenCount {
    type Output = TokenCount;
    fn mul(self, rhs: u64) -> Self {
        Self(self.0 * rhs)
    }
}

impl FromStr for TokenCount {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AnalyticsError::BadTokenCount(s.to_owned());
        let (int, frac) = s.trim().split_once('.').unwrap_or((s.trim(), ""));
        if int.is_empty() || frac.len() > 3 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = int.parse().map_err(|_| bad())?;
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<3}").parse().map_err(|_| bad())?
        };
        int.checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .map(Self)
            .ok_or_else(bad)
    }
}

impl fmt::Display for TokenCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (int, frac) = (self.0 / Self::SCALE, self.0 % Self::SCALE);
        if frac == 0 {
            return write!(f, "{int}");
        }
        let digits = format!("{frac:03}");
        write!(f, "{int}.{}", digits.trim_end_matches('0'))
    }
}

impl Serialize for TokenCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let s = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(serde::de::Error::custom(format!("expected a token count, got {other}"))),
        };
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Counts tokens in a text.
pub trait Tokenizer {
    fn count(&self, text: &str) -> u64;
}

/// Whitespace-split stand-in for a model tokenizer.
#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

pub fn average_tokens<T: Tokenizer + ?Sized, S: AsRef<str>>(tokenizer: &T, texts: &[S]) -> TokenCount {
    let counts: Vec<u64> = texts.iter().map(|t| tokenizer.count(t.as_ref())).collect();
    TokenCount::mean(&counts)
}

/// Raw per-method token components.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInput {
    pub method: String,
    pub text_tokens_in: TokenCount,
    pub visual_tokens_in: u64,
    /// Methods that issue one prompt per criterion also report the cost of
    /// four criteria.
    #[serde(default)]
    pub per_criterion_prompts: bool,
    #[serde(default)]
    pub avg_tokens_out: Option<TokenCount>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRow {
    pub method: String,
    pub text_tokens_in: TokenCount,
    pub visual_tokens_in: u64,
    pub total_in: TokenCount,
    pub total_for_four_scores: Option<TokenCount>,
    pub avg_tokens_out: Option<TokenCount>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenReport {
    pub rows: Vec<TokenRow>,
}

pub fn token_report(inputs: &[TokenInput]) -> TokenReport {
    let rows = inputs
        .iter()
        .map(|i| {
            let visual = TokenCount::whole(i.visual_tokens_in);
            TokenRow {
                method: i.method.clone(),
                text_tokens_in: i.text_tokens_in,
                visual_tokens_in: i.visual_tokens_in,
                total_in: i.text_tokens_in + visual,
                total_for_four_scores: i.per_criterion_prompts.then(|| i.text_tokens_in * 4 + visual * 4),
                avg_tokens_out: i.avg_tokens_out,
            }
        })
        .collect();
    TokenReport { rows }
}

/// How many times more output tokens `a` produces than `b`.
pub fn output_ratio(a: TokenCount, b: TokenCount) -> Option<f64> {
    (b.0 > 0).then(|| a.0 as f64 / b.0 as f64)
}

fn opt(v: Option<TokenCount>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

impl TokenReport {
    const HEADER: [&'static str; 6] = [
        "method",
        "text_tokens_in",
        "visual_tokens_in",
        "total_in",
        "total_for_four_scores",
        "avg_tokens_out",
    ];

    fn cells(row: &TokenRow) -> [String; 6] {
        [
            row.method.clone(),
            row.text_tokens_in.to_string(),
            row.visual_tokens_in.to_string(),
            row.total_in.to_string(),
            opt(row.total_for_four_scores),
            opt(row.avg_tokens_out),
        ]
    }

    pub fn to_table(&self) -> String {
        let body: Vec<[String; 6]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = Self::HEADER.map(str::len);
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        };
        line(&Self::HEADER.map(String::from));
        for cells in &body {
            line(cells);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::HEADER)?;
        for row in &self.rows {
            let cells = Self::cells(row).map(|c| if c == "-" { String::new() } else { c });
            out.write_record(&cells)?;
        }
        out.flush()?;
        Ok(())
    }
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["score", "count"])?;
        for (i, c) in self.bins.iter().enumerate() {
            out.write_record([(i + 1).to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl DiffDistribution {
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["difference", "count"])?;
        for (i, c) in self.bins.iter().enumerate() {
            out.write_record([(i as i64 - 9).to_string(), c.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::CaptionVariant;
    use crate::scores::CriterionScores;
    use proptest::prelude::*;

    fn tc(s: &str) -> TokenCount {
        s.parse().unwrap()
    }

    #[test]
    fn histogram_examples() {
        let recs: Vec<_> = [7u8, 7, 3]
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                AnnotationRecord::new(i.to_string(), CaptionVariant::Original, "c", CriterionScores::uniform(s, "x"))
                    .unwrap()
            })
            .collect();
        let h = score_histogram(&recs);
        assert_eq!(h.count(7), 2);
        assert_eq!(h.count(3), 1);
        assert_eq!(h.total, 3);
        assert_eq!(h.below(8), 3);
        assert_eq!(h.below(1), 0);
        assert_eq!(score_histogram(&[]), Histogram::default());
    }

    #[test]
    fn diff_identity_and_shift() {
        let a: HashMap<String, u8> = (0..50).map(|i| (i.to_string(), (i % 9 + 1) as u8)).collect();
        let d = score_diff_distribution(&a, &a).unwrap();
        assert_eq!((d.count(0), d.mean, d.stddev), (50, 0.0, 0.0));
        let b: HashMap<String, u8> = a.iter().map(|(k, v)| (k.clone(), v + 1)).collect();
        let d = score_diff_distribution(&b, &a).unwrap();
        assert_eq!((d.count(1), d.mean, d.stddev), (50, 1.0, 0.0));
        let other: HashMap<String, u8> = [("zz".to_string(), 3)].into();
        assert_eq!(score_diff_distribution(&a, &other), Err(AnalyticsError::EmptyIntersection));
    }

    #[test]
    fn token_fixtures() {
        let report = token_report(&[
            TokenInput {
                method: "per-criterion".into(),
                text_tokens_in: tc("268"),
                visual_tokens_in: 576,
                per_criterion_prompts: true,
                avg_tokens_out: Some(tc("212.734")),
            },
            TokenInput {
                method: "single".into(),
                text_tokens_in: tc("27.15"),
                visual_tokens_in: 729,
                per_criterion_prompts: false,
                avg_tokens_out: Some(tc("18.326")),
            },
        ]);
        assert_eq!(report.rows[0].total_in.to_string(), "844");
        assert_eq!(report.rows[0].total_for_four_scores.unwrap().to_string(), "3376");
        assert_eq!(report.rows[1].total_in.to_string(), "756.15");
        assert_eq!(report.rows[1].total_for_four_scores, None);
        let ratio = output_ratio(tc("212.734"), tc("18.326")).unwrap();
        assert_eq!(format!("{ratio:.1}"), "11.6");
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().contains("single,27.15,729,756.15,,18.326"));
        assert!(report.to_table().contains("756.15"));
    }

    #[test]
    fn token_count_parsing() {
        assert_eq!(tc("27.15").thousandths(), 27150);
        assert_eq!(tc("0.001").to_string(), "0.001");
        assert!("1.2345".parse::<TokenCount>().is_err());
        assert!("-1".parse::<TokenCount>().is_err());
        assert!(".5".parse::<TokenCount>().is_err());
        assert_eq!(TokenCount::mean(&[1, 2]).to_string(), "1.5");
        assert_eq!(TokenCount::mean(&[1, 1, 2]).to_string(), "1.333");
        assert_eq!(average_tokens(&WhitespaceTokenizer, &["a b", "c d e f"]).to_string(), "3");
    }

    proptest! {
        #[test]
        fn token_totals_are_exact(text in 0u64..10_000_000, visual in 0u64..100_000) {
            let t = TokenCount::from_thousandths(text);
            let row = &token_report(&[TokenInput {
                method: "m".into(),
                text_tokens_in: t,
                visual_tokens_in: visual,
                per_criterion_prompts: true,
                avg_tokens_out: None,
            }]).rows[0];
            prop_assert_eq!(row.total_in.thousandths(), text + visual * 1000);
            prop_assert_eq!(row.total_for_four_scores.unwrap().thousandths(), 4 * text + 4 * visual * 1000);
            prop_assert_eq!(row.total_in.to_string().parse::<TokenCount>().unwrap(), row.total_in);
        }

        #[test]
        fn diff_is_antisymmetric(pairs in prop::collection::vec((0u16..500, 1u8..=10, 1u8..=10), 1..200)) {
            let mut a = HashMap::new();
            let mut b = HashMap::new();
            for (id, x, y) in pairs {
                a.insert(id.to_string(), x);
                b.insert(id.to_string(), y);
            }
            let ab = score_diff_distribution(&a, &b).unwrap();
            let ba = score_diff_distribution(&b, &a).unwrap();
            let mut mirrored = ba.bins;
            mirrored.reverse();
            prop_assert_eq!(ab.bins, mirrored);
            prop_assert_eq!(ab.mean, -ba.mean);
            prop_assert_eq!(ab.stddev, ba.stddev);
            prop_assert_eq!(ab.bins.iter().sum::<u64>(), ab.total);
        }
    }
}
