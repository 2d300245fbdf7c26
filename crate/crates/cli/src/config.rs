//! Run configuration: a TOML file with command-line overrides.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use capqual_core::contrastive::{DEFAULT_HIGH_THRESHOLD, DEFAULT_LOW_THRESHOLD};
use capqual_core::enhance::DEFAULT_KEEP_THRESHOLD;
use capqual_core::scoring::BackendConfig;
use capqual_core::DatasetVariant;
use serde::{Deserialize, Serialize};

/// Errors that mean the run was misconfigured; they map to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub low: u8,
    pub high: u8,
    pub keep: u8,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            low: DEFAULT_LOW_THRESHOLD,
            high: DEFAULT_HIGH_THRESHOLD,
            keep: DEFAULT_KEEP_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub archive: Option<PathBuf>,
    pub quarantine: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub enabled: bool,
    /// Share of pairs the mock annotator scores 8 or above.
    pub high_share: f64,
    /// Share of pairs whose scorer replies always arrive truncated.
    pub scorer_fault_rate: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            high_share: capqual_core::scoring::mock::DEFAULT_HIGH_SHARE,
            scorer_fault_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub backend: BackendConfig,
    /// Separate endpoint for the trained scorer used by `enhance` and `filter`.
    pub scorer: Option<BackendConfig>,
    pub mock: MockConfig,
    pub thresholds: ThresholdConfig,
    pub paths: PathConfig,
    pub variant: DatasetVariant,
    pub val_fraction: f64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            backend: BackendConfig::default(),
            scorer: None,
            mock: MockConfig::default(),
            thresholds: ThresholdConfig::default(),
            paths: PathConfig::default(),
            variant: DatasetVariant::Aitqe,
            val_fraction: 0.05,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn scorer_backend(&self) -> BackendConfig {
        self.scorer.clone().unwrap_or_else(|| self.backend.clone())
    }

    /// Checks every invariant before any work starts.
    pub fn validate(&self, extra_paths: &[&Path]) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        if self.seed.is_none() {
            return err("a seed is required (--seed or `seed` in the config file)".into());
        }
        let t = &self.thresholds;
        if t.low >= t.high {
            return err(format!("low threshold {} must be below high threshold {}", t.low, t.high));
        }
        if !(1..=10).contains(&t.low) || !(1..=10).contains(&t.high) {
            return err(format!("thresholds {}/{} must lie in [1, 10]", t.low, t.high));
        }
        if !(1..=10).contains(&t.keep) {
            return err(format!("keep threshold {} outside [1, 10]", t.keep));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return err(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.mock.high_share) || !(0.0..=1.0).contains(&self.mock.scorer_fault_rate) {
            return err("mock shares must lie in [0, 1]".into());
        }
        if self.workers == Some(0) {
            return err("--workers must be at least 1".into());
        }
        self.backend.validate().map_err(|e| ConfigError(format!("backend: {e}")))?;
        if let Some(scorer) = &self.scorer {
            scorer.validate().map_err(|e| ConfigError(format!("scorer: {e}")))?;
        }
        let p = &self.paths;
        let mut seen = HashSet::new();
        let all = [&p.input, &p.output, &p.archive, &p.quarantine]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .chain(extra_paths.iter().copied());
        for path in all {
            if !seen.insert(normalize(path)) {
                return err(format!("path {} is used twice", path.display()));
            }
        }
        Ok(())
    }
}

fn normalize(path: &Path) -> PathBuf {
    path.components().filter(|c| !matches!(c, std::path::Component::CurDir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded() -> RunConfig {
        RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        }
    }

    #[test]
    fn defaults_are_valid_once_seeded() {
        assert!(RunConfig::default().validate(&[]).is_err());
        seeded().validate(&[]).unwrap();
    }

    #[test]
    fn threshold_and_path_rules() {
        let mut c = seeded();
        c.thresholds.low = 8;
        c.thresholds.high = 7;
        assert!(c.validate(&[]).is_err());
        let mut c = seeded();
        c.thresholds.keep = 11;
        assert!(c.validate(&[]).is_err());
        let mut c = seeded();
        c.paths.input = Some("a.jsonl".into());
        c.paths.output = Some("./a.jsonl".into());
        assert!(c.validate(&[]).unwrap_err().0.contains("used twice"));
        let mut c = seeded();
        c.paths.output = Some("out.jsonl".into());
        assert!(c.validate(&[Path::new("out.jsonl")]).is_err());
    }

    #[test]
    fn toml_layout() {
        let c: RunConfig = toml::from_str(
            r#"
            seed = 7
            variant = "base_rewrite"
            [thresholds]
            low = 6
            [backend]
            endpoint = "http://localhost:9/v1/chat/completions"
            max_in_flight = 4
            [backend.params]
            temperature = 0.0
            [mock]
            enabled = true
            "#,
        )
        .unwrap();
        assert_eq!(c.thresholds, ThresholdConfig { low: 6, high: 8, keep: 8 });
        assert_eq!(c.variant, DatasetVariant::BaseRewrite);
        assert_eq!(c.backend.max_in_flight, 4);
        assert_eq!(c.backend.retry_limit, 3);
        assert!(c.mock.enabled);
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
    }
}
