use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use commands::{AnnotateArgs, BuildSftArgs, ContrastArgs, EnhanceArgs, FilterArgs, SampleArgs, StatsArgs, Status};
use config::{ConfigError, RunConfig};

/// Caption quality pipeline: sample, annotate, build training data, enhance, report.
#[derive(Parser, Debug)]
#[command(name = "capqual", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Chat-completion endpoint; the API key is read from the configured environment variable.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// Use the deterministic offline backends.
    #[arg(long, global = true)]
    mock: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    low_threshold: Option<u8>,
    #[arg(long, global = true)]
    high_threshold: Option<u8>,
    #[arg(long, global = true)]
    keep_threshold: Option<u8>,
    /// aitqe, base, base_contrastive or base_rewrite.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(long, global = true)]
    val_fraction: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load corpus shards, reject malformed lines, dedupe and sample.
    Sample(SampleArgs),
    /// Score every pair on the four criteria.
    Annotate(AnnotateArgs),
    /// Request rewrites or degradations for pairs outside the middle band.
    Contrast(ContrastArgs),
    /// Turn phase-1 and phase-2 annotations into chat-format training data.
    BuildSft(BuildSftArgs),
    /// Score with the trained model and rewrite low-scoring captions.
    Enhance(EnhanceArgs),
    /// Keep the top-K pairs by predicted overall score.
    Filter(FilterArgs),
    /// Histograms, score differences and token accounting.
    Stats(StatsArgs),
}

impl Cli {
    fn effective_config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = Some(seed);
        }
        if let Some(url) = &self.backend_url {
            c.backend.endpoint = url.clone();
            if let Some(scorer) = &mut c.scorer {
                scorer.endpoint = url.clone();
            }
        }
        c.mock.enabled |= self.mock;
        if let Some(workers) = self.workers {
            c.workers = Some(workers);
        }
        if let Some(workers) = c.workers.filter(|w| *w > 0) {
            c.backend.max_in_flight = workers;
            if let Some(scorer) = &mut c.scorer {
                scorer.max_in_flight = workers;
            }
        }
        if let Some(v) = self.low_threshold {
            c.thresholds.low = v;
        }
        if let Some(v) = self.high_threshold {
            c.thresholds.high = v;
        }
        if let Some(v) = self.keep_threshold {
            c.thresholds.keep = v;
        }
        if let Some(v) = &self.variant {
            c.variant = v.parse().map_err(|e| config::config_error(format!("--variant: {e}")))?;
        }
        if let Some(v) = self.val_fraction {
            c.val_fraction = v;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let config = cli.effective_config()?;
    if let Some(workers) = config.workers.filter(|w| *w > 0) {
        // Must happen before rayon's global pool is first used.
        std::env::set_var("RAYON_NUM_THREADS", workers.to_string());
    }
    match cli.command {
        Command::Sample(a) => commands::sample_cmd(config, a),
        Command::Annotate(a) => commands::annotate_cmd(config, a),
        Command::Contrast(a) => commands::contrast_cmd(config, a),
        Command::BuildSft(a) => commands::build_sft_cmd(config, a),
        Command::Enhance(a) => commands::enhance_cmd(config, a),
        Command::Filter(a) => commands::filter_cmd(config, a),
        Command::Stats(a) => commands::stats_cmd(config, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) if status.exhausted > 0 => {
            eprintln!("error: backend unavailable for {} records; outputs were written", status.exhausted);
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
