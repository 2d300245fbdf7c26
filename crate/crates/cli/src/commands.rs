//! One function per subcommand. Each validates, runs one stage, writes its
//! outputs and a manifest.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use capqual_core::analytics::{
    average_tokens, enhanced_histogram, output_ratio, recaption_rate, rewrite_rate, score_diff_distribution,
    score_histogram, token_report, DiffDistribution, Histogram, TokenInput, TokenReport, WhitespaceTokenizer,
};
use capqual_core::codec::{read_records, write_records_to};
use capqual_core::contrastive::{assemble, split, Thresholds};
use capqual_core::enhance::{EnhanceConfig, Enhancer, FailureKind, HttpScorer, MockScorer, ScorerModel};
use capqual_core::ingest::{dedupe, load_pairs, sample, CorpusFormat, CorpusManifest, DedupeKey};
use capqual_core::scoring::http::HttpBackend;
use capqual_core::scoring::mock::MockBackend;
use capqual_core::scoring::{plan_phase2, Annotator, ChatBackend, PromptFamily};
use capqual_core::sft::{format_record, InstructionPools};
use capqual_core::{AnnotationRecord, CaptionVariant, EnhancedPair, RawPair, SftRecord, Split};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::{config_error, RunConfig};
use crate::manifest::{config_hash, Manifest};

/// What a finished command reports back to `main`.
#[derive(Debug, Default)]
pub struct Status {
    /// Records lost because the backend stayed unavailable.
    pub exhausted: usize,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    LineRecords,
    TabSeparated,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DedupeArg {
    Caption,
    ImageRef,
    Both,
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    /// Corpus shards, read in the order given.
    #[arg(required = true)]
    pub shards: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "line-records")]
    pub format: FormatArg,
    /// Expected number of non-blank lines across all shards.
    #[arg(long)]
    pub total_count: Option<u64>,
    /// Sample size; omit to keep every pair.
    #[arg(short = 'n', long)]
    pub count: Option<usize>,
    /// Drop repeated pairs before sampling.
    #[arg(long, value_enum)]
    pub dedupe: Option<DedupeArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Malformed lines; defaults to `<output>.rejects`.
    #[arg(long)]
    pub rejects: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AnnotateArgs {
    /// Raw pairs to score.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ContrastArgs {
    /// Raw pairs the phase-1 records refer to.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Phase-1 annotations.
    #[arg(long)]
    pub phase1: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildSftArgs {
    #[arg(long)]
    pub phase1: PathBuf,
    #[arg(long)]
    pub phase2: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    /// Run statistics; defaults to `<output>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    #[arg(long)]
    pub top_k: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct StatsArgs {
    /// Annotation records for the score histogram.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Enhancer output.
    #[arg(long)]
    pub enhanced: Option<PathBuf>,
    /// Reference annotations to compare scores against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// SFT conversations.
    #[arg(long)]
    pub sft: Option<PathBuf>,
    /// JSON list of per-method token components.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn required(path: &Option<PathBuf>, flag: &str) -> anyhow::Result<PathBuf> {
    path.clone().ok_or_else(|| config_error(format!("{flag} is required (flag or [paths] in the config)")))
}

#[derive(Serialize)]
struct Effective<'a, A: Serialize> {
    command: &'a str,
    config: &'a RunConfig,
    args: &'a A,
}

fn start<A: Serialize>(command: &str, config: &RunConfig, args: &A) -> Manifest {
    let hash = config_hash(&Effective { command, config, args });
    Manifest::new(command, hash, config.seed())
}

fn runtime(config: &RunConfig) -> anyhow::Result<tokio::runtime::Runtime> {
    let mut builder = tokio::runtime::Builder::new_multi_thread();
    if let Some(workers) = config.workers {
        builder.worker_threads(workers);
    }
    Ok(builder.enable_all().build()?)
}

fn chat_backend(config: &RunConfig) -> anyhow::Result<Arc<dyn ChatBackend>> {
    if config.mock.enabled {
        return Ok(Arc::new(MockBackend::with_high_share(config.seed(), config.mock.high_share)));
    }
    Ok(Arc::new(HttpBackend::new(&config.backend)?))
}

fn scorer(config: &RunConfig) -> anyhow::Result<Arc<dyn ScorerModel>> {
    if config.mock.enabled {
        let mut mock = MockScorer::new(config.seed()).with_faults(config.mock.scorer_fault_rate);
        mock.scores.high_share = config.mock.high_share;
        return Ok(Arc::new(mock));
    }
    Ok(Arc::new(HttpScorer::new(&config.scorer_backend())?))
}

fn enhance_config(config: &RunConfig) -> EnhanceConfig {
    let b = config.scorer_backend();
    EnhanceConfig {
        keep_threshold: config.thresholds.keep,
        seed: config.seed(),
        retry_limit: b.retry_limit,
        reask_limit: b.reask_limit,
        backoff: b.backoff,
        max_in_flight: b.max_in_flight,
    }
}

fn read<R: capqual_core::Record>(path: &Path) -> anyhow::Result<Vec<R>> {
    read_records(path).with_context(|| format!("reading {}", path.display()))
}

fn write<R: capqual_core::Record>(path: &Path, records: &[R]) -> anyhow::Result<()> {
    write_records_to(path, records).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sample_cmd(mut config: RunConfig, args: SampleArgs) -> anyhow::Result<Status> {
    let output = required(&args.output.clone().or(config.paths.output.take()), "--output")?;
    config.paths.output = Some(output.clone());
    let rejects = args.rejects.clone().unwrap_or_else(|| with_suffix(&output, ".rejects"));
    let shard_refs: Vec<&Path> = args.shards.iter().map(PathBuf::as_path).chain([rejects.as_path()]).collect();
    config.validate(&shard_refs)?;

    let format = match args.format {
        FormatArg::LineRecords => CorpusFormat::LineRecords,
        FormatArg::TabSeparated => CorpusFormat::TabSeparated,
    };
    let corpus = CorpusManifest {
        shard_paths: args.shards.clone(),
        format,
        total_count: args.total_count,
    };
    let loaded = load_pairs(&corpus).map_err(|e| config_error(e.to_string()))?;
    let loaded_count = loaded.pairs.len();
    let pairs: Vec<RawPair> = match args.dedupe {
        None => loaded.pairs,
        Some(key) => {
            let key = match key {
                DedupeArg::Caption => DedupeKey::Caption,
                DedupeArg::ImageRef => DedupeKey::ImageRef,
                DedupeArg::Both => DedupeKey::Both,
            };
            dedupe(loaded.pairs, key).collect()
        }
    };
    let distinct = pairs.len();
    let sampled = match args.count {
        Some(n) => sample(pairs, n, config.seed()),
        None => pairs,
    };
    write(&output, &sampled)?;
    let mut out = BufWriter::new(File::create(&rejects).with_context(|| format!("creating {}", rejects.display()))?);
    for reject in &loaded.rejects {
        out.write_all(reject.to_line(format).as_bytes())?;
    }
    out.flush()?;
    drop(out);

    let mut manifest = start("sample", &config, &args);
    for shard in &args.shards {
        manifest.input(shard)?;
    }
    manifest.output(&output)?;
    manifest.output(&rejects)?;
    manifest.count("loaded", loaded_count);
    manifest.count("rejected", loaded.rejects.len());
    manifest.count("after_dedupe", distinct);
    manifest.count("sampled", sampled.len());
    manifest.write(&output)?;
    println!(
        "sampled {} of {distinct} pairs ({} rejected lines)",
        sampled.len(),
        loaded.rejects.len()
    );
    Ok(Status::default())
}

struct StagePaths {
    input: PathBuf,
    output: PathBuf,
    archive: PathBuf,
    quarantine: PathBuf,
}

fn stage_paths(
    config: &mut RunConfig,
    input: &Option<PathBuf>,
    output: &Option<PathBuf>,
    archive: &Option<PathBuf>,
    quarantine: &Option<PathBuf>,
) -> anyhow::Result<StagePaths> {
    let p = &mut config.paths;
    let input = required(&input.clone().or(p.input.take()), "--input")?;
    let output = required(&output.clone().or(p.output.take()), "--output")?;
    let archive = archive
        .clone()
        .or(p.archive.take())
        .unwrap_or_else(|| with_suffix(&output, ".archive.jsonl"));
    let quarantine = quarantine
        .clone()
        .or(p.quarantine.take())
        .unwrap_or_else(|| with_suffix(&output, ".quarantine.jsonl"));
    p.input = Some(input.clone());
    p.output = Some(output.clone());
    p.archive = Some(archive.clone());
    p.quarantine = Some(quarantine.clone());
    Ok(StagePaths {
        input,
        output,
        archive,
        quarantine,
    })
}

pub fn annotate_cmd(mut config: RunConfig, args: AnnotateArgs) -> anyhow::Result<Status> {
    let paths = stage_paths(&mut config, &args.input, &args.output, &args.archive, &args.quarantine)?;
    config.validate(&[])?;
    let pairs: Vec<RawPair> = read(&paths.input).map_err(|e| config_error(format!("{e:#}")))?;
    let annotator = Annotator::new(chat_backend(&config)?, config.backend.clone());
    let run = runtime(&config)?.block_on(annotator.score_all(&pairs));

    write(&paths.output, &run.records)?;
    write(&paths.archive, &run.archive)?;
    write(&paths.quarantine, &run.quarantined)?;
    let mut manifest = start("annotate", &config, &args);
    manifest.input(&paths.input)?;
    for p in [&paths.output, &paths.archive, &paths.quarantine] {
        manifest.output(p)?;
    }
    manifest.count("requested", run.requested());
    manifest.count("emitted", run.records.len());
    manifest.count("quarantined", run.quarantined.len());
    manifest.count("backend_exhausted", run.backend_exhausted());
    manifest.write(&paths.output)?;
    println!(
        "annotated {} pairs: {} emitted, {} quarantined",
        run.requested(),
        run.records.len(),
        run.quarantined.len()
    );
    Ok(Status {
        exhausted: run.backend_exhausted(),
    })
}

pub fn contrast_cmd(mut config: RunConfig, args: ContrastArgs) -> anyhow::Result<Status> {
    let paths = stage_paths(&mut config, &args.input, &args.output, &args.archive, &args.quarantine)?;
    config.validate(&[&args.phase1])?;
    let thresholds = Thresholds::new(config.thresholds.low, config.thresholds.high).map_err(config_error)?;
    let pairs: Vec<RawPair> = read(&paths.input).map_err(|e| config_error(format!("{e:#}")))?;
    let phase1: Vec<AnnotationRecord> = read(&args.phase1).map_err(|e| config_error(format!("{e:#}")))?;
    let (jobs, orphans) = plan_phase2(&pairs, &phase1, thresholds);
    if !orphans.is_empty() {
        return Err(config_error(format!(
            "{} phase-1 records refer to pairs missing from {} (first: {})",
            orphans.len(),
            paths.input.display(),
            orphans[0]
        )));
    }
    let annotator = Annotator::new(chat_backend(&config)?, config.backend.clone());
    let run = runtime(&config)?.block_on(annotator.run_phase2(&jobs));

    write(&paths.output, &run.records)?;
    write(&paths.archive, &run.archive)?;
    write(&paths.quarantine, &run.quarantined)?;
    let mut manifest = start("contrast", &config, &args);
    manifest.input(&paths.input)?;
    manifest.input(&args.phase1)?;
    for p in [&paths.output, &paths.archive, &paths.quarantine] {
        manifest.output(p)?;
    }
    let rewrites = jobs.iter().filter(|j| j.family == PromptFamily::RewriteHigh).count();
    manifest.count("phase1", phase1.len());
    manifest.count("no_phase2", phase1.len() - jobs.len());
    manifest.count("rewrite_requests", rewrites);
    manifest.count("degrade_requests", jobs.len() - rewrites);
    manifest.count("emitted", run.records.len());
    manifest.count("quarantined", run.quarantined.len());
    manifest.count("backend_exhausted", run.backend_exhausted());
    manifest.write(&paths.output)?;
    println!(
        "phase 2: {} requests, {} emitted, {} quarantined",
        jobs.len(),
        run.records.len(),
        run.quarantined.len()
    );
    Ok(Status {
        exhausted: run.backend_exhausted(),
    })
}

pub fn build_sft_cmd(mut config: RunConfig, args: BuildSftArgs) -> anyhow::Result<Status> {
    let output = required(&args.output.clone().or(config.paths.output.take()), "--output")?;
    config.paths.output = Some(output.clone());
    config.validate(&[&args.phase1, &args.phase2])?;
    let phase1: Vec<AnnotationRecord> = read(&args.phase1).map_err(|e| config_error(format!("{e:#}")))?;
    let phase2: Vec<AnnotationRecord> = read(&args.phase2).map_err(|e| config_error(format!("{e:#}")))?;
    let (examples, counts) = assemble(&phase1, &phase2, config.variant).map_err(|e| config_error(e.to_string()))?;
    let (train, val) = split(examples, config.val_fraction, config.seed());
    let pools = InstructionPools::default();
    let mut collisions = 0;
    let mut records: Vec<SftRecord> = Vec::with_capacity(train.len() + val.len());
    for (examples, which) in [(&train, Split::Train), (&val, Split::Val)] {
        for e in examples {
            let (record, collided) = format_record(e, &pools, config.seed(), config.variant, which);
            collisions += collided as usize;
            records.push(record);
        }
    }
    write(&output, &records)?;

    let mut manifest = start("build-sft", &config, &args);
    manifest.input(&args.phase1)?;
    manifest.input(&args.phase2)?;
    manifest.output(&output)?;
    manifest.count("pairs", counts.pairs);
    manifest.count("examples", counts.examples);
    manifest.count("with_recaption", counts.with_recaption);
    manifest.count("with_phase2", counts.with_phase2);
    manifest.count("base_fallbacks", counts.base_fallbacks);
    manifest.count("train", train.len());
    manifest.count("val", val.len());
    manifest.count("marker_collisions", collisions);
    manifest.write(&output)?;
    println!(
        "{} examples for variant {} ({} train, {} val)",
        counts.examples,
        config.variant.as_str(),
        train.len(),
        val.len()
    );
    Ok(Status::default())
}

#[derive(Serialize)]
struct EnhanceSummary<'a> {
    #[serde(flatten)]
    stats: &'a capqual_core::enhance::RunStats,
    rewrite_rate: f64,
}

pub fn enhance_cmd(mut config: RunConfig, args: EnhanceArgs) -> anyhow::Result<Status> {
    let paths = stage_paths(&mut config, &args.input, &args.output, &None, &args.quarantine)?;
    config.paths.archive = None;
    let stats_path = args.stats.clone().unwrap_or_else(|| with_suffix(&paths.output, ".stats.json"));
    config.validate(&[&stats_path])?;
    let pairs: Vec<RawPair> = read(&paths.input).map_err(|e| config_error(format!("{e:#}")))?;
    let enhancer = Enhancer::new(scorer(&config)?, enhance_config(&config)).map_err(|e| config_error(e.to_string()))?;
    let run = runtime(&config)?.block_on(enhancer.enhance_dataset(&pairs));

    write(&paths.output, &run.pairs)?;
    write(&paths.quarantine, &run.failures)?;
    write_json(
        &stats_path,
        &EnhanceSummary {
            stats: &run.stats,
            rewrite_rate: rewrite_rate(&run.pairs),
        },
    )?;
    let mut manifest = start("enhance", &config, &args);
    manifest.input(&paths.input)?;
    for p in [&paths.output, &paths.quarantine, &stats_path] {
        manifest.output(p)?;
    }
    let s = &run.stats;
    manifest.count("input", pairs.len());
    manifest.count("output", run.pairs.len());
    manifest.count("kept", s.kept);
    manifest.count("rewritten", s.rewritten);
    manifest.count("missing_recaption", s.missing_recaption);
    manifest.count("unexpected_recaption", s.unexpected_recaption);
    manifest.count("quarantined", s.quarantined);
    manifest.write(&paths.output)?;
    println!(
        "enhanced {} pairs: {} kept, {} rewritten, {} quarantined",
        s.total, s.kept, s.rewritten, s.quarantined
    );
    let exhausted = run.failures.iter().filter(|f| f.kind == FailureKind::BackendUnavailable).count();
    Ok(Status { exhausted })
}

pub fn filter_cmd(mut config: RunConfig, args: FilterArgs) -> anyhow::Result<Status> {
    let paths = stage_paths(&mut config, &args.input, &args.output, &None, &args.quarantine)?;
    config.paths.archive = None;
    config.validate(&[])?;
    let pairs: Vec<RawPair> = read(&paths.input).map_err(|e| config_error(format!("{e:#}")))?;
    let enhancer = Enhancer::new(scorer(&config)?, enhance_config(&config)).map_err(|e| config_error(e.to_string()))?;
    let run = runtime(&config)?.block_on(enhancer.filter_dataset(&pairs, args.top_k));

    write(&paths.output, &run.selected)?;
    write(&paths.quarantine, &run.failures)?;
    let mut manifest = start("filter", &config, &args);
    manifest.input(&paths.input)?;
    manifest.output(&paths.output)?;
    manifest.output(&paths.quarantine)?;
    manifest.count("input", pairs.len());
    manifest.count("scored", run.scored);
    manifest.count("selected", run.selected.len());
    manifest.count("quarantined", run.failures.len());
    manifest.write(&paths.output)?;
    println!("selected {} of {} scored pairs", run.selected.len(), run.scored);
    let exhausted = run.failures.iter().filter(|f| f.kind == FailureKind::BackendUnavailable).count();
    Ok(Status { exhausted })
}

#[derive(Debug, Default, Serialize)]
struct StatsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    annotations: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    enhanced: Option<EnhancedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score_difference: Option<DiffDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sft: Option<SftSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<TokenReport>,
    /// Average output tokens of each method relative to the leanest one.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    output_ratios: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct EnhancedSummary {
    total: usize,
    quarantined: usize,
    rewrite_rate: f64,
    histogram: Histogram,
}

#[derive(Debug, Serialize)]
struct SftSummary {
    records: usize,
    recaption_rate: f64,
    val_recaption_rate: f64,
    /// Whitespace-token averages; a stand-in for a model tokenizer.
    avg_user_tokens: String,
    avg_target_tokens: String,
}

fn original_scores(records: &[AnnotationRecord]) -> HashMap<String, u8> {
    records
        .iter()
        .filter(|r| r.variant == CaptionVariant::Original)
        .map(|r| (r.pair_id.clone(), r.overall()))
        .collect()
}

pub fn stats_cmd(mut config: RunConfig, args: StatsArgs) -> anyhow::Result<Status> {
    let output = required(&args.output.clone().or(config.paths.output.take()), "--output")?;
    config.paths.output = Some(output.clone());
    let inputs: Vec<&Path> = [&args.annotations, &args.enhanced, &args.reference, &args.sft, &args.tokens]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    if inputs.is_empty() {
        return Err(config_error("stats needs at least one of --annotations, --enhanced, --sft, --tokens"));
    }
    config.validate(&inputs)?;
    let invalid = |e: anyhow::Error| config_error(format!("{e:#}"));

    let mut report = StatsReport::default();
    let annotations: Option<Vec<AnnotationRecord>> = args.annotations.as_deref().map(read).transpose().map_err(invalid)?;
    let enhanced: Option<Vec<EnhancedPair>> = args.enhanced.as_deref().map(read).transpose().map_err(invalid)?;
    if let Some(records) = &annotations {
        report.annotations = Some(score_histogram(records));
    }
    if let Some(pairs) = &enhanced {
        report.enhanced = Some(EnhancedSummary {
            total: pairs.len(),
            quarantined: pairs.iter().filter(|p| p.overall_score.is_none()).count(),
            rewrite_rate: rewrite_rate(pairs),
            histogram: enhanced_histogram(pairs),
        });
    }
    if let Some(reference) = &args.reference {
        let reference: Vec<AnnotationRecord> = read(reference).map_err(invalid)?;
        let model: HashMap<String, u8> = match (&enhanced, &annotations) {
            (Some(pairs), _) => pairs.iter().filter_map(|p| Some((p.id.clone(), p.overall_score?))).collect(),
            (None, Some(records)) => original_scores(records),
            (None, None) => return Err(config_error("--reference needs --enhanced or --annotations")),
        };
        report.score_difference =
            Some(score_diff_distribution(&model, &original_scores(&reference)).map_err(|e| config_error(e.to_string()))?);
    }
    if let Some(path) = &args.sft {
        let records: Vec<SftRecord> = read(path).map_err(invalid)?;
        let val: Vec<SftRecord> = records.iter().filter(|r| r.split == Split::Val).cloned().collect();
        let users: Vec<&str> = records.iter().map(|r| r.user_text.as_str()).collect();
        let targets: Vec<&str> = records.iter().map(|r| r.target_text.as_str()).collect();
        report.sft = Some(SftSummary {
            records: records.len(),
            recaption_rate: recaption_rate(&records),
            val_recaption_rate: recaption_rate(&val),
            avg_user_tokens: average_tokens(&WhitespaceTokenizer, &users).to_string(),
            avg_target_tokens: average_tokens(&WhitespaceTokenizer, &targets).to_string(),
        });
    }
    if let Some(path) = &args.tokens {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let rows: Vec<TokenInput> =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let tokens = token_report(&rows);
        if let Some(lean) = tokens.rows.iter().filter_map(|r| r.avg_tokens_out).min() {
            for row in &tokens.rows {
                if let Some(ratio) = row.avg_tokens_out.and_then(|out| output_ratio(out, lean)) {
                    report.output_ratios.insert(row.method.clone(), ratio);
                }
            }
        }
        report.tokens = Some(tokens);
    }

    write_json(&output, &report)?;
    let mut outputs = vec![output.clone()];
    let mut csv = |suffix: &str, f: &dyn Fn(&mut File) -> anyhow::Result<()>| -> anyhow::Result<()> {
        let path = with_suffix(&output, suffix);
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f(&mut file).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
        Ok(())
    };
    if let Some(h) = &report.annotations {
        csv(".annotations.csv", &|f| h.write_csv(f).map_err(anyhow::Error::from))?;
    }
    if let Some(e) = &report.enhanced {
        csv(".enhanced.csv", &|f| e.histogram.write_csv(f).map_err(anyhow::Error::from))?;
    }
    if let Some(d) = &report.score_difference {
        csv(".difference.csv", &|f| d.write_csv(f).map_err(anyhow::Error::from))?;
    }
    if let Some(t) = &report.tokens {
        csv(".tokens.csv", &|f| t.write_csv(f).map_err(anyhow::Error::from))?;
        print!("{}", t.to_table());
        for (method, ratio) in &report.output_ratios {
            println!("{method}: {ratio:.1}x output tokens");
        }
    }

    let mut manifest = start("stats", &config, &args);
    for path in inputs {
        manifest.input(path)?;
    }
    for path in &outputs {
        manifest.output(path)?;
    }
    if let Some(h) = &report.annotations {
        manifest.count("annotations", h.total as usize);
    }
    if let Some(e) = &report.enhanced {
        manifest.count("enhanced", e.total);
    }
    if let Some(d) = &report.score_difference {
        manifest.count("compared", d.total as usize);
    }
    if let Some(s) = &report.sft {
        manifest.count("sft_records", s.records);
    }
    manifest.write(&output)?;
    println!("wrote {}", output.display());
    Ok(Status::default())
}
