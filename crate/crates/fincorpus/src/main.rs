//! Command-line front end: one subcommand per corpus stage plus the
//! one-shot `pipeline` runner. Logs go to stderr; data goes to the files
//! named by flags. The process exits zero only when the requested work
//! fully succeeded.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fincorpus::clean::{clean_document, CleaningConfig};
use fincorpus::cost::{
    reference_cost_table, training_cost, GpuCostModel, Rounding, TrainRun,
};
use fincorpus::dataset::{
    export_instruction_jsonl, temporal_then_random_split, DatasetBundle, SplitSpec, SPLIT_NAMES,
};
use fincorpus::dedup::{dedup_corpus, DedupConfig};
use fincorpus::eval::{
    avg_crr, backtest, compute_metrics, BacktestConfig, BacktestMode, PredictionRecord,
};
use fincorpus::factor::{
    cmf, fmf, moving_average, nlmf, pct_change, pmf, price_to_earnings, volatility, Earnings,
    Panel, PanelRow, StandardizeMode,
};
use fincorpus::filter::{run_filters, FilterConfig};
use fincorpus::ingest::{
    connector::connector_from_rule, rules::load_rules, run_crawl, store::read_store,
    store::StoreLayout, FetchTask, TaskKey,
};
use fincorpus::jsonl::{read_jsonl, write_jsonl};
use fincorpus::label::{label_corpus, LabelSet, LabelingConfig, LabelingDoc};
use fincorpus::langid::{build_profile, classify_lang, load_profiles_dir, LangProfile};
use fincorpus::lm::NgramLm;
use fincorpus::model::{CleanDocument, FetchConfig, RawDocument, Sentiment};
use fincorpus::pipeline::run_pipeline;
use fincorpus::prices::{load_prices_csv, load_prices_dir, PriceSeries};
use fincorpus::tokenize::tokenize;

#[derive(Parser)]
#[command(
    name = "fincorpus",
    version,
    about = "Corpus engineering workbench for financial text",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// One JSON object per log line on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    /// Increase log detail (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a source into the incremental store.
    Ingest(IngestArgs),
    /// Clean raw documents into analysis text.
    Clean(CleanArgs),
    /// Apply quality filters to a cleaned corpus.
    Filter(FilterArgs),
    /// Drop exact and near duplicates.
    Dedup(DedupArgs),
    /// Label documents from forward returns.
    Label(LabelArgs),
    /// Split labeled examples by date, then randomly.
    Split(SplitArgs),
    /// Render instruction-tuning JSONL from a split bundle.
    Export(ExportArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Simulate trading on predicted signals.
    Backtest(BacktestArgs),
    /// Factor calculations over a (date, company, value) panel.
    Factor(FactorArgs),
    /// GPU training cost arithmetic.
    Cost(CostArgs),
    /// Train or apply the n-gram scoring model.
    Lm {
        #[command(subcommand)]
        cmd: LmCmd,
    },
    /// Build or apply language profiles.
    Langid {
        #[command(subcommand)]
        cmd: LangidCmd,
    },
    /// Run configured stages end to end with a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Source rules TOML.
    #[arg(long)]
    rules: PathBuf,
    /// Source name within the rules file.
    #[arg(long)]
    source: String,
    /// Symbol to crawl; repeatable.
    #[arg(long = "symbol", required = true)]
    symbols: Vec<String>,
    #[arg(long)]
    start: NaiveDate,
    #[arg(long)]
    end: NaiveDate,
    /// Store root directory.
    #[arg(long)]
    out: PathBuf,
    /// Crawl this many 1-based pages per symbol instead of a date range.
    #[arg(long)]
    pages: Option<u32>,
    /// Total fetch attempts per task.
    #[arg(long, default_value_t = 1)]
    max_retry: u32,
}

#[derive(Args)]
struct CleanArgs {
    /// Crawl store directory, or a raw-document JSONL file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop tokens longer than this many characters.
    #[arg(long)]
    max_word_len: Option<usize>,
    /// Keep URLs instead of stripping them.
    #[arg(long)]
    keep_urls: bool,
}

#[derive(Args)]
struct FilterArgs {
    /// Cleaned corpus JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// Surviving documents.
    #[arg(long)]
    out: PathBuf,
    /// Per-document filter reports.
    #[arg(long)]
    report: PathBuf,
    /// Scoring model file; trained on the input corpus when absent.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// N-gram order for the fallback model.
    #[arg(long, default_value_t = 3)]
    lm_order: usize,
    /// Directory of language profile JSON files.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    min_words: Option<usize>,
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    max_special_char_ratio: Option<f64>,
    #[arg(long)]
    max_dup_line_ratio: Option<f64>,
    /// Perplexity cap; calibrated from the corpus when absent.
    #[arg(long)]
    max_perplexity: Option<f64>,
    #[arg(long)]
    min_lang_score: Option<f64>,
    /// Languages accepted by the language filter.
    #[arg(long, value_delimiter = ',')]
    expected_langs: Option<Vec<String>>,
}

#[derive(Args)]
struct DedupArgs {
    /// Corpus JSONL to deduplicate.
    #[arg(long = "in")]
    input: PathBuf,
    /// Surviving documents.
    #[arg(long)]
    out: PathBuf,
    /// Dropped-to-representative pairs.
    #[arg(long)]
    dups: PathBuf,
    /// Raw-document JSONL supplying publish times, so the earliest copy
    /// of a duplicate group is the one kept.
    #[arg(long)]
    raw: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    shingle_size: Option<usize>,
}

#[derive(Args)]
struct LabelArgs {
    /// Cleaned/deduped corpus JSONL; labeling-ready JSONL when --raw is
    /// absent.
    #[arg(long)]
    corpus: PathBuf,
    /// Raw-document JSONL supplying symbols and publish times.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Price CSV file, or a directory of one CSV per symbol.
    #[arg(long)]
    prices: PathBuf,
    /// Neutral band half-width, in percent.
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    /// Holding distance in trading days.
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write documents that could not be labeled.
    #[arg(long)]
    unlabeled: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Labeled examples JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "2021-11-01")]
    split_date: NaiveDate,
    /// Validation fraction of the pre-split-date pool.
    #[arg(long, default_value_t = 0.2)]
    valid: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory holding train/valid/test.jsonl.
    #[arg(long)]
    bundle: PathBuf,
    /// Answer menu offered in the prompt: three or seven.
    #[arg(long, default_value = "three")]
    labels: String,
    /// Output directory; defaults to <bundle>/instructions.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions JSONL: {example_id, pred}.
    #[arg(long)]
    pred: PathBuf,
    /// Gold labeled examples JSONL.
    #[arg(long)]
    gold: PathBuf,
    /// Metrics report JSON.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BacktestArgs {
    /// Predictions JSONL: {example_id, pred}.
    #[arg(long)]
    pred: PathBuf,
    /// Gold labeled examples JSONL; supplies symbols and signal dates.
    #[arg(long)]
    gold: PathBuf,
    /// Price CSV file, or a directory of one CSV per symbol.
    #[arg(long)]
    prices: PathBuf,
    /// Holding period in trading days.
    #[arg(long, default_value_t = 5)]
    hold: usize,
    /// Backtest report JSON.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct FactorArgs {
    /// One of: ma, vol, pct_change, pe, fmf, pmf, cmf, nlmf.
    #[arg(long)]
    name: String,
    /// Panel CSV (date,company,value).
    #[arg(long = "in")]
    input: PathBuf,
    /// Second panel: earnings for pe, price indicator for cmf/nlmf.
    #[arg(long)]
    in2: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Trailing window for ma/vol.
    #[arg(long)]
    window: Option<usize>,
    /// Look-back distance for pct_change and the momentum factors.
    #[arg(long, default_value_t = 1)]
    period: usize,
    /// Rank standardization: verbatim or cross_sectional.
    #[arg(long, default_value = "verbatim")]
    mode: String,
    /// Fundamental weight for cmf.
    #[arg(long, default_value_t = 0.5)]
    weight_f: f64,
    /// Price weight for cmf.
    #[arg(long, default_value_t = 0.5)]
    weight_p: f64,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    gpus: Option<u64>,
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    days: Option<f64>,
    /// Instance list price in USD per hour.
    #[arg(long)]
    instance_hourly: Option<f64>,
    #[arg(long)]
    gpus_per_instance: Option<u32>,
    /// Use the exact per-GPU rate instead of rounding it to cents first.
    #[arg(long)]
    exact: bool,
    /// Print the bundled reference table and exit.
    #[arg(long)]
    table: bool,
}

#[derive(Subcommand)]
enum LmCmd {
    /// Train on a cleaned corpus JSONL.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
    },
    /// Score documents or a single text.
    Score {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Per-document scores JSONL; required with --in.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
}

#[derive(Subcommand)]
enum LangidCmd {
    /// Build a profile from a plain-text corpus.
    Build {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        lang: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify documents or a single text.
    Classify {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Per-document languages JSONL; required with --in.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline config TOML.
    #[arg(long)]
    config: PathBuf,
}

struct StderrLogger {
    json: bool,
    level: log::LevelFilter,
}

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= self.level
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        if self.json {
            let line = serde_json::json!({
                "level": record.level().to_string().to_lowercase(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            eprintln!("{line}");
        } else {
            eprintln!("{:>5} [{}] {}", record.level(), record.target(), record.args());
        }
    }

    fn flush(&self) {}
}

fn init_logger(json: bool, verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    if log::set_boxed_logger(Box::new(StderrLogger { json, level })).is_ok() {
        log::set_max_level(level);
    }
}

fn effective_workers(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logger(cli.json_logs, cli.verbose);
    let workers = effective_workers(cli.workers);
    // One global pool so every parallel stage obeys --workers.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    match run(cli.command, workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, workers: usize) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args, workers),
        Command::Clean(args) => cmd_clean(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Dedup(args) => cmd_dedup(args),
        Command::Label(args) => cmd_label(args),
        Command::Split(args) => cmd_split(args),
        Command::Export(args) => cmd_export(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Backtest(args) => cmd_backtest(args),
        Command::Factor(args) => cmd_factor(args),
        Command::Cost(args) => cmd_cost(args),
        Command::Lm { cmd } => cmd_lm(cmd),
        Command::Langid { cmd } => cmd_langid(cmd),
        Command::Pipeline(args) => cmd_pipeline(args, workers),
    }
}

fn cmd_ingest(args: IngestArgs, workers: usize) -> Result<()> {
    let rules = load_rules(&args.rules)
        .with_context(|| format!("loading rules from {}", args.rules.display()))?;
    let rule = rules
        .sources
        .get(&args.source)
        .with_context(|| format!("rules file does not define source {}", args.source))?;
    let rules_base = args.rules.parent().unwrap_or(Path::new("."));
    let connector = connector_from_rule(&args.source, rule, rules_base)?;

    let fetch = FetchConfig {
        max_retry: args.max_retry,
        token: std::env::var("FINCORPUS_TOKEN").ok(),
        ..FetchConfig::default()
    };

    let mut plan = Vec::new();
    for symbol in &args.symbols {
        match args.pages {
            Some(pages) => {
                for page in 1..=pages {
                    plan.push(FetchTask {
                        source: args.source.clone(),
                        symbol: symbol.clone(),
                        key: TaskKey::Page(page),
                    });
                }
            }
            None => {
                if args.start > args.end {
                    bail!("--start {} is after --end {}", args.start, args.end);
                }
                let mut date = args.start;
                while date <= args.end {
                    plan.push(FetchTask {
                        source: args.source.clone(),
                        symbol: symbol.clone(),
                        key: TaskKey::Date(date),
                    });
                    date = date.succ_opt().context("date out of range")?;
                }
            }
        }
    }

    let layout = StoreLayout::new(&args.out);
    let report = run_crawl(&plan, connector.as_ref(), &fetch, &layout, workers)?;
    log::info!(
        "crawl finished: {} fetched, {} already stored, {} failed",
        report.done,
        report.skipped,
        report.failed.len()
    );
    for failure in &report.failed {
        log::warn!("fetch failed for {}: {}", failure.task, failure.error);
    }
    if !report.failed.is_empty() {
        bail!("{} of {} fetch tasks failed", report.failed.len(), plan.len());
    }
    Ok(())
}

/// Accepts either a crawl store directory or a raw-document JSONL file.
fn read_raw_corpus(path: &Path) -> Result<Vec<RawDocument>> {
    if path.is_dir() {
        Ok(read_store(path)?)
    } else {
        Ok(read_jsonl(path)?)
    }
}

fn cmd_clean(args: CleanArgs) -> Result<()> {
    let raws = read_raw_corpus(&args.input)?;
    let mut cfg = CleaningConfig::default();
    if let Some(n) = args.max_word_len {
        cfg.max_word_len = n;
    }
    if args.keep_urls {
        cfg.url_removal = false;
    }
    let cleaned: Vec<CleanDocument> = raws.iter().map(|r| clean_document(r, &cfg)).collect();
    write_jsonl(&args.out, cleaned.iter())?;
    log::info!("cleaned {} documents into {}", cleaned.len(), args.out.display());
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let corpus: Vec<CleanDocument> = read_jsonl(&args.input)?;
    let profiles = load_profiles_dir(&args.profiles)?;
    let lm = match &args.lm {
        Some(path) => {
            let file = fs::File::open(path)
                .with_context(|| format!("opening model {}", path.display()))?;
            NgramLm::load(io::BufReader::new(file))?
        }
        None => {
            let token_lists: Vec<Vec<String>> =
                corpus.iter().map(|d| tokenize(&d.text)).collect();
            NgramLm::train(&token_lists, args.lm_order)?
        }
    };

    let mut cfg = FilterConfig::default();
    if let Some(v) = args.min_words {
        cfg.min_words = v;
    }
    if let Some(v) = args.max_words {
        cfg.max_words = v;
    }
    if let Some(v) = args.max_special_char_ratio {
        cfg.max_special_char_ratio = v;
    }
    if let Some(v) = args.max_dup_line_ratio {
        cfg.max_dup_line_ratio = v;
    }
    if let Some(v) = args.max_perplexity {
        cfg.max_perplexity = Some(v);
    }
    if let Some(v) = args.min_lang_score {
        cfg.min_lang_score = v;
    }
    if let Some(langs) = args.expected_langs {
        cfg.expected_langs = langs.into_iter().collect();
    }

    let outcome = run_filters(&corpus, &cfg, &lm, &profiles)?;
    write_jsonl(&args.out, outcome.kept.iter())?;
    write_jsonl(&args.report, outcome.reports.iter())?;
    log::info!(
        "kept {} of {} documents (perplexity cap {:.3})",
        outcome.kept.len(),
        corpus.len(),
        outcome.applied_max_perplexity
    );
    Ok(())
}

/// Publish times from a raw corpus, for picking duplicate representatives
/// and for labeling entry dates.
fn published_map(raws: &[RawDocument]) -> BTreeMap<String, DateTime<Utc>> {
    raws.iter().map(|r| (r.id.clone(), r.published_at)).collect()
}

#[derive(Serialize)]
struct DupRecord<'a> {
    dropped: &'a str,
    kept: &'a str,
}

fn cmd_dedup(args: DedupArgs) -> Result<()> {
    let corpus: Vec<CleanDocument> = read_jsonl(&args.input)?;
    let published = match &args.raw {
        Some(path) => published_map(&read_raw_corpus(path)?),
        None => BTreeMap::new(),
    };
    let mut cfg = DedupConfig::default();
    if let Some(t) = args.threshold {
        cfg.jaccard_threshold = t;
    }
    if let Some(s) = args.shingle_size {
        cfg.shingle_size = s;
    }
    let outcome = dedup_corpus(&corpus, &published, &cfg)?;
    write_jsonl(&args.out, outcome.kept.iter())?;
    let dups: Vec<DupRecord> = outcome
        .dropped
        .iter()
        .map(|(dropped, kept)| DupRecord { dropped, kept })
        .collect();
    write_jsonl(&args.dups, dups.iter())?;
    log::info!(
        "kept {} of {} documents; {} duplicates recorded",
        outcome.kept.len(),
        corpus.len(),
        outcome.dropped.len()
    );
    Ok(())
}

fn cmd_label(args: LabelArgs) -> Result<()> {
    let docs: Vec<LabelingDoc> = match &args.raw {
        Some(raw_path) => {
            let corpus: Vec<CleanDocument> = read_jsonl(&args.corpus)?;
            let raws = read_raw_corpus(raw_path)?;
            let meta: BTreeMap<String, (Option<String>, DateTime<Utc>)> = raws
                .iter()
                .map(|r| (r.id.clone(), (r.symbol.clone(), r.published_at)))
                .collect();
            corpus
                .iter()
                .map(|doc| {
                    let (symbol, published_at) = meta
                        .get(&doc.id)
                        .cloned()
                        .with_context(|| format!("document {} not present in --raw", doc.id))?;
                    Ok(LabelingDoc {
                        doc_id: doc.id.clone(),
                        symbol,
                        text: doc.text.clone(),
                        published_at,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => read_jsonl(&args.corpus)?,
    };

    let prices = load_price_input(&args.prices)?;
    let cfg = LabelingConfig {
        threshold_pct: args.threshold,
        horizon_days: args.horizon,
        ..LabelingConfig::default()
    };
    let outcome = label_corpus(&docs, &prices, &cfg)?;
    write_jsonl(&args.out, outcome.examples.iter())?;
    if let Some(path) = &args.unlabeled {
        write_jsonl(path, outcome.unlabeled.iter())?;
    }
    log::info!(
        "labeled {} of {} documents: {}",
        outcome.examples.len(),
        docs.len(),
        serde_json::to_string(&outcome.distribution).unwrap_or_default()
    );
    Ok(())
}

fn load_price_input(path: &Path) -> Result<BTreeMap<String, PriceSeries>> {
    if path.is_dir() {
        Ok(load_prices_dir(path)?)
    } else {
        Ok(load_prices_csv(path)?)
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let examples = read_jsonl(&args.input)?;
    let spec = SplitSpec { split_date: args.split_date, valid_fraction: args.valid, seed: args.seed };
    let bundle = temporal_then_random_split(examples, &spec)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for name in SPLIT_NAMES {
        let split = bundle.split(name).expect("known split");
        write_jsonl(args.out_dir.join(format!("{name}.jsonl")), split.iter())?;
        log::info!("{name}: {} examples", split.len());
    }
    log::info!(
        "class counts: {}",
        serde_json::to_string(&bundle.class_counts).unwrap_or_default()
    );
    Ok(())
}

fn parse_label_set(s: &str) -> Result<LabelSet> {
    match s {
        "three" => Ok(LabelSet::Three),
        "seven" => Ok(LabelSet::Seven),
        other => bail!("unknown label set {other}; expected three or seven"),
    }
}

fn class_counts_for(examples: &[fincorpus::label::LabeledExample]) -> BTreeMap<Sentiment, usize> {
    let mut counts: BTreeMap<Sentiment, usize> =
        Sentiment::ALL.into_iter().map(|s| (s, 0)).collect();
    for example in examples {
        *counts.get_mut(&example.label).expect("all labels present") += 1;
    }
    counts
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let label_set = parse_label_set(&args.labels)?;
    let mut splits = Vec::new();
    for name in SPLIT_NAMES {
        let path = args.bundle.join(format!("{name}.jsonl"));
        let examples: Vec<fincorpus::label::LabeledExample> = read_jsonl(&path)
            .with_context(|| format!("reading split {}", path.display()))?;
        splits.push(examples);
    }
    let class_counts = SPLIT_NAMES
        .iter()
        .zip(&splits)
        .map(|(name, examples)| (name.to_string(), class_counts_for(examples)))
        .collect();
    let mut iter = splits.into_iter();
    let bundle = DatasetBundle {
        train: iter.next().expect("three splits"),
        valid: iter.next().expect("three splits"),
        test: iter.next().expect("three splits"),
        class_counts,
    };
    let out_dir = args.out_dir.unwrap_or_else(|| args.bundle.join("instructions"));
    let paths = export_instruction_jsonl(&bundle, label_set, &out_dir)?;
    for path in paths {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

/// One model prediction, joined against gold examples by id.
#[derive(Debug, Deserialize)]
struct PredRecord {
    example_id: String,
    pred: Sentiment,
}

fn joined_predictions(pred_path: &Path, gold_path: &Path) -> Result<Vec<PredictionRecord>> {
    let preds: Vec<PredRecord> = read_jsonl(pred_path)?;
    let gold: Vec<fincorpus::label::LabeledExample> = read_jsonl(gold_path)?;
    let by_id: BTreeMap<&str, &fincorpus::label::LabeledExample> =
        gold.iter().map(|ex| (ex.doc_id.as_str(), ex)).collect();
    preds
        .iter()
        .map(|p| {
            let example = by_id
                .get(p.example_id.as_str())
                .with_context(|| format!("prediction {} has no gold example", p.example_id))?;
            Ok(PredictionRecord {
                example_id: p.example_id.clone(),
                gold: example.label,
                pred: p.pred,
                symbol: example.symbol.clone(),
                signal_date: example.entry_date,
            })
        })
        .collect()
}

fn write_json_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let records = joined_predictions(&args.pred, &args.gold)?;
    let report = compute_metrics(&records)?;
    write_json_report(&args.report, &report)?;
    log::info!(
        "accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4}",
        report.acc_all,
        report.f1_macro_all,
        report.f1_weighted
    );
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let records = joined_predictions(&args.pred, &args.gold)?;
    let prices = load_price_input(&args.prices)?;
    let cfg = BacktestConfig { hold_days: args.hold, mode: BacktestMode::LongShort };
    let result = backtest(&records, &prices, &cfg)?;
    write_json_report(&args.report, &result)?;
    log::info!(
        "average cumulative return {:.4}% across {} stocks ({} signals skipped)",
        result.avg_crr_pct,
        result.per_stock.len(),
        result.skipped.len()
    );
    let _ = avg_crr(&result.per_stock);
    Ok(())
}

const PANEL_HEADER: [&str; 3] = ["date", "company", "value"];

fn read_panel(path: &Path) -> Result<Panel> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening panel {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(PANEL_HEADER) {
        bail!("panel {} must have header date,company,value", path.display());
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let date: NaiveDate = record[0]
            .parse()
            .with_context(|| format!("row {}: bad date {:?}", i + 2, &record[0]))?;
        // Empty value cells are missing observations.
        let value = if record[2].is_empty() {
            f64::NAN
        } else {
            record[2]
                .parse()
                .with_context(|| format!("row {}: bad value {:?}", i + 2, &record[2]))?
        };
        rows.push(PanelRow { date, company: record[1].to_string(), value });
    }
    Ok(Panel::new(rows)?)
}

fn write_panel_csv(path: &Path, rows: &[PanelRow]) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    writer.write_record(PANEL_HEADER)?;
    for row in rows {
        let value = if row.value.is_nan() { String::new() } else { row.value.to_string() };
        writer.write_record([row.date.to_string(), row.company.clone(), value])?;
    }
    writer.flush()?;
    Ok(())
}

/// Applies a per-company series operation across the panel, preserving
/// row positions.
fn per_company(
    panel: &Panel,
    op: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<PanelRow>> {
    let rows = panel.rows();
    let mut by_company: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_company.entry(&row.company).or_default().push(i);
    }
    let mut out = rows.to_vec();
    for indices in by_company.values() {
        let series: Vec<f64> = indices.iter().map(|&i| rows[i].value).collect();
        let values = op(&series)?;
        for (&i, value) in indices.iter().zip(values) {
            out[i].value = value;
        }
    }
    Ok(out)
}

/// Both panels must describe the same (date, company) grid for row-wise
/// combination to make sense.
fn ensure_aligned(a: &Panel, b: &Panel) -> Result<()> {
    if a.rows().len() != b.rows().len()
        || a.rows()
            .iter()
            .zip(b.rows())
            .any(|(x, y)| x.date != y.date || x.company != y.company)
    {
        bail!("panels do not cover the same (date, company) rows");
    }
    Ok(())
}

fn parse_mode(s: &str) -> Result<StandardizeMode> {
    match s {
        "verbatim" => Ok(StandardizeMode::Verbatim),
        "cross_sectional" => Ok(StandardizeMode::CrossSectional),
        other => bail!("unknown mode {other}; expected verbatim or cross_sectional"),
    }
}

fn cmd_factor(args: FactorArgs) -> Result<()> {
    let panel = read_panel(&args.input)?;
    let second = args.in2.as_deref().map(read_panel).transpose()?;
    let mode = parse_mode(&args.mode)?;
    let window = || args.window.context("--window is required for this factor");
    let second_panel = || second.as_ref().context("--in2 is required for this factor");

    let rows = match args.name.as_str() {
        "ma" => per_company(&panel, |s| Ok(moving_average(s, window()?)?))?,
        "vol" => per_company(&panel, |s| Ok(volatility(s, window()?)?))?,
        "pct_change" => per_company(&panel, |s| Ok(pct_change(s, args.period)?))?,
        "pe" => {
            let earnings = second_panel()?;
            ensure_aligned(&panel, earnings)?;
            let mut by_company: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, row) in panel.rows().iter().enumerate() {
                by_company.entry(&row.company).or_default().push(i);
            }
            let mut out = panel.rows().to_vec();
            for indices in by_company.values() {
                let price: Vec<f64> = indices.iter().map(|&i| panel.rows()[i].value).collect();
                let earn: Vec<f64> =
                    indices.iter().map(|&i| earnings.rows()[i].value).collect();
                let values = price_to_earnings(&price, Earnings::Series(&earn))?;
                for (&i, value) in indices.iter().zip(values) {
                    out[i].value = value;
                }
            }
            out
        }
        "fmf" => fmf(&panel, args.period, mode)?,
        "pmf" => pmf(&panel, args.period, mode)?,
        "cmf" | "nlmf" => {
            let price_panel = second_panel()?;
            ensure_aligned(&panel, price_panel)?;
            let f = fmf(&panel, args.period, mode)?;
            let p = pmf(price_panel, args.period, mode)?;
            let fv: Vec<f64> = f.iter().map(|r| r.value).collect();
            let pv: Vec<f64> = p.iter().map(|r| r.value).collect();
            let combined = if args.name == "cmf" {
                cmf(&fv, &pv, args.weight_f, args.weight_p)?
            } else {
                nlmf(&fv, &pv)?
            };
            f.into_iter()
                .zip(combined)
                .map(|(mut row, value)| {
                    row.value = value;
                    row
                })
                .collect()
        }
        other => bail!("unknown factor {other}"),
    };

    write_panel_csv(&args.out, &rows)?;
    log::info!("wrote {} factor rows to {}", rows.len(), args.out.display());
    Ok(())
}

fn format_usd(value: f64) -> String {
    format!("${value:.2}")
}

fn cmd_cost(args: CostArgs) -> Result<()> {
    if args.table {
        for row in reference_cost_table() {
            println!(
                "{:<14} {:>12.1} GPU-h  {:>14}",
                row.run.name,
                row.cost.gpu_hours,
                format_usd(row.cost.cost_usd)
            );
        }
        return Ok(());
    }

    let gpus = args.gpus.context("--gpus is required")?;
    let hourly = args.instance_hourly.context("--instance-hourly is required")?;
    let per_instance = args.gpus_per_instance.context("--gpus-per-instance is required")?;
    let rounding = if args.exact { Rounding::Exact } else { Rounding::Cents };
    let model = GpuCostModel::new(hourly, per_instance, rounding)?;
    let run = match (args.hours, args.days) {
        (Some(h), None) => TrainRun::hours("run", gpus, h)?,
        (None, Some(d)) => TrainRun::days("run", gpus, d)?,
        _ => bail!("exactly one of --hours or --days is required"),
    };
    let cost = training_cost(&run, &model);
    println!("{:.1} GPU-h  {}", cost.gpu_hours, format_usd(cost.cost_usd));
    Ok(())
}

#[derive(Serialize)]
struct PerplexityRecord<'a> {
    id: &'a str,
    perplexity: f64,
}

fn cmd_lm(cmd: LmCmd) -> Result<()> {
    match cmd {
        LmCmd::Train { input, out, order } => {
            let corpus: Vec<CleanDocument> = read_jsonl(&input)?;
            let token_lists: Vec<Vec<String>> =
                corpus.iter().map(|d| tokenize(&d.text)).collect();
            let lm = NgramLm::train(&token_lists, order)?;
            let file =
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            lm.save(io::BufWriter::new(file))?;
            log::info!("trained order-{order} model on {} documents", corpus.len());
            Ok(())
        }
        LmCmd::Score { lm, input, out, text } => {
            let file =
                fs::File::open(&lm).with_context(|| format!("opening {}", lm.display()))?;
            let model = NgramLm::load(io::BufReader::new(file))?;
            match (input, text) {
                (None, Some(text)) => {
                    println!("{}", model.perplexity_of_text(&text)?);
                    Ok(())
                }
                (Some(input), None) => {
                    let out = out.context("--out is required with --in")?;
                    let corpus: Vec<CleanDocument> = read_jsonl(&input)?;
                    let scores = corpus
                        .iter()
                        .map(|d| {
                            Ok(PerplexityRecord {
                                id: &d.id,
                                perplexity: model.perplexity_of_text(&d.text)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    write_jsonl(&out, scores.iter())?;
                    log::info!("scored {} documents", scores.len());
                    Ok(())
                }
                _ => bail!("exactly one of --in or --text is required"),
            }
        }
    }
}

#[derive(Serialize)]
struct LangRecord<'a> {
    id: &'a str,
    lang: String,
    score: f64,
}

fn cmd_langid(cmd: LangidCmd) -> Result<()> {
    match cmd {
        LangidCmd::Build { input, lang, out } => {
            let corpus = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let profile = build_profile(&corpus, &lang)?;
            let file =
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            profile.save(io::BufWriter::new(file))?;
            log::info!("built {lang} profile from {} chars", corpus.chars().count());
            Ok(())
        }
        LangidCmd::Classify { profiles, input, out, text } => {
            let profiles: Vec<LangProfile> = load_profiles_dir(&profiles)?;
            match (input, text) {
                (None, Some(text)) => {
                    let (lang, score) = classify_lang(&profiles, &text)?;
                    println!("{lang}\t{score:.4}");
                    Ok(())
                }
                (Some(input), None) => {
                    let out = out.context("--out is required with --in")?;
                    let corpus: Vec<CleanDocument> = read_jsonl(&input)?;
                    let langs = corpus
                        .iter()
                        .map(|d| {
                            let (lang, score) = classify_lang(&profiles, &d.text)?;
                            Ok(LangRecord { id: &d.id, lang, score })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    write_jsonl(&out, langs.iter())?;
                    log::info!("classified {} documents", langs.len());
                    Ok(())
                }
                _ => bail!("exactly one of --in or --text is required"),
            }
        }
    }
}

fn cmd_pipeline(args: PipelineArgs, workers: usize) -> Result<()> {
    let manifest = run_pipeline(&args.config, workers)?;
    for (stage, count) in &manifest.counts {
        log::info!("{stage}: {count}");
    }
    log::info!("{} artifacts recorded in the manifest", manifest.artifacts.len());
    Ok(())
}
