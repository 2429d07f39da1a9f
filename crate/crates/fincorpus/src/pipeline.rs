//! End-to-end corpus runs driven by a single TOML config.
//!
//! The config names an output directory plus up to seven stage tables:
//! `ingest`, `clean`, `filter`, `dedup`, `label`, `split`, `export`. A
//! missing table skips that stage and passes documents through unchanged;
//! an unknown table is a config error before anything touches disk. The
//! stages always run in the order above, each one consuming the previous
//! stage's output.
//!
//! Every executed stage writes its output as a JSONL artifact under
//! `out_dir`, and the run finishes by writing `run_manifest.json` with the
//! config snapshot, per-stage record counts, and a content digest per
//! artifact. Nothing in the manifest or the artifacts depends on the
//! wall clock or worker count, so re-running an unchanged config
//! reproduces every byte. When a stage fails the manifest is still
//! written with `failed_stage` set, keeping the completed prefix of the
//! run inspectable.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clean::{clean_document, CleaningConfig};
use crate::dataset::{
    export_instruction_jsonl, temporal_then_random_split, DatasetError, SplitSpec, SPLIT_NAMES,
};
use crate::dedup::{dedup_corpus, DedupConfig, DedupError};
use crate::filter::{run_filters, FilterConfig, FilterError};
use crate::ingest::{
    connector::connector_from_rule, rules::load_rules, run_crawl, store::read_store,
    store::StoreLayout, FetchTask, IngestError, TaskKey,
};
use crate::label::{label_corpus, LabelError, LabelSet, LabelingConfig, LabelingDoc};
use crate::langid::LangIdError;
use crate::lm::{LmError, NgramLm};
use crate::model::{CleanDocument, FetchConfig, RawDocument};
use crate::prices::PriceError;
use crate::tokenize::tokenize;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad pipeline config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("pipeline io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("rules file does not define source {0}")]
    UnknownSource(String),
    #[error("document {0} lost its raw metadata between stages")]
    MissingMetadata(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    LangId(#[from] LangIdError),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

/// Whole-run configuration. Relative paths, including `out_dir`, resolve
/// against the directory containing the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Raw corpus JSONL consumed when no ingest stage is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<CleaningConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export: Option<ExportStage>,
}

/// Crawl plan: one dated task per symbol per day, written into an
/// incremental store that later runs resume instead of refetching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestStage {
    /// Source rules TOML; fixture paths inside it resolve against its dir.
    pub rules: PathBuf,
    /// Name of the source to crawl, as declared in the rules file.
    pub source: String,
    #[serde(default)]
    pub symbols: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Crawl store root; defaults to `<out_dir>/store`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub fetch: FetchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    /// Directory of language profile JSON files (two or more).
    pub profiles: PathBuf,
    /// Pre-trained scoring model. When absent, a model is trained on the
    /// corpus being filtered and perplexity is scored against that.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm: Option<PathBuf>,
    /// N-gram order for the fallback model trained on the corpus itself.
    #[serde(default = "default_lm_order")]
    pub lm_order: usize,
    #[serde(flatten)]
    pub config: FilterConfig,
}

fn default_lm_order() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStage {
    /// Price CSV file, or a directory of one CSV per symbol.
    pub prices: PathBuf,
    #[serde(flatten)]
    pub config: LabelingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportStage {
    #[serde(default = "default_label_set")]
    pub label_set: LabelSet,
}

fn default_label_set() -> LabelSet {
    LabelSet::Three
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Durable record of one pipeline run. Contains no timestamps: two runs
/// of the same config must produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    /// Record counts per executed stage.
    pub counts: BTreeMap<String, usize>,
    /// Artifact path relative to `out_dir`, mapped to its sha256 digest.
    pub artifacts: BTreeMap<String, String>,
    /// Name of the stage that aborted the run, if any. Entries from the
    /// stages that completed before it are retained.
    pub failed_stage: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parses and validates a config file, returning it with the directory
/// that relative paths resolve against.
pub fn load_config(path: impl AsRef<Path>) -> Result<(PipelineConfig, PathBuf), PipelineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg: PipelineConfig = toml::from_str(&text)
        .map_err(|e| PipelineError::Config { path: path.to_path_buf(), message: e.to_string() })?;
    validate_config(&cfg)
        .map_err(|message| PipelineError::Config { path: path.to_path_buf(), message })?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

fn validate_config(cfg: &PipelineConfig) -> Result<(), String> {
    match (&cfg.ingest, &cfg.input) {
        (None, None) => return Err("needs an ingest stage or an input corpus".to_string()),
        (Some(_), Some(_)) => {
            return Err("ingest stage and input corpus are mutually exclusive".to_string())
        }
        _ => {}
    }
    if let Some(ingest) = &cfg.ingest {
        if ingest.start > ingest.end {
            return Err("ingest start date is after the end date".to_string());
        }
        if ingest.symbols.is_empty() {
            return Err("ingest stage needs at least one symbol".to_string());
        }
    }
    if cfg.split.is_some() && cfg.label.is_none() {
        return Err("split stage needs the label stage before it".to_string());
    }
    if cfg.export.is_some() && cfg.split.is_none() {
        return Err("export stage needs the split stage before it".to_string());
    }
    Ok(())
}

/// Runs every configured stage and writes the manifest. On stage failure
/// the partial manifest is still written before the error propagates.
pub fn run_pipeline(
    config_path: impl AsRef<Path>,
    workers: usize,
) -> Result<RunManifest, PipelineError> {
    let config_path = config_path.as_ref();
    let (cfg, base) = load_config(config_path)?;
    let out_dir = resolve(&base, &cfg.out_dir);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        counts: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        failed_stage: None,
    };

    let outcome = pool.install(|| run_stages(&cfg, &base, &out_dir, workers, &mut manifest));
    match outcome {
        Ok(()) => {
            write_manifest_file(&out_dir, &manifest)?;
            Ok(manifest)
        }
        Err(err) => {
            // Best effort: the stage error is what the caller needs to see.
            if let Err(werr) = write_manifest_file(&out_dir, &manifest) {
                log::warn!("could not write partial manifest: {werr}");
            }
            Err(err)
        }
    }
}

fn write_manifest_file(out_dir: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| PipelineError::Io {
        path: path.clone(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

fn run_stages(
    cfg: &PipelineConfig,
    base: &Path,
    out_dir: &Path,
    workers: usize,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    manifest.failed_stage = Some("ingest".to_string());
    let mut raws = match &cfg.ingest {
        Some(stage) => ingest_stage(stage, base, out_dir, workers)?,
        None => {
            let input = resolve(base, cfg.input.as_ref().expect("validated: input set"));
            crate::jsonl::read_jsonl::<RawDocument>(&input)?
        }
    };
    // Canonical corpus order. Content-derived, so downstream artifacts do
    // not depend on store layout or input file arrangement.
    raws.sort_by(|a, b| a.published_at.cmp(&b.published_at).then_with(|| a.id.cmp(&b.id)));
    write_artifact(out_dir, manifest, "raw.jsonl", &raws)?;
    manifest.counts.insert("ingested".to_string(), raws.len());

    // Joined back in at the label stage, after the documents have shed
    // their raw form.
    let meta: BTreeMap<String, (Option<String>, DateTime<Utc>)> = raws
        .iter()
        .map(|r| (r.id.clone(), (r.symbol.clone(), r.published_at)))
        .collect();
    let published: BTreeMap<String, DateTime<Utc>> =
        raws.iter().map(|r| (r.id.clone(), r.published_at)).collect();

    manifest.failed_stage = Some("clean".to_string());
    let cleaned: Vec<CleanDocument> = match &cfg.clean {
        Some(clean_cfg) => raws.iter().map(|r| clean_document(r, clean_cfg)).collect(),
        None => raws.iter().map(verbatim_document).collect(),
    };
    if cfg.clean.is_some() {
        write_artifact(out_dir, manifest, "cleaned.jsonl", &cleaned)?;
        manifest.counts.insert("cleaned".to_string(), cleaned.len());
    }

    manifest.failed_stage = Some("filter".to_string());
    let filtered = match &cfg.filter {
        Some(stage) => {
            let kept = filter_stage(stage, base, &cleaned)?;
            write_artifact(out_dir, manifest, "filtered.jsonl", &kept)?;
            manifest.counts.insert("filtered".to_string(), kept.len());
            kept
        }
        None => cleaned,
    };

    manifest.failed_stage = Some("dedup".to_string());
    let deduped = match &cfg.dedup {
        Some(dedup_cfg) => {
            let outcome = dedup_corpus(&filtered, &published, dedup_cfg)?;
            write_artifact(out_dir, manifest, "deduped.jsonl", &outcome.kept)?;
            manifest.counts.insert("deduped".to_string(), outcome.kept.len());
            outcome.kept
        }
        None => filtered,
    };

    let Some(label_stage_cfg) = &cfg.label else {
        manifest.failed_stage = None;
        return Ok(());
    };
    manifest.failed_stage = Some("label".to_string());
    let prices_path = resolve(base, &label_stage_cfg.prices);
    let prices = if prices_path.is_dir() {
        crate::prices::load_prices_dir(&prices_path)?
    } else {
        crate::prices::load_prices_csv(&prices_path)?
    };
    let docs = deduped
        .iter()
        .map(|doc| {
            let (symbol, published_at) = meta
                .get(&doc.id)
                .cloned()
                .ok_or_else(|| PipelineError::MissingMetadata(doc.id.clone()))?;
            Ok(LabelingDoc { doc_id: doc.id.clone(), symbol, text: doc.text.clone(), published_at })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let labeled = label_corpus(&docs, &prices, &label_stage_cfg.config)?;
    write_artifact(out_dir, manifest, "labeled.jsonl", &labeled.examples)?;
    write_artifact(out_dir, manifest, "unlabeled.jsonl", &labeled.unlabeled)?;
    manifest.counts.insert("labeled".to_string(), labeled.examples.len());

    let Some(split_spec) = &cfg.split else {
        manifest.failed_stage = None;
        return Ok(());
    };
    manifest.failed_stage = Some("split".to_string());
    let bundle = temporal_then_random_split(labeled.examples, split_spec)?;
    for name in SPLIT_NAMES {
        let rel = format!("splits/{name}.jsonl");
        write_artifact(out_dir, manifest, &rel, bundle.split(name).expect("known split"))?;
        manifest.counts.insert(name.to_string(), bundle.split(name).expect("known split").len());
    }

    let Some(export_stage) = &cfg.export else {
        manifest.failed_stage = None;
        return Ok(());
    };
    manifest.failed_stage = Some("export".to_string());
    let paths = export_instruction_jsonl(&bundle, export_stage.label_set, out_dir.join("instructions"))?;
    for path in &paths {
        let rel = path
            .strip_prefix(out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace(std::path::MAIN_SEPARATOR, "/");
        let digest = digest_file(path)?;
        manifest.artifacts.insert(rel, digest);
    }
    manifest.counts.insert("exported".to_string(), bundle.len());

    manifest.failed_stage = None;
    Ok(())
}

/// Identity stand-in for a skipped clean stage: same id, verbatim text,
/// no transforms recorded.
fn verbatim_document(raw: &RawDocument) -> CleanDocument {
    let text = format!("{} {}", raw.title, raw.body);
    let len = text.chars().count();
    CleanDocument {
        id: raw.id.clone(),
        text,
        transforms: Vec::new(),
        original_len: len,
        cleaned_len: len,
    }
}

fn ingest_stage(
    stage: &IngestStage,
    base: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<RawDocument>, PipelineError> {
    let rules_path = resolve(base, &stage.rules);
    let rules = load_rules(&rules_path)?;
    let rule = rules
        .sources
        .get(&stage.source)
        .ok_or_else(|| PipelineError::UnknownSource(stage.source.clone()))?;
    let rules_base = rules_path.parent().unwrap_or(Path::new("."));
    let connector = connector_from_rule(&stage.source, rule, rules_base)?;

    let store_root = match &stage.store {
        Some(path) => resolve(base, path),
        None => out_dir.join("store"),
    };
    let layout = StoreLayout::new(&store_root);

    let mut plan = Vec::new();
    for symbol in &stage.symbols {
        let mut date = stage.start;
        while date <= stage.end {
            plan.push(FetchTask {
                source: stage.source.clone(),
                symbol: symbol.clone(),
                key: TaskKey::Date(date),
            });
            date = date.succ_opt().expect("date range stays in bounds");
        }
    }

    let report = run_crawl(&plan, connector.as_ref(), &stage.fetch, &layout, workers)?;
    for failure in &report.failed {
        log::warn!("fetch failed for {}: {}", failure.task, failure.error);
    }
    log::info!(
        "crawl of {}: {} fetched, {} already stored, {} failed",
        stage.source,
        report.done,
        report.skipped,
        report.failed.len()
    );
    Ok(read_store(&store_root)?)
}

fn filter_stage(
    stage: &FilterStage,
    base: &Path,
    corpus: &[CleanDocument],
) -> Result<Vec<CleanDocument>, PipelineError> {
    let profiles = crate::langid::load_profiles_dir(resolve(base, &stage.profiles))?;
    let lm = match &stage.lm {
        Some(path) => {
            let path = resolve(base, path);
            let file = fs::File::open(&path).map_err(io_err(&path))?;
            NgramLm::load(io::BufReader::new(file))?
        }
        None => {
            let token_lists: Vec<Vec<String>> =
                corpus.iter().map(|doc| tokenize(&doc.text)).collect();
            NgramLm::train(&token_lists, stage.lm_order)?
        }
    };
    let outcome = run_filters(corpus, &stage.config, &lm, &profiles)?;
    log::info!(
        "filter kept {} of {} documents (perplexity cap {:.3})",
        outcome.kept.len(),
        corpus.len(),
        outcome.applied_max_perplexity
    );
    Ok(outcome.kept)
}

fn write_artifact<T: Serialize>(
    out_dir: &Path,
    manifest: &mut RunManifest,
    rel: &str,
    records: &[T],
) -> Result<(), PipelineError> {
    let path = out_dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    crate::jsonl::write_jsonl(&path, records.iter())?;
    manifest.artifacts.insert(rel.to_string(), digest_file(&path)?);
    Ok(())
}

fn digest_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut acc, byte| {
        use std::fmt::Write;
        let _ = write!(acc, "{byte:02x}");
        acc
    }))
}
