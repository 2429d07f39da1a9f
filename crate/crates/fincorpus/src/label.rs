//! Market-feedback labeling: join news to daily price series and derive
//! three-way sentiment from the forward return, plus prompt rendering and
//! adapters for external labeled datasets.

use crate::model::{FineSentiment, Sentiment};
use crate::prices::PriceSeries;
use chrono::{DateTime, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("invalid labeling configuration: {0}")]
    BadConfig(String),
    #[error("no symbol on document")]
    MissingSymbol,
    #[error("no price series for symbol {0}")]
    UnknownSymbol(String),
    #[error("insufficient price history for {symbol} around {date}")]
    InsufficientHistory { symbol: String, date: NaiveDate },
    #[error("prompt text is empty")]
    EmptyText,
    #[error("sentiment score {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("{path} line {line}: {message}")]
    Schema { path: String, line: u64, message: String },
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceField {
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    /// Return magnitude, in percent, beyond which a label is non-neutral.
    pub threshold_pct: f64,
    /// Holding distance measured in trading days (bar positions), not
    /// calendar days.
    pub horizon_days: usize,
    pub price_field: PriceField,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig { threshold_pct: 2.0, horizon_days: 1, price_field: PriceField::Close }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.threshold_pct.is_nan() || self.threshold_pct <= 0.0 {
            return Err(LabelError::BadConfig(format!(
                "threshold_pct {} not positive",
                self.threshold_pct
            )));
        }
        if self.horizon_days == 0 {
            return Err(LabelError::BadConfig("horizon_days must be >= 1".into()));
        }
        Ok(())
    }
}

/// Positive above the threshold, Negative below its negation, Neutral
/// otherwise; both boundaries are Neutral.
pub fn label_from_return(r_pct: f64, cfg: &LabelingConfig) -> Sentiment {
    if r_pct > cfg.threshold_pct {
        Sentiment::Positive
    } else if r_pct < -cfg.threshold_pct {
        Sentiment::Negative
    } else {
        Sentiment::Neutral
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardReturn {
    pub r_pct: f64,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
}

/// Close-to-close forward return: entry at the last bar dated at or before
/// the news timestamp's UTC date, exit `horizon_days` bars later.
pub fn forward_return(
    series: &PriceSeries,
    at: DateTime<Utc>,
    horizon_days: usize,
) -> Result<ForwardReturn, LabelError> {
    let date = at.date_naive();
    let insufficient = || LabelError::InsufficientHistory {
        symbol: series.symbol().to_string(),
        date,
    };
    let entry = series.index_at_or_before(date).ok_or_else(insufficient)?;
    let exit = entry + horizon_days;
    let bars = series.bars();
    let exit_bar = bars.get(exit).ok_or_else(insufficient)?;
    let entry_bar = &bars[entry];
    Ok(ForwardReturn {
        r_pct: (exit_bar.close / entry_bar.close - 1.0) * 100.0,
        entry_date: entry_bar.date,
        exit_date: exit_bar.date,
    })
}

/// The slice of a document that labeling needs; the pipeline builds these
/// by joining cleaned text with the raw document's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingDoc {
    pub doc_id: String,
    pub symbol: Option<String>,
    pub text: String,
    #[serde(with = "crate::model::rfc3339_secs")]
    pub published_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub doc_id: String,
    pub symbol: String,
    pub text: String,
    pub forward_return_pct: f64,
    pub label: Sentiment,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledDoc {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub counts: BTreeMap<Sentiment, usize>,
    pub fractions: BTreeMap<Sentiment, f64>,
}

impl LabelDistribution {
    /// All three labels always appear; fractions are zero when there are no
    /// examples at all.
    pub fn from_labels(labels: impl IntoIterator<Item = Sentiment>) -> Self {
        let mut counts: BTreeMap<Sentiment, usize> =
            Sentiment::ALL.iter().map(|&s| (s, 0)).collect();
        let mut total = 0usize;
        for label in labels {
            *counts.get_mut(&label).expect("all variants present") += 1;
            total += 1;
        }
        let fractions = counts
            .iter()
            .map(|(&s, &c)| (s, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
            .collect();
        LabelDistribution { counts, fractions }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelingOutcome {
    pub examples: Vec<LabeledExample>,
    pub distribution: LabelDistribution,
    pub unlabeled: Vec<UnlabeledDoc>,
}

/// Labels every document it can; per-document failures land in `unlabeled`
/// with their reason instead of aborting the run. Output order follows
/// input order in both lists.
pub fn label_corpus(
    docs: &[LabelingDoc],
    prices: &BTreeMap<String, PriceSeries>,
    cfg: &LabelingConfig,
) -> Result<LabelingOutcome, LabelError> {
    cfg.validate()?;
    let results: Vec<Result<LabeledExample, LabelError>> = docs
        .par_iter()
        .map(|doc| {
            let symbol = doc.symbol.as_deref().ok_or(LabelError::MissingSymbol)?;
            let series = prices
                .get(symbol)
                .ok_or_else(|| LabelError::UnknownSymbol(symbol.to_string()))?;
            let fr = forward_return(series, doc.published_at, cfg.horizon_days)?;
            Ok(LabeledExample {
                doc_id: doc.doc_id.clone(),
                symbol: symbol.to_string(),
                text: doc.text.clone(),
                forward_return_pct: fr.r_pct,
                label: label_from_return(fr.r_pct, cfg),
                entry_date: fr.entry_date,
                exit_date: fr.exit_date,
            })
        })
        .collect();
    let mut examples = Vec::new();
    let mut unlabeled = Vec::new();
    for (doc, result) in docs.iter().zip(results) {
        match result {
            Ok(example) => examples.push(example),
            Err(reason) => unlabeled.push(UnlabeledDoc {
                doc_id: doc.doc_id.clone(),
                reason: reason.to_string(),
            }),
        }
    }
    let distribution = LabelDistribution::from_labels(examples.iter().map(|e| e.label));
    Ok(LabelingOutcome { examples, distribution, unlabeled })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSet {
    Three,
    Seven,
}

/// Instruction text asking for the sentiment of a news item. The frame and
/// the seven-way answer list are fixed strings; callers depending on exact
/// bytes get them.
pub fn render_prompt(text: &str, label_set: LabelSet) -> Result<String, LabelError> {
    if text.is_empty() {
        return Err(LabelError::EmptyText);
    }
    let answers = match label_set {
        LabelSet::Three => "positive/negative/neutral".to_string(),
        LabelSet::Seven => {
            let phrases: Vec<&str> = FineSentiment::ALL.iter().map(|s| s.as_str()).collect();
            phrases.join("/")
        }
    };
    Ok(format!(
        "What is the sentiment of this news? {text} Please choose an answer from \
         {{{answers}}}, then provide some short reasons."
    ))
}

/// Half-open bucketing of a continuous score in [-1, 1]: Negative below
/// -0.1, Neutral from -0.1 up to but excluding 0.1, Positive from 0.1.
pub fn discretize_fiqa(score: f64) -> Result<Sentiment, LabelError> {
    if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
        return Err(LabelError::OutOfRange(score));
    }
    Ok(if score < -0.1 {
        Sentiment::Negative
    } else if score < 0.1 {
        Sentiment::Neutral
    } else {
        Sentiment::Positive
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalSchema {
    Fpb,
    Fiqa,
    Tfns,
    Nwgi,
}

impl ExternalSchema {
    pub fn name(&self) -> &'static str {
        match self {
            ExternalSchema::Fpb => "fpb",
            ExternalSchema::Fiqa => "fiqa",
            ExternalSchema::Tfns => "tfns",
            ExternalSchema::Nwgi => "nwgi",
        }
    }

    fn header(&self) -> &'static str {
        match self {
            ExternalSchema::Fpb => "sentence,label",
            ExternalSchema::Fiqa => "sentence,score",
            ExternalSchema::Tfns => "text,label",
            ExternalSchema::Nwgi => "text,label",
        }
    }
}

impl std::str::FromStr for ExternalSchema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fpb" => Ok(ExternalSchema::Fpb),
            "fiqa" => Ok(ExternalSchema::Fiqa),
            "tfns" => Ok(ExternalSchema::Tfns),
            "nwgi" => Ok(ExternalSchema::Nwgi),
            other => Err(format!("unknown dataset schema `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalExample {
    pub id: String,
    pub text: String,
    pub label: Sentiment,
    /// Only the seven-way source keeps its finer grade; everything else is
    /// natively three-way.
    pub fine_label: Option<FineSentiment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalLoad {
    pub examples: Vec<ExternalExample>,
    pub distribution: LabelDistribution,
}

/// Loads a CSV of externally labeled sentences under one of the known
/// schemas and normalizes everything onto the three-way label set.
pub fn load_external_labels(
    path: impl AsRef<Path>,
    schema: ExternalSchema,
) -> Result<ExternalLoad, LabelError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| LabelError::Io {
        path: name.clone(),
        message: e.to_string(),
    })?;
    let header = reader
        .headers()
        .map_err(|e| LabelError::Io { path: name.clone(), message: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != schema.header() {
        return Err(LabelError::Schema {
            path: name,
            line: 1,
            message: format!("expected header `{}`, found `{header}`", schema.header()),
        });
    }
    let mut examples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LabelError::Schema {
            path: name.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let schema_err = |message: String| LabelError::Schema {
            path: name.clone(),
            line,
            message,
        };
        if record.len() != 2 {
            return Err(schema_err(format!("expected 2 fields, found {}", record.len())));
        }
        let text = record.get(0).unwrap_or("").to_string();
        let raw = record.get(1).unwrap_or("").trim();
        let (label, fine_label) = match schema {
            ExternalSchema::Fpb => {
                let label = match raw.to_lowercase().as_str() {
                    "positive" => Sentiment::Positive,
                    "negative" => Sentiment::Negative,
                    "neutral" => Sentiment::Neutral,
                    other => return Err(schema_err(format!("unknown label `{other}`"))),
                };
                (label, None)
            }
            ExternalSchema::Fiqa => {
                let score: f64 = raw
                    .parse()
                    .map_err(|e| schema_err(format!("bad score `{raw}`: {e}")))?;
                let label = discretize_fiqa(score)
                    .map_err(|e| schema_err(e.to_string()))?;
                (label, None)
            }
            ExternalSchema::Tfns => {
                let label = match raw {
                    "Bullish" => Sentiment::Positive,
                    "Bearish" => Sentiment::Negative,
                    "Neutral" => Sentiment::Neutral,
                    other => return Err(schema_err(format!("unknown label `{other}`"))),
                };
                (label, None)
            }
            ExternalSchema::Nwgi => {
                let fine = FineSentiment::parse(raw)
                    .ok_or_else(|| schema_err(format!("unknown label `{raw}`")))?;
                (fine.coarse(), Some(fine))
            }
        };
        examples.push(ExternalExample {
            id: format!("{}-{}", schema.name(), row + 1),
            text,
            label,
            fine_label,
        });
    }
    let distribution = LabelDistribution::from_labels(examples.iter().map(|e| e.label));
    Ok(ExternalLoad { examples, distribution })
}
