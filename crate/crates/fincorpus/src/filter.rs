//! Document quality filters: length, special characters, repetition,
//! perplexity and language identification.
//!
//! Every statistic is a pure function of the document text, every threshold
//! comparison is inclusive (equality passes), and one report per document
//! records all five decisions whether or not an earlier filter already
//! failed. Deduplication is deliberately not here; it needs cross-document
//! state and runs as its own stage.

use crate::langid::LangProfile;
use crate::lm::NgramLm;
use crate::model::CleanDocument;
use crate::tokenize::tokenize;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("need at least two language profiles, got {0}")]
    NoProfiles(usize),
    #[error("invalid filter configuration: {0}")]
    BadConfig(String),
    #[error("no scorable documents to calibrate perplexity from")]
    NothingToCalibrate,
}

mod ngram_ratio_keys {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<usize, f64>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(n, ratio)| (n.to_string(), *ratio))
            .collect::<BTreeMap<_, _>>()
            .serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(deserializer)?
            .into_iter()
            .map(|(n, ratio)| n.parse().map(|n| (n, ratio)).map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_words: usize,
    pub max_words: usize,
    pub max_special_char_ratio: f64,
    pub max_dup_line_ratio: f64,
    /// Per-n caps on the character share of the most frequent word n-gram.
    /// Keys travel as strings so the map survives TOML tables and flattened
    /// serde contexts, both of which require string keys.
    #[serde(with = "ngram_ratio_keys")]
    pub max_top_ngram_char_ratio: BTreeMap<usize, f64>,
    /// `None` means calibrate from the corpus being filtered (90th
    /// percentile) and freeze the result in the run manifest.
    pub max_perplexity: Option<f64>,
    pub min_lang_score: f64,
    pub expected_langs: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_words: 10,
            max_words: 10_000,
            max_special_char_ratio: 0.30,
            max_dup_line_ratio: 0.30,
            max_top_ngram_char_ratio: BTreeMap::from([(2, 0.20), (3, 0.18), (4, 0.16)]),
            max_perplexity: None,
            min_lang_score: 0.80,
            expected_langs: BTreeSet::from(["en".to_string(), "zh".to_string()]),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.min_words > self.max_words {
            return Err(FilterError::BadConfig(format!(
                "min_words {} exceeds max_words {}",
                self.min_words, self.max_words
            )));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(FilterError::BadConfig(format!("{name} {v} outside [0,1]")))
            }
        };
        unit("max_special_char_ratio", self.max_special_char_ratio)?;
        unit("max_dup_line_ratio", self.max_dup_line_ratio)?;
        unit("min_lang_score", self.min_lang_score)?;
        for (n, ratio) in &self.max_top_ngram_char_ratio {
            if *n < 1 {
                return Err(FilterError::BadConfig("n-gram size must be >= 1".into()));
            }
            unit(&format!("max_top_ngram_char_ratio[{n}]"), *ratio)?;
        }
        if let Some(ppl) = self.max_perplexity {
            if ppl.is_nan() || ppl <= 0.0 {
                return Err(FilterError::BadConfig(format!("max_perplexity {ppl} not positive")));
            }
        }
        Ok(())
    }
}

/// Decision keys, in filter order.
pub const FILTER_NAMES: [&str; 5] =
    ["length", "special_chars", "repetition", "perplexity", "language"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub doc_id: String,
    pub word_count: usize,
    pub special_char_ratio: f64,
    pub dup_line_ratio: f64,
    pub top_ngram_ratios: BTreeMap<usize, f64>,
    /// `None` when the document has no tokens (the sentinel is +infinity,
    /// which JSON cannot carry); the decision is then a fail.
    pub perplexity: Option<f64>,
    pub lang: String,
    pub lang_score: f64,
    pub decisions: BTreeMap<String, bool>,
    pub kept: bool,
}

/// Words are whitespace tokens here, per the length filter's contract; the
/// repetition statistics below use the reference tokenizer instead.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Share of characters outside letters, digits, whitespace, the common
/// punctuation set `.,;:!?'"()-%$` and CJK/fullwidth punctuation. Empty
/// text scores 0.
pub fn special_char_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut special = 0usize;
    for c in text.chars() {
        total += 1;
        if !is_common_char(c) {
            special += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        special as f64 / total as f64
    }
}

fn is_common_char(c: char) -> bool {
    c.is_alphanumeric()
        || c.is_whitespace()
        || matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '\'' | '"' | '(' | ')' | '-' | '%' | '$')
        || matches!(c as u32, 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

/// Fraction of sentence-terminated lines that exactly repeat an earlier
/// line. Lines split on `.`, `!`, `?` and the CJK full stop, then trim;
/// empty segments do not count.
pub fn dup_line_ratio(text: &str) -> f64 {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut total = 0usize;
    let mut duplicates = 0usize;
    for segment in text.split(['.', '!', '?', '。']) {
        let line = segment.trim();
        if line.is_empty() {
            continue;
        }
        total += 1;
        if !seen.insert(line) {
            duplicates += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        duplicates as f64 / total as f64
    }
}

/// Character share of the most frequent word n-gram: occurrences times the
/// n-gram's token characters, over all token characters. Overlapping
/// occurrences can push the product past the total, so the ratio saturates
/// at 1. Texts with fewer than n tokens score 0.
pub fn top_ngram_char_ratio(text: &str, n: usize) -> f64 {
    let tokens = tokenize(text);
    if n == 0 || tokens.len() < n {
        return 0.0;
    }
    let total_chars: usize = tokens.iter().map(|t| t.chars().count()).sum();
    if total_chars == 0 {
        return 0.0;
    }
    let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for window in tokens.windows(n) {
        *counts.entry(window.iter().map(String::as_str).collect()).or_default() += 1;
    }
    // BTreeMap order makes the max tie-break lexicographic and stable.
    let (top_gram, top_count) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .expect("at least one n-gram");
    let gram_chars: usize = top_gram.iter().map(|t| t.chars().count()).sum();
    ((top_count * gram_chars) as f64 / total_chars as f64).min(1.0)
}

/// Perplexity of a document under `lm`; +infinity for token-less text (the
/// fail sentinel).
pub fn doc_perplexity(lm: &NgramLm, text: &str) -> f64 {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        f64::INFINITY
    } else {
        lm.perplexity(&tokens).expect("non-empty token sequence")
    }
}

/// 90th-percentile-style calibration: nearest-rank percentile of the finite
/// document perplexities.
pub fn calibrate_max_perplexity(
    corpus: &[CleanDocument],
    lm: &NgramLm,
    percentile: f64,
) -> Result<f64, FilterError> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(FilterError::BadConfig(format!("percentile {percentile} outside (0,1]")));
    }
    let mut ppls: Vec<f64> = corpus
        .iter()
        .map(|d| doc_perplexity(lm, &d.text))
        .filter(|p| p.is_finite())
        .collect();
    if ppls.is_empty() {
        return Err(FilterError::NothingToCalibrate);
    }
    ppls.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = (percentile * ppls.len() as f64).ceil() as usize;
    Ok(ppls[rank.max(1) - 1])
}

#[derive(Debug)]
pub struct FilterOutcome {
    /// Documents passing every filter, input order preserved.
    pub kept: Vec<CleanDocument>,
    /// One report per input document, same order.
    pub reports: Vec<FilterReport>,
    /// The perplexity cap actually applied (calibrated when the config left
    /// it open). Infinite when nothing was scorable.
    pub applied_max_perplexity: f64,
}

fn evaluate_document(
    doc: &CleanDocument,
    cfg: &FilterConfig,
    lm: &NgramLm,
    profiles: &[LangProfile],
    max_perplexity: f64,
) -> FilterReport {
    let words = word_count(&doc.text);
    let special = special_char_ratio(&doc.text);
    let dup_lines = dup_line_ratio(&doc.text);
    let ngram_ratios: BTreeMap<usize, f64> = cfg
        .max_top_ngram_char_ratio
        .keys()
        .map(|&n| (n, top_ngram_char_ratio(&doc.text, n)))
        .collect();
    let ppl = doc_perplexity(lm, &doc.text);
    let (lang, lang_score) =
        crate::langid::classify_lang(profiles, &doc.text).expect("profile count checked upfront");

    let mut decisions = BTreeMap::new();
    decisions.insert("length".to_string(), cfg.min_words <= words && words <= cfg.max_words);
    decisions.insert("special_chars".to_string(), special <= cfg.max_special_char_ratio);
    decisions.insert(
        "repetition".to_string(),
        dup_lines <= cfg.max_dup_line_ratio
            && ngram_ratios
                .iter()
                .all(|(n, ratio)| ratio <= &cfg.max_top_ngram_char_ratio[n]),
    );
    decisions.insert("perplexity".to_string(), ppl <= max_perplexity);
    decisions.insert(
        "language".to_string(),
        cfg.expected_langs.contains(&lang) && lang_score >= cfg.min_lang_score,
    );
    let kept = decisions.values().all(|&pass| pass);

    FilterReport {
        doc_id: doc.id.clone(),
        word_count: words,
        special_char_ratio: special,
        dup_line_ratio: dup_lines,
        top_ngram_ratios: ngram_ratios,
        perplexity: ppl.is_finite().then_some(ppl),
        lang,
        lang_score,
        decisions,
        kept,
    }
}

/// Applies every filter to every document. The per-document statistics run
/// in parallel; output order always matches input order.
pub fn run_filters(
    corpus: &[CleanDocument],
    cfg: &FilterConfig,
    lm: &NgramLm,
    profiles: &[LangProfile],
) -> Result<FilterOutcome, FilterError> {
    cfg.validate()?;
    if profiles.len() < 2 {
        return Err(FilterError::NoProfiles(profiles.len()));
    }
    let applied_max_perplexity = match cfg.max_perplexity {
        Some(ppl) => ppl,
        // An all-empty corpus has nothing to calibrate from; every document
        // fails the perplexity filter regardless, so any cap works.
        None => calibrate_max_perplexity(corpus, lm, 0.9).unwrap_or(f64::INFINITY),
    };
    let reports: Vec<FilterReport> = corpus
        .par_iter()
        .map(|doc| evaluate_document(doc, cfg, lm, profiles, applied_max_perplexity))
        .collect();
    let kept = corpus
        .iter()
        .zip(&reports)
        .filter(|(_, report)| report.kept)
        .map(|(doc, _)| doc.clone())
        .collect();
    Ok(FilterOutcome {
        kept,
        reports,
        applied_max_perplexity,
    })
}
