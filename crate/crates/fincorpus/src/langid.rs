//! Character n-gram language identification.
//!
//! Classic rank-order profiles: a language is summarized by its 300 most
//! frequent character n-grams (n = 1..=5), and text is classified by the
//! out-of-place distance between its own profile and each language's. The
//! score maps distance onto [0, 1], where 1 is a rank-for-rank match.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const PROFILE_SIZE: usize = 300;
pub const NGRAM_MIN: usize = 1;
pub const NGRAM_MAX: usize = 5;
pub const MIN_CORPUS_CHARS: usize = 1000;

const PROFILE_FILE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LangIdError {
    #[error("training corpus has {0} characters, need at least {MIN_CORPUS_CHARS}")]
    CorpusTooSmall(usize),
    #[error("need at least two language profiles, got {0}")]
    NoProfiles(usize),
    #[error("unsupported profile file version {0}")]
    BadVersion(u32),
    #[error("malformed profile file: {0}")]
    BadFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LangProfile {
    version: u32,
    pub lang: String,
    /// Most frequent first; frequency ties break lexicographically.
    pub ranked_ngrams: Vec<String>,
}

/// Lowercases and collapses whitespace runs to single spaces so profiles
/// are insensitive to formatting.
fn normalize(text: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Ranked top-K character n-grams of `text`, the shared recipe for both
/// training profiles and classification queries.
fn ranked_ngrams(text: &str) -> Vec<String> {
    let chars = normalize(text);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        if chars.len() < n {
            break;
        }
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect()).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    // BTreeMap iteration is lexicographic, so a stable sort by descending
    // count leaves ties lexicographic.
    entries.sort_by_key(|e| std::cmp::Reverse(e.1));
    entries.into_iter().take(PROFILE_SIZE).map(|(g, _)| g).collect()
}

pub fn build_profile(corpus: &str, lang: impl Into<String>) -> Result<LangProfile, LangIdError> {
    let char_count = corpus.chars().count();
    if char_count < MIN_CORPUS_CHARS {
        return Err(LangIdError::CorpusTooSmall(char_count));
    }
    Ok(LangProfile {
        version: PROFILE_FILE_VERSION,
        lang: lang.into(),
        ranked_ngrams: ranked_ngrams(corpus),
    })
}

fn out_of_place_distance(query: &[String], profile: &LangProfile) -> u64 {
    let ranks: HashMap<&str, usize> = profile
        .ranked_ngrams
        .iter()
        .enumerate()
        .map(|(rank, gram)| (gram.as_str(), rank))
        .collect();
    query
        .iter()
        .enumerate()
        .map(|(rank, gram)| match ranks.get(gram.as_str()) {
            Some(&profile_rank) => rank.abs_diff(profile_rank) as u64,
            None => PROFILE_SIZE as u64,
        })
        .sum()
}

/// Best-matching language and a score in [0, 1]. Distance ties break on the
/// lexicographically smallest language code so the result never depends on
/// profile list order. Empty (or whitespace-only) text scores 0 against the
/// first profile.
pub fn classify_lang(profiles: &[LangProfile], text: &str) -> Result<(String, f64), LangIdError> {
    if profiles.len() < 2 {
        return Err(LangIdError::NoProfiles(profiles.len()));
    }
    let query = ranked_ngrams(text);
    if query.is_empty() {
        return Ok((profiles[0].lang.clone(), 0.0));
    }
    let max_distance = (PROFILE_SIZE * query.len()) as u64;
    let best = profiles
        .iter()
        .map(|p| (out_of_place_distance(&query, p), p.lang.as_str()))
        .min()
        .expect("at least two profiles");
    let score = 1.0 - best.0 as f64 / max_distance as f64;
    Ok((best.1.to_string(), score))
}

impl LangProfile {
    pub fn save(&self, writer: impl Write) -> Result<(), LangIdError> {
        serde_json::to_writer(writer, self).map_err(|e| LangIdError::BadFile(e.to_string()))
    }

    pub fn load(reader: impl Read) -> Result<LangProfile, LangIdError> {
        let profile: LangProfile =
            serde_json::from_reader(reader).map_err(|e| LangIdError::BadFile(e.to_string()))?;
        if profile.version != PROFILE_FILE_VERSION {
            return Err(LangIdError::BadVersion(profile.version));
        }
        Ok(profile)
    }
}

/// Loads every `*.json` profile in `dir`, sorted by file name.
pub fn load_profiles_dir(dir: impl AsRef<Path>) -> Result<Vec<LangProfile>, LangIdError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())
        .map_err(|e| LangIdError::BadFile(format!("{}: {e}", dir.as_ref().display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let file = std::fs::File::open(&p)
                .map_err(|e| LangIdError::BadFile(format!("{}: {e}", p.display())))?;
            LangProfile::load(std::io::BufReader::new(file))
        })
        .collect()
}
