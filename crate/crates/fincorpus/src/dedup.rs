//! Exact and near-duplicate removal.
//!
//! Two passes: documents with an identical normalized-text digest collapse
//! first, then MinHash signatures with LSH banding propose near-duplicate
//! candidates which are confirmed against exact shingle-set Jaccard before
//! anything is dropped. Confirmation makes the result independent of LSH
//! luck on the false-positive side; banding parameters control recall.
//!
//! Within a duplicate cluster the kept representative is the document with
//! the earliest publication date, ties broken by smallest id; documents
//! without a known date lose to any dated one.

use crate::clean::standardize_whitespace;
use crate::model::CleanDocument;
use crate::rng::splitmix64;
use crate::tokenize::tokenize;
use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Published seed for the MinHash permutation family.
pub const MINHASH_SEED: u64 = 0x5EED_CAFE_F00D_0001;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("invalid dedup configuration: {0}")]
    BadConfig(String),
    #[error("signatures have different permutation counts: {0} vs {1}")]
    PermMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    /// Shingle width in tokens; shorter documents contribute their whole
    /// token sequence as a single shingle.
    pub shingle_size: usize,
    pub jaccard_threshold: f64,
    pub num_perm: usize,
    pub bands: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig { shingle_size: 5, jaccard_threshold: 0.8, num_perm: 128, bands: 16 }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.shingle_size < 1 {
            return Err(DedupError::BadConfig("shingle_size must be >= 1".into()));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(DedupError::BadConfig(format!(
                "jaccard_threshold {} outside (0,1]",
                self.jaccard_threshold
            )));
        }
        if self.num_perm == 0 || self.bands == 0 || !self.num_perm.is_multiple_of(self.bands) {
            return Err(DedupError::BadConfig(format!(
                "bands {} must evenly divide num_perm {}",
                self.bands, self.num_perm
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.num_perm / self.bands
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinHashSignature {
    pub num_perm: usize,
    pub values: Vec<u64>,
    pub bands: usize,
    pub rows: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = FNV_OFFSET;
    for byte in bytes {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn shingle_hash(tokens: &[String]) -> u64 {
    let mut hash = FNV_OFFSET;
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            hash ^= 0x1f;
            hash = hash.wrapping_mul(FNV_PRIME);
        }
        for byte in token.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

/// Hashed shingle set of a text: sliding token windows of `shingle_size`,
/// or the whole (possibly empty) token sequence when it is shorter.
pub fn shingle_set(text: &str, shingle_size: usize) -> BTreeSet<u64> {
    let tokens = tokenize(text);
    if tokens.len() >= shingle_size {
        tokens.windows(shingle_size).map(shingle_hash).collect()
    } else {
        BTreeSet::from([shingle_hash(&tokens)])
    }
}

/// Exact Jaccard similarity of the two texts' shingle sets.
pub fn exact_jaccard(a: &str, b: &str, shingle_size: usize) -> f64 {
    let sa = shingle_set(a, shingle_size);
    let sb = shingle_set(b, shingle_size);
    let intersection = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - intersection;
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

fn permutations(num_perm: usize) -> Vec<(u64, u64)> {
    let mut state = MINHASH_SEED;
    (0..num_perm)
        .map(|_| {
            let a = splitmix64(&mut state) | 1;
            let b = splitmix64(&mut state);
            (a, b)
        })
        .collect()
}

fn perm_hash(a: u64, b: u64, x: u64) -> u64 {
    let v = a.wrapping_mul(x).wrapping_add(b);
    v ^ (v >> 31)
}

/// Deterministic MinHash signature of a document's shingle set.
pub fn signature(doc: &CleanDocument, cfg: &DedupConfig) -> MinHashSignature {
    let shingles = shingle_set(&doc.text, cfg.shingle_size);
    let values = permutations(cfg.num_perm)
        .iter()
        .map(|&(a, b)| {
            shingles.iter().map(|&x| perm_hash(a, b, x)).min().unwrap_or(u64::MAX)
        })
        .collect();
    MinHashSignature { num_perm: cfg.num_perm, values, bands: cfg.bands, rows: cfg.rows() }
}

/// Fraction of matching signature slots, an unbiased Jaccard estimate.
pub fn estimated_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.num_perm != b.num_perm {
        return Err(DedupError::PermMismatch(a.num_perm, b.num_perm));
    }
    let matches = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(matches as f64 / a.num_perm as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Surviving documents in input order.
    pub kept: Vec<CleanDocument>,
    /// Every dropped document mapped to the kept representative it
    /// duplicates.
    pub dropped: BTreeMap<String, String>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn union(&mut self, i: usize, j: usize) {
        let (ri, rj) = (self.find(i), self.find(j));
        if ri != rj {
            // Keep the smaller index as root so merges are order-independent.
            let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
            self.parent[hi] = lo;
        }
    }
}

fn digest(text: &str) -> [u8; 32] {
    let normalized = standardize_whitespace(&text.to_lowercase());
    Sha256::digest(normalized.as_bytes()).into()
}

/// Sort key for representative selection: dated documents beat undated,
/// earlier dates beat later, and the smallest id breaks exact ties.
fn rep_key<'a>(
    doc: &'a CleanDocument,
    published_at: &BTreeMap<String, DateTime<Utc>>,
) -> (bool, Option<DateTime<Utc>>, &'a str) {
    let date = published_at.get(&doc.id).copied();
    (date.is_none(), date, doc.id.as_str())
}

/// Removes exact then near duplicates. `published_at` supplies each
/// document's publication timestamp for representative selection; absent
/// entries simply never win against dated ones.
pub fn dedup_corpus(
    corpus: &[CleanDocument],
    published_at: &BTreeMap<String, DateTime<Utc>>,
    cfg: &DedupConfig,
) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;

    // Exact pass over normalized-text digests.
    let mut by_digest: BTreeMap<[u8; 32], Vec<usize>> = BTreeMap::new();
    for (i, doc) in corpus.iter().enumerate() {
        by_digest.entry(digest(&doc.text)).or_default().push(i);
    }
    let mut dropped: BTreeMap<String, String> = BTreeMap::new();
    let mut survivors: Vec<usize> = Vec::new();
    for group in by_digest.values() {
        let rep = *group
            .iter()
            .min_by_key(|&&i| rep_key(&corpus[i], published_at))
            .expect("digest groups are non-empty");
        survivors.push(rep);
        for &i in group {
            if i != rep {
                dropped.insert(corpus[i].id.clone(), corpus[rep].id.clone());
            }
        }
    }
    survivors.sort_unstable();

    // Near-duplicate pass over the exact-pass survivors.
    let shingles: Vec<BTreeSet<u64>> = survivors
        .par_iter()
        .map(|&i| shingle_set(&corpus[i].text, cfg.shingle_size))
        .collect();
    let signatures: Vec<MinHashSignature> = survivors
        .par_iter()
        .map(|&i| signature(&corpus[i], cfg))
        .collect();

    let mut buckets: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
    for (pos, sig) in signatures.iter().enumerate() {
        for band in 0..cfg.bands {
            let row_bytes = sig.values[band * cfg.rows()..(band + 1) * cfg.rows()]
                .iter()
                .flat_map(|v| v.to_le_bytes());
            buckets.entry((band, fnv1a(row_bytes))).or_default().push(pos);
        }
    }
    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for bucket in buckets.values() {
        for (k, &i) in bucket.iter().enumerate() {
            for &j in &bucket[k + 1..] {
                candidates.insert((i.min(j), i.max(j)));
            }
        }
    }

    let mut clusters = UnionFind::new(survivors.len());
    for &(i, j) in &candidates {
        let intersection = shingles[i].intersection(&shingles[j]).count();
        let union = shingles[i].len() + shingles[j].len() - intersection;
        let jaccard =
            if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
        if jaccard >= cfg.jaccard_threshold {
            clusters.union(i, j);
        }
    }

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for pos in 0..survivors.len() {
        members.entry(clusters.find(pos)).or_default().push(pos);
    }
    let mut near_dropped: BTreeSet<usize> = BTreeSet::new();
    for group in members.values() {
        let rep = *group
            .iter()
            .min_by_key(|&&pos| rep_key(&corpus[survivors[pos]], published_at))
            .expect("clusters are non-empty");
        for &pos in group {
            if pos != rep {
                dropped.insert(
                    corpus[survivors[pos]].id.clone(),
                    corpus[survivors[rep]].id.clone(),
                );
                near_dropped.insert(survivors[pos]);
            }
        }
    }

    // An exact-pass drop may point at a representative the near-dup pass
    // then dropped; chase one link so every target is actually kept.
    let final_target: BTreeMap<String, String> = dropped
        .iter()
        .map(|(id, rep)| {
            let target = dropped.get(rep).unwrap_or(rep);
            (id.clone(), target.clone())
        })
        .collect();

    let kept_indices: BTreeSet<usize> = survivors
        .iter()
        .copied()
        .filter(|i| !near_dropped.contains(i))
        .collect();
    let kept = corpus
        .iter()
        .enumerate()
        .filter(|(i, _)| kept_indices.contains(i))
        .map(|(_, doc)| doc.clone())
        .collect();
    Ok(DedupOutcome { kept, dropped: final_target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn doc(id: &str, text: &str) -> CleanDocument {
        CleanDocument {
            id: id.to_string(),
            text: text.to_string(),
            transforms: vec![],
            original_len: text.chars().count(),
            cleaned_len: text.chars().count(),
        }
    }

    fn dated(ids_days: &[(&str, u32)]) -> BTreeMap<String, DateTime<Utc>> {
        ids_days
            .iter()
            .map(|&(id, day)| {
                (id.to_string(), Utc.with_ymd_and_hms(2023, 1, day, 0, 0, 0).unwrap())
            })
            .collect()
    }

    #[test]
    fn identical_texts_share_a_signature() {
        let cfg = DedupConfig::default();
        let a = signature(&doc("a", "shares of the company rose sharply after earnings"), &cfg);
        let b = signature(&doc("b", "shares of the company rose sharply after earnings"), &cfg);
        assert_eq!(a, b);
        assert_eq!(a.values.len(), cfg.num_perm);
        assert_eq!(a.bands * a.rows, a.num_perm);
        assert_eq!(estimated_jaccard(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn estimate_tracks_exact_jaccard_at_one_half() {
        let cfg = DedupConfig { shingle_size: 1, ..DedupConfig::default() };
        let a = doc("a", "alpha beta gamma");
        let b = doc("b", "beta gamma delta");
        let exact = exact_jaccard(&a.text, &b.text, cfg.shingle_size);
        assert!((exact - 0.5).abs() < 1e-12, "exact = {exact}");
        let est = estimated_jaccard(&signature(&a, &cfg), &signature(&b, &cfg)).unwrap();
        assert!((est - exact).abs() <= 0.15, "estimate = {est}");
    }

    #[test]
    fn mismatched_signature_widths_error() {
        let a = signature(&doc("a", "x y z"), &DedupConfig::default());
        let b = signature(&doc("b", "x y z"), &DedupConfig { num_perm: 64, ..Default::default() });
        assert_eq!(estimated_jaccard(&a, &b).unwrap_err(), DedupError::PermMismatch(128, 64));
    }

    #[test]
    fn short_documents_fall_back_to_a_single_shingle() {
        assert_eq!(shingle_set("one two", 5).len(), 1);
        assert_eq!(shingle_set("", 5).len(), 1);
        assert_eq!(exact_jaccard("", "", 5), 1.0);
        assert_eq!(exact_jaccard("one two", "one two", 5), 1.0);
        assert_eq!(exact_jaccard("one two", "three four", 5), 0.0);
    }

    #[test]
    fn three_identical_docs_keep_the_earliest() {
        let text = "the central bank kept interest rates unchanged this quarter again";
        let corpus = vec![doc("c", text), doc("a", text), doc("b", text)];
        let dates = dated(&[("c", 5), ("a", 3), ("b", 9)]);
        let out = dedup_corpus(&corpus, &dates, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id, "a");
        assert_eq!(out.dropped.get("b").unwrap(), "a");
        assert_eq!(out.dropped.get("c").unwrap(), "a");
    }

    #[test]
    fn distinct_docs_all_survive() {
        let corpus = vec![
            doc("a", "shares of the company rose sharply after strong earnings"),
            doc("b", "oil prices fell as supply concerns eased across markets"),
            doc("c", "the central bank kept interest rates unchanged this quarter"),
        ];
        let out = dedup_corpus(&corpus, &BTreeMap::new(), &DedupConfig::default()).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert!(out.dropped.is_empty());
        let ids: Vec<&str> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    // A one-word swap in a text this long keeps shingle-set Jaccard around
    // 0.87, comfortably past the 0.8 default; short texts would not qualify.
    const LONG_BASE: &str =
        "the regional bank reported third quarter results that comfortably beat analyst \
         estimates as net interest income expanded and credit losses stayed low while \
         management raised its full year guidance citing resilient consumer spending \
         healthy deposit growth and disciplined cost control across all business lines \
         with executives noting that loan demand from small and medium sized enterprises \
         remained strong despite higher borrowing costs and lingering uncertainty about \
         the broader economic outlook for the coming quarters";

    #[test]
    fn near_duplicates_collapse_and_casing_is_ignored() {
        let base = LONG_BASE;
        let tweaked = base.replace("comfortably", "easily");
        let corpus = vec![
            doc("n1", base),
            doc("n2", &tweaked),
            doc("n3", &base.to_uppercase()),
            doc("other", "oil prices fell as supply concerns eased across markets today"),
        ];
        let dates = dated(&[("n1", 1), ("n2", 2), ("n3", 3), ("other", 1)]);
        let cfg = DedupConfig::default();
        assert!(exact_jaccard(base, &tweaked, cfg.shingle_size) >= cfg.jaccard_threshold);
        let out = dedup_corpus(&corpus, &dates, &cfg).unwrap();
        let ids: Vec<&str> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["n1", "other"]);
        assert_eq!(out.dropped.get("n2").unwrap(), "n1");
        assert_eq!(out.dropped.get("n3").unwrap(), "n1");
    }

    #[test]
    fn dedup_is_idempotent() {
        let base = LONG_BASE;
        let corpus = vec![
            doc("a", base),
            doc("b", &base.replace("healthy", "steady")),
            doc("c", "unrelated headline about commodity futures and weather patterns today"),
        ];
        let dates = dated(&[("a", 1), ("b", 2), ("c", 3)]);
        let cfg = DedupConfig::default();
        let once = dedup_corpus(&corpus, &dates, &cfg).unwrap();
        let twice = dedup_corpus(&once.kept, &dates, &cfg).unwrap();
        assert_eq!(once.kept, twice.kept);
        assert!(twice.dropped.is_empty());
    }

    #[test]
    fn adding_a_later_duplicate_never_changes_the_representative() {
        let base = LONG_BASE;
        let mut corpus = vec![doc("a", base), doc("b", &base.replace("resilient", "robust"))];
        let mut dates = dated(&[("a", 1), ("b", 2)]);
        let cfg = DedupConfig::default();
        let before = dedup_corpus(&corpus, &dates, &cfg).unwrap();
        assert_eq!(before.kept[0].id, "a");
        corpus.push(doc("z", &base.replace("resilient", "sturdy")));
        dates.extend(dated(&[("z", 9)]));
        let after = dedup_corpus(&corpus, &dates, &cfg).unwrap();
        assert_eq!(after.kept[0].id, "a");
        assert_eq!(after.dropped.get("z").unwrap(), "a");
    }

    #[test]
    fn undated_documents_lose_to_dated_ones() {
        let text = "the retailer cut its full year profit forecast citing weak demand";
        let corpus = vec![doc("a", text), doc("b", text)];
        let dates = dated(&[("b", 1)]);
        let out = dedup_corpus(&corpus, &dates, &DedupConfig::default()).unwrap();
        assert_eq!(out.kept[0].id, "b");
    }

    #[test]
    fn exact_drop_targets_point_at_final_survivors() {
        // "a" and "b" are byte-identical; "c" is a near-duplicate dated
        // earlier than both, so the exact-pass winner itself gets dropped.
        let base = LONG_BASE;
        let corpus =
            vec![doc("a", base), doc("b", base), doc("c", &base.replace("disciplined", "careful"))];
        let dates = dated(&[("a", 5), ("b", 6), ("c", 1)]);
        let out = dedup_corpus(&corpus, &dates, &DedupConfig::default()).unwrap();
        let ids: Vec<&str> = out.kept.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["c"]);
        assert_eq!(out.dropped.get("a").unwrap(), "c");
        assert_eq!(out.dropped.get("b").unwrap(), "c");
    }

    #[test]
    fn config_validation_rejects_bad_banding() {
        let cfg = DedupConfig { bands: 100, ..DedupConfig::default() };
        assert!(matches!(cfg.validate(), Err(DedupError::BadConfig(_))));
        let cfg = DedupConfig { jaccard_threshold: 0.0, ..DedupConfig::default() };
        assert!(matches!(cfg.validate(), Err(DedupError::BadConfig(_))));
        let cfg = DedupConfig { shingle_size: 0, ..DedupConfig::default() };
        assert!(matches!(cfg.validate(), Err(DedupError::BadConfig(_))));
    }
}
