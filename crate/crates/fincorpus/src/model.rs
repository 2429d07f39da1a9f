//! Core document, label and source types shared across the pipeline.
//!
//! Documents are identified by a content-derived digest so that re-running
//! ingestion never assigns new ids to old news. Timestamps are held at
//! second precision and serialize as RFC3339 with a `Z` suffix; both rules
//! are load-bearing because the id preimage includes the rendered
//! timestamp.

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("published_at {published_at} is after fetched_at {fetched_at}")]
    PublishedAfterFetched {
        published_at: DateTime<Utc>,
        fetched_at: DateTime<Utc>,
    },
    #[error("source {0:?} declares no interfaces")]
    EmptyInterfaces(String),
}

/// Serde adapter pinning timestamps to RFC3339 at second precision with a
/// `Z` suffix (`2023-01-01T12:00:00Z`). Deserialization accepts any valid
/// RFC3339 offset and truncates fractional seconds, so a round trip always
/// reproduces the in-memory value byte for byte.
pub mod rfc3339_secs {
    use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
    use serde::{self, Deserialize, Deserializer, Serializer};

    pub fn to_string(dt: &DateTime<Utc>) -> String {
        dt.to_rfc3339_opts(SecondsFormat::Secs, true)
    }

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&to_string(dt))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(de)?;
        let parsed = DateTime::parse_from_rfc3339(&raw).map_err(serde::de::Error::custom)?;
        Ok(parsed.with_timezone(&Utc).trunc_subsecs(0))
    }
}

/// Hex id derived from `source`, the url (or the title when no url exists)
/// and the publication time, joined by ASCII unit separators and hashed
/// with SHA-256 truncated to 128 bits.
pub fn doc_id(source: &str, url: Option<&str>, title: &str, published_at: DateTime<Utc>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source.as_bytes());
    hasher.update([0x1f]);
    hasher.update(url.unwrap_or(title).as_bytes());
    hasher.update([0x1f]);
    hasher.update(rfc3339_secs::to_string(&published_at.trunc_subsecs(0)).as_bytes());
    let digest = hasher.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// One fetched news item, as stored in the ingestion store and the raw
/// corpus JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub source: String,
    pub symbol: Option<String>,
    pub title: String,
    pub body: String,
    #[serde(with = "rfc3339_secs")]
    pub published_at: DateTime<Utc>,
    pub url: Option<String>,
    #[serde(with = "rfc3339_secs")]
    pub fetched_at: DateTime<Utc>,
}

impl RawDocument {
    /// Builds a document with a derived id. Timestamps are truncated to
    /// whole seconds; a publication time later than the fetch time is
    /// rejected.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: impl Into<String>,
        symbol: Option<String>,
        title: impl Into<String>,
        body: impl Into<String>,
        published_at: DateTime<Utc>,
        url: Option<String>,
        fetched_at: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        let source = source.into();
        let title = title.into();
        let published_at = published_at.trunc_subsecs(0);
        let fetched_at = fetched_at.trunc_subsecs(0);
        if published_at > fetched_at {
            return Err(ModelError::PublishedAfterFetched {
                published_at,
                fetched_at,
            });
        }
        let id = doc_id(&source, url.as_deref(), &title, published_at);
        Ok(RawDocument {
            id,
            source,
            symbol,
            title,
            body: body.into(),
            published_at,
            url,
            fetched_at,
        })
    }
}

/// Output of the cleaning stage. `transforms` records the applied step
/// names in pipeline order; lengths are in characters, with `original_len`
/// covering title and body before the single-space join.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub id: String,
    pub text: String,
    pub transforms: Vec<String>,
    pub original_len: usize,
    pub cleaned_len: usize,
}

/// Three-way sentiment, the label space produced by market-feedback
/// labeling. Variant order is fixed and doubles as the confusion-matrix
/// axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }

    /// Position in [`Sentiment::ALL`].
    pub fn index(self) -> usize {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Neutral => 1,
            Sentiment::Positive => 2,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Seven-way sentiment used by the fine-grained prompt variant and the
/// NWGI-style external data. The canonical strings are the exact phrases
/// offered in the prompt's answer set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FineSentiment {
    #[serde(rename = "strong negative")]
    StrongNegative,
    #[serde(rename = "moderately negative")]
    ModeratelyNegative,
    #[serde(rename = "mildly negative")]
    MildlyNegative,
    #[serde(rename = "neutral")]
    Neutral,
    #[serde(rename = "mildly positive")]
    MildlyPositive,
    #[serde(rename = "moderately positive")]
    ModeratelyPositive,
    #[serde(rename = "strong positive")]
    StrongPositive,
}

impl FineSentiment {
    pub const ALL: [FineSentiment; 7] = [
        FineSentiment::StrongNegative,
        FineSentiment::ModeratelyNegative,
        FineSentiment::MildlyNegative,
        FineSentiment::Neutral,
        FineSentiment::MildlyPositive,
        FineSentiment::ModeratelyPositive,
        FineSentiment::StrongPositive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FineSentiment::StrongNegative => "strong negative",
            FineSentiment::ModeratelyNegative => "moderately negative",
            FineSentiment::MildlyNegative => "mildly negative",
            FineSentiment::Neutral => "neutral",
            FineSentiment::MildlyPositive => "mildly positive",
            FineSentiment::ModeratelyPositive => "moderately positive",
            FineSentiment::StrongPositive => "strong positive",
        }
    }

    pub fn parse(s: &str) -> Option<FineSentiment> {
        FineSentiment::ALL.into_iter().find(|v| v.as_str() == s)
    }

    /// Collapse onto the three-way space.
    pub fn coarse(self) -> Sentiment {
        match self {
            FineSentiment::StrongNegative
            | FineSentiment::ModeratelyNegative
            | FineSentiment::MildlyNegative => Sentiment::Negative,
            FineSentiment::Neutral => Sentiment::Neutral,
            FineSentiment::MildlyPositive
            | FineSentiment::ModeratelyPositive
            | FineSentiment::StrongPositive => Sentiment::Positive,
        }
    }
}

impl fmt::Display for FineSentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Market {
    Us,
    Cn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceInterface {
    DateRange,
    Streaming,
}

/// Declared capabilities of a news source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub market: Market,
    pub interfaces: BTreeSet<SourceInterface>,
    pub supports_symbol: bool,
}

impl SourceSpec {
    pub fn new(
        name: impl Into<String>,
        market: Market,
        interfaces: impl IntoIterator<Item = SourceInterface>,
        supports_symbol: bool,
    ) -> Result<Self, ModelError> {
        let name = name.into();
        let interfaces: BTreeSet<_> = interfaces.into_iter().collect();
        if interfaces.is_empty() {
            return Err(ModelError::EmptyInterfaces(name));
        }
        Ok(SourceSpec {
            name,
            market,
            interfaces,
            supports_symbol,
        })
    }

    pub fn supports(&self, interface: SourceInterface) -> bool {
        self.interfaces.contains(&interface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyPool {
    UsFree,
    ChinaFree,
}

/// Fetch-time knobs accepted by every connector. Built-in transports log
/// and ignore the proxy fields; they exist so a custom transport can honor
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub use_proxy: Option<ProxyPool>,
    /// Total attempts per fetch task, not extra retries after the first.
    pub max_retry: u32,
    pub proxy_pages: u32,
    pub token: Option<String>,
    pub cookies: Option<String>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            use_proxy: None,
            max_retry: 1,
            proxy_pages: 5,
            token: None,
            cookies: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    #[test]
    fn doc_id_is_stable_and_128_bit() {
        let t = ts("2023-01-01T12:00:00Z");
        let id = doc_id("newswire", Some("https://n.example/a"), "Title", t);
        assert_eq!(id.len(), 32);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
        let again = doc_id("newswire", Some("https://n.example/a"), "Title", t);
        assert_eq!(id, again);
    }

    #[test]
    fn doc_id_prefers_url_and_falls_back_to_title() {
        let t = ts("2023-01-01T12:00:00Z");
        let with_url = doc_id("s", Some("u"), "title-a", t);
        let same_url = doc_id("s", Some("u"), "title-b", t);
        assert_eq!(with_url, same_url);
        let by_title_a = doc_id("s", None, "title-a", t);
        let by_title_b = doc_id("s", None, "title-b", t);
        assert_ne!(by_title_a, by_title_b);
    }

    #[test]
    fn doc_id_distinguishes_each_component() {
        let t = ts("2023-01-01T12:00:00Z");
        let base = doc_id("s", Some("u"), "t", t);
        assert_ne!(base, doc_id("s2", Some("u"), "t", t));
        assert_ne!(base, doc_id("s", Some("u2"), "t", t));
        assert_ne!(base, doc_id("s", Some("u"), "t", ts("2023-01-01T12:00:01Z")));
    }

    #[test]
    fn raw_document_truncates_subseconds_and_validates_order() {
        let published = ts("2023-05-01T10:20:30.987Z");
        let fetched = ts("2023-05-01T10:20:31.123Z");
        let doc = RawDocument::new("s", None, "t", "b", published, None, fetched).unwrap();
        assert_eq!(rfc3339_secs::to_string(&doc.published_at), "2023-05-01T10:20:30Z");
        assert_eq!(rfc3339_secs::to_string(&doc.fetched_at), "2023-05-01T10:20:31Z");

        let err = RawDocument::new("s", None, "t", "b", fetched, None, published);
        assert!(matches!(err, Err(ModelError::PublishedAfterFetched { .. })));
    }

    #[test]
    fn raw_document_jsonl_round_trip_is_lossless() {
        let doc = RawDocument::new(
            "replay",
            Some("AAPL".into()),
            "Apple up",
            "Shares rose.",
            ts("2021-03-04T05:06:07Z"),
            Some("https://n.example/apple".into()),
            ts("2021-03-04T06:00:00Z"),
        )
        .unwrap();
        let line = serde_json::to_string(&doc).unwrap();
        // Key order is part of the file contract.
        let expected_order = [
            "\"id\"", "\"source\"", "\"symbol\"", "\"title\"", "\"body\"",
            "\"published_at\"", "\"url\"", "\"fetched_at\"",
        ];
        let positions: Vec<usize> = expected_order
            .iter()
            .map(|k| line.find(k).unwrap_or_else(|| panic!("missing key {k} in {line}")))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "key order wrong: {line}");
        let back: RawDocument = serde_json::from_str(&line).unwrap();
        assert_eq!(doc, back);
    }

    #[test]
    fn timestamps_serialize_with_z_suffix() {
        let doc = RawDocument::new(
            "s",
            None,
            "t",
            "b",
            Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            None,
            Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap(),
        )
        .unwrap();
        let line = serde_json::to_string(&doc).unwrap();
        assert!(line.contains("\"2023-01-01T00:00:00Z\""), "{line}");
    }

    #[test]
    fn sentiment_strings_are_canonical() {
        assert_eq!(serde_json::to_string(&Sentiment::Positive).unwrap(), "\"positive\"");
        assert_eq!(serde_json::to_string(&Sentiment::Negative).unwrap(), "\"negative\"");
        assert_eq!(serde_json::to_string(&Sentiment::Neutral).unwrap(), "\"neutral\"");
        assert_eq!(
            serde_json::to_string(&FineSentiment::ModeratelyPositive).unwrap(),
            "\"moderately positive\""
        );
    }

    #[test]
    fn fine_sentiment_collapses_onto_three_classes() {
        use FineSentiment::*;
        assert_eq!(StrongNegative.coarse(), Sentiment::Negative);
        assert_eq!(ModeratelyNegative.coarse(), Sentiment::Negative);
        assert_eq!(MildlyNegative.coarse(), Sentiment::Negative);
        assert_eq!(Neutral.coarse(), Sentiment::Neutral);
        assert_eq!(MildlyPositive.coarse(), Sentiment::Positive);
        assert_eq!(ModeratelyPositive.coarse(), Sentiment::Positive);
        assert_eq!(StrongPositive.coarse(), Sentiment::Positive);
    }

    #[test]
    fn source_spec_requires_an_interface() {
        let err = SourceSpec::new("s", Market::Us, [], true);
        assert!(matches!(err, Err(ModelError::EmptyInterfaces(_))));
        let ok = SourceSpec::new("s", Market::Us, [SourceInterface::DateRange], true).unwrap();
        assert!(ok.supports(SourceInterface::DateRange));
        assert!(!ok.supports(SourceInterface::Streaming));
    }
}
