//! Declarative per-source connector rules, loaded from a TOML file.
//!
//! A rule names the source's market and interfaces, and either points a
//! replay connector at a JSONL fixture or gives an http connector a URL
//! template plus extraction selectors. Keeping this in data means adding a
//! source is a config edit, not a code change.

use super::IngestError;
use crate::model::{Market, SourceInterface, SourceSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Replays canned documents from a JSONL fixture file.
    Replay,
    /// Fetches a URL template and extracts fields with CSS selectors.
    Http,
}

/// Field extraction for http sources. Every selector addresses one news
/// item; `item` scopes the rest. A selector ending in ` @attr` reads that
/// attribute instead of the element text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractRules {
    pub item: String,
    pub title: String,
    pub body: String,
    pub published_at: String,
    #[serde(default)]
    pub url: Option<String>,
    /// chrono format string for `published_at`; RFC3339 when absent.
    #[serde(default)]
    pub time_format: Option<String>,
}

fn default_page_size() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRule {
    pub market: Market,
    pub interfaces: Vec<SourceInterface>,
    #[serde(default)]
    pub supports_symbol: bool,
    pub kind: SourceKind,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
    /// Replay only: fixture path, resolved against the rule file's directory
    /// when relative.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    /// Http only: URL with `{symbol}`, `{date}`, `{query}`, `{page}` and
    /// `{token}` placeholders.
    #[serde(default)]
    pub url_template: Option<String>,
    #[serde(default)]
    pub extract: Option<ExtractRules>,
}

impl SourceRule {
    pub fn validate(&self, name: &str) -> Result<(), IngestError> {
        let bad = |message: String| IngestError::BadRules { path: name.to_string(), message };
        if self.interfaces.is_empty() {
            return Err(bad("no interfaces declared".into()));
        }
        if self.page_size == 0 {
            return Err(bad("page_size must be >= 1".into()));
        }
        match self.kind {
            SourceKind::Replay => {
                if self.fixture.is_none() {
                    return Err(bad("replay sources need a fixture path".into()));
                }
            }
            SourceKind::Http => {
                if self.url_template.is_none() {
                    return Err(bad("http sources need a url_template".into()));
                }
                if self.extract.is_none() {
                    return Err(bad("http sources need an [extract] table".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_spec(&self, name: &str) -> Result<SourceSpec, IngestError> {
        SourceSpec::new(name, self.market, self.interfaces.iter().copied(), self.supports_symbol)
            .map_err(|e| IngestError::BadRules { path: name.to_string(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulesFile {
    pub sources: BTreeMap<String, SourceRule>,
}

impl RulesFile {
    pub fn parse(text: &str, origin: &str) -> Result<RulesFile, IngestError> {
        let rules: RulesFile = toml::from_str(text).map_err(|e| IngestError::BadRules {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        for (name, rule) in &rules.sources {
            rule.validate(name)?;
        }
        Ok(rules)
    }
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<RulesFile, IngestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Storage {
        path: path.to_path_buf(),
        source,
    })?;
    RulesFile::parse(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[sources.replay-us]
market = "us"
interfaces = ["date_range", "streaming"]
supports_symbol = true
kind = "replay"
page_size = 3
fixture = "fixtures/replay_news.jsonl"

[sources.wire]
market = "cn"
interfaces = ["streaming"]
kind = "http"
url_template = "https://wire.example/search?q={query}&page={page}"

[sources.wire.extract]
item = "div.news-item"
title = "h2.headline"
body = "div.summary"
published_at = "time @datetime"
url = "a.link @href"
"#;

    #[test]
    fn parses_both_source_kinds() {
        let rules = RulesFile::parse(SAMPLE, "inline").unwrap();
        assert_eq!(rules.sources.len(), 2);

        let replay = &rules.sources["replay-us"];
        assert_eq!(replay.kind, SourceKind::Replay);
        assert_eq!(replay.page_size, 3);
        assert!(replay.supports_symbol);
        let spec = replay.to_spec("replay-us").unwrap();
        assert!(spec.supports(SourceInterface::DateRange));
        assert!(spec.supports(SourceInterface::Streaming));
        assert_eq!(spec.market, Market::Us);

        let wire = &rules.sources["wire"];
        assert_eq!(wire.kind, SourceKind::Http);
        assert_eq!(wire.page_size, 10, "page_size defaults when omitted");
        assert!(!wire.supports_symbol);
        let extract = wire.extract.as_ref().unwrap();
        assert_eq!(extract.published_at, "time @datetime");
        assert!(extract.time_format.is_none());
    }

    #[test]
    fn rejects_incomplete_rules() {
        let no_fixture = r#"
[sources.bad]
market = "us"
interfaces = ["date_range"]
kind = "replay"
"#;
        let err = RulesFile::parse(no_fixture, "inline").unwrap_err();
        assert!(err.to_string().contains("fixture"), "{err}");

        let no_template = r#"
[sources.bad]
market = "us"
interfaces = ["streaming"]
kind = "http"
"#;
        let err = RulesFile::parse(no_template, "inline").unwrap_err();
        assert!(err.to_string().contains("url_template"), "{err}");

        let no_interfaces = r#"
[sources.bad]
market = "us"
interfaces = []
kind = "replay"
fixture = "x.jsonl"
"#;
        assert!(RulesFile::parse(no_interfaces, "inline").is_err());

        let unknown_kind = r#"
[sources.bad]
market = "us"
interfaces = ["date_range"]
kind = "carrier-pigeon"
fixture = "x.jsonl"
"#;
        assert!(RulesFile::parse(unknown_kind, "inline").is_err());
    }
}
