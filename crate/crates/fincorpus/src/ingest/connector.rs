//! Source connectors and the transport layer beneath them.
//!
//! A connector makes single fetch attempts; retries, date-range walking and
//! page aggregation live in the free functions in the parent module. The
//! http connector is generic over a [`Transport`] so tests can serve canned
//! responses from disk and live runs can use HTTP, through the same
//! extraction path.
//!
//! Connectors never stamp wall-clock time into documents (extracted
//! documents reuse their publication time as the fetch time), so a crawl
//! store is a pure function of the plan and the source data.

use super::rules::{ExtractRules, SourceKind, SourceRule};
use super::{Backoff, IngestError};
use crate::model::{FetchConfig, RawDocument, SourceSpec};
use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use scraper::{ElementRef, Html, Selector};
use std::io::Read;
use std::path::{Path, PathBuf};

pub trait Transport: Send + Sync {
    /// Fetches `url` and returns the response body as text.
    fn get(&self, url: &str, cfg: &FetchConfig) -> Result<String, IngestError>;
}

fn transport_err(url: &str, message: impl ToString) -> IngestError {
    IngestError::Transport { url: url.to_string(), message: message.to_string() }
}

/// Live HTTP transport. Proxy settings are logged and ignored; a token is
/// forwarded as a bearer header, cookies verbatim.
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn get(&self, url: &str, cfg: &FetchConfig) -> Result<String, IngestError> {
        if let Some(pool) = cfg.use_proxy {
            log::debug!("transport has no proxy support, ignoring {pool:?} for {url}");
        }
        let mut request = ureq::get(url);
        if let Some(token) = &cfg.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        if let Some(cookies) = &cfg.cookies {
            request = request.header("Cookie", cookies);
        }
        let mut response = request.call().map_err(|e| transport_err(url, e))?;
        let mut body = String::new();
        response
            .body_mut()
            .as_reader()
            .read_to_string(&mut body)
            .map_err(|e| transport_err(url, e))?;
        Ok(body)
    }
}

/// Serves responses from files under a root directory. The file for a URL
/// is the URL with every character outside `[A-Za-z0-9._-]` replaced by
/// `_`, which keeps fixtures hand-authorable.
pub struct FileTransport {
    root: PathBuf,
}

impl FileTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileTransport { root: root.into() }
    }

    pub fn file_name_for(url: &str) -> String {
        url.chars()
            .map(|c| if c.is_ascii_alphanumeric() || ".-_".contains(c) { c } else { '_' })
            .collect()
    }
}

impl Transport for FileTransport {
    fn get(&self, url: &str, _cfg: &FetchConfig) -> Result<String, IngestError> {
        let path = self.root.join(Self::file_name_for(url));
        std::fs::read_to_string(&path)
            .map_err(|e| transport_err(url, format!("{}: {e}", path.display())))
    }
}

/// A source that can make single fetch attempts. Implementations must not
/// retry internally; the callers own the retry budget.
pub trait Connector: Send + Sync {
    fn spec(&self) -> &SourceSpec;

    fn backoff(&self) -> Backoff {
        Backoff::None
    }

    /// One attempt at one symbol-day of news.
    fn fetch_day(
        &self,
        cfg: &FetchConfig,
        symbol: Option<&str>,
        date: NaiveDate,
    ) -> Result<Vec<RawDocument>, IngestError>;

    /// One attempt at one 1-based page of newest-first results for a query.
    fn fetch_page(
        &self,
        cfg: &FetchConfig,
        query: &str,
        page: u32,
    ) -> Result<Vec<RawDocument>, IngestError>;
}

/// Replays documents from a JSONL fixture. Day fetches filter the fixture;
/// page fetches walk it newest first in `page_size` chunks.
pub struct ReplayConnector {
    spec: SourceSpec,
    page_size: usize,
    docs: Vec<RawDocument>,
    newest_first: Vec<RawDocument>,
}

impl ReplayConnector {
    pub fn new(
        spec: SourceSpec,
        fixture: impl AsRef<Path>,
        page_size: usize,
    ) -> Result<Self, IngestError> {
        let docs: Vec<RawDocument> = crate::jsonl::read_jsonl(fixture)?;
        let mut newest_first = docs.clone();
        newest_first.sort_by(|a, b| b.published_at.cmp(&a.published_at).then(a.id.cmp(&b.id)));
        Ok(ReplayConnector { spec, page_size: page_size.max(1), docs, newest_first })
    }
}

impl Connector for ReplayConnector {
    fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    fn fetch_day(
        &self,
        _cfg: &FetchConfig,
        symbol: Option<&str>,
        date: NaiveDate,
    ) -> Result<Vec<RawDocument>, IngestError> {
        let symbol = if self.spec.supports_symbol { symbol } else { None };
        Ok(self
            .docs
            .iter()
            .filter(|d| d.published_at.date_naive() == date)
            .filter(|d| symbol.is_none_or(|s| d.symbol.as_deref() == Some(s)))
            .cloned()
            .collect())
    }

    fn fetch_page(
        &self,
        _cfg: &FetchConfig,
        _query: &str,
        page: u32,
    ) -> Result<Vec<RawDocument>, IngestError> {
        let start = (page.saturating_sub(1) as usize).saturating_mul(self.page_size);
        Ok(self
            .newest_first
            .iter()
            .skip(start)
            .take(self.page_size)
            .cloned()
            .collect())
    }
}

/// Fetches a URL template and pulls fields out of the response with the
/// source's extraction rules.
pub struct HttpConnector<T: Transport> {
    spec: SourceSpec,
    url_template: String,
    extract: ExtractRules,
    transport: T,
    backoff: Backoff,
}

impl<T: Transport> HttpConnector<T> {
    pub fn new(
        spec: SourceSpec,
        url_template: impl Into<String>,
        extract: ExtractRules,
        transport: T,
    ) -> Self {
        HttpConnector {
            spec,
            url_template: url_template.into(),
            extract,
            transport,
            backoff: Backoff::Exponential,
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    fn render_url(
        &self,
        cfg: &FetchConfig,
        symbol: Option<&str>,
        date: Option<NaiveDate>,
        query: Option<&str>,
        page: u32,
    ) -> String {
        self.url_template
            .replace("{symbol}", symbol.unwrap_or(""))
            .replace("{date}", &date.map(|d| d.to_string()).unwrap_or_default())
            .replace("{query}", query.unwrap_or(""))
            .replace("{page}", &page.to_string())
            .replace("{token}", cfg.token.as_deref().unwrap_or(""))
    }

    fn extract_docs(
        &self,
        url: &str,
        html: &str,
        symbol: Option<&str>,
    ) -> Result<Vec<RawDocument>, IngestError> {
        let extract_err =
            |message: String| IngestError::Extract { url: url.to_string(), message };
        let page = Html::parse_document(html);
        let item_sel = parse_selector(&self.extract.item)
            .map_err(|m| extract_err(format!("item selector: {m}")))?;
        let mut docs = Vec::new();
        for item in page.select(&item_sel) {
            let title = extract_field(item, &self.extract.title)
                .map_err(&extract_err)?
                .ok_or_else(|| extract_err(format!("no title under {:?}", self.extract.title)))?;
            let body =
                extract_field(item, &self.extract.body).map_err(&extract_err)?.unwrap_or_default();
            let time_raw = extract_field(item, &self.extract.published_at)
                .map_err(&extract_err)?
                .ok_or_else(|| {
                    extract_err(format!("no timestamp under {:?}", self.extract.published_at))
                })?;
            let published_at = parse_time(&time_raw, self.extract.time_format.as_deref())
                .map_err(&extract_err)?;
            let item_url = match &self.extract.url {
                Some(rule) => extract_field(item, rule).map_err(&extract_err)?,
                None => None,
            };
            docs.push(RawDocument::new(
                &self.spec.name,
                symbol.map(str::to_string),
                title,
                body,
                published_at,
                item_url,
                published_at,
            )?);
        }
        Ok(docs)
    }
}

impl<T: Transport> Connector for HttpConnector<T> {
    fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    fn backoff(&self) -> Backoff {
        self.backoff
    }

    fn fetch_day(
        &self,
        cfg: &FetchConfig,
        symbol: Option<&str>,
        date: NaiveDate,
    ) -> Result<Vec<RawDocument>, IngestError> {
        let symbol = if self.spec.supports_symbol { symbol } else { None };
        let url = self.render_url(cfg, symbol, Some(date), None, 1);
        let html = self.transport.get(&url, cfg)?;
        self.extract_docs(&url, &html, symbol)
    }

    fn fetch_page(
        &self,
        cfg: &FetchConfig,
        query: &str,
        page: u32,
    ) -> Result<Vec<RawDocument>, IngestError> {
        let url = self.render_url(cfg, None, None, Some(query), page);
        let html = self.transport.get(&url, cfg)?;
        self.extract_docs(&url, &html, None)
    }
}

/// Builds the connector a rule describes. Relative replay fixture paths
/// resolve against `base_dir`, normally the rule file's directory. Http
/// rules get the live transport.
pub fn connector_from_rule(
    name: &str,
    rule: &SourceRule,
    base_dir: &Path,
) -> Result<Box<dyn Connector>, IngestError> {
    rule.validate(name)?;
    let spec = rule.to_spec(name)?;
    match rule.kind {
        SourceKind::Replay => {
            let fixture = rule.fixture.as_ref().expect("validated");
            let path =
                if fixture.is_absolute() { fixture.clone() } else { base_dir.join(fixture) };
            Ok(Box::new(ReplayConnector::new(spec, path, rule.page_size)?))
        }
        SourceKind::Http => Ok(Box::new(HttpConnector::new(
            spec,
            rule.url_template.clone().expect("validated"),
            rule.extract.clone().expect("validated"),
            UreqTransport,
        ))),
    }
}

fn parse_selector(css: &str) -> Result<Selector, String> {
    Selector::parse(css).map_err(|e| e.to_string())
}

/// Resolves a `css` or `css @attr` rule against an element. Text content is
/// whitespace-collapsed; a missing element yields None.
fn extract_field(scope: ElementRef<'_>, rule: &str) -> Result<Option<String>, String> {
    let (css, attr) = match rule.rsplit_once(" @") {
        Some((css, attr)) => (css, Some(attr)),
        None => (rule, None),
    };
    let selector = parse_selector(css)?;
    let Some(element) = scope.select(&selector).next() else {
        return Ok(None);
    };
    match attr {
        Some(name) => Ok(element.value().attr(name).map(str::to_string)),
        None => {
            let text: Vec<&str> = element.text().collect();
            let joined = text.join(" ");
            let collapsed: Vec<&str> = joined.split_whitespace().collect();
            Ok(Some(collapsed.join(" ")))
        }
    }
}

fn parse_time(raw: &str, format: Option<&str>) -> Result<DateTime<Utc>, String> {
    match format {
        None => DateTime::parse_from_rfc3339(raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| format!("bad rfc3339 time {raw:?}: {e}")),
        Some(fmt) => {
            if let Ok(t) = DateTime::parse_from_str(raw, fmt) {
                return Ok(t.with_timezone(&Utc));
            }
            NaiveDateTime::parse_from_str(raw, fmt)
                .map(|t| t.and_utc())
                .map_err(|e| format!("time {raw:?} does not match {fmt:?}: {e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Market, SourceInterface};

    fn http_spec(supports_symbol: bool) -> SourceSpec {
        SourceSpec::new(
            "testwire",
            Market::Us,
            [SourceInterface::DateRange, SourceInterface::Streaming],
            supports_symbol,
        )
        .unwrap()
    }

    fn extract_rules() -> ExtractRules {
        ExtractRules {
            item: "div.news-item".into(),
            title: "h2.headline".into(),
            body: "div.summary".into(),
            published_at: "time @datetime".into(),
            url: Some("a.link @href".into()),
            time_format: None,
        }
    }

    const LIST_PAGE: &str = r#"<!doctype html>
<html><body>
  <div class="news-item">
    <h2 class="headline">Acme beats  estimates</h2>
    <div class="summary">Quarterly revenue rose
      sharply on cloud demand.</div>
    <time datetime="2023-03-01T14:30:00Z">Mar 1</time>
    <a class="link" href="https://testwire.example/a1">read</a>
  </div>
  <div class="news-item">
    <h2 class="headline">Acme recalls widgets</h2>
    <div class="summary">Safety regulators opened a probe.</div>
    <time datetime="2023-03-01T09:00:00Z">Mar 1</time>
    <a class="link" href="https://testwire.example/a2">read</a>
  </div>
</body></html>"#;

    struct CannedTransport {
        body: String,
    }

    impl Transport for CannedTransport {
        fn get(&self, _url: &str, _cfg: &FetchConfig) -> Result<String, IngestError> {
            Ok(self.body.clone())
        }
    }

    #[test]
    fn http_connector_extracts_fields_from_list_page() {
        let connector = HttpConnector::new(
            http_spec(true),
            "https://testwire.example/day?symbol={symbol}&date={date}",
            extract_rules(),
            CannedTransport { body: LIST_PAGE.to_string() },
        );
        let date = NaiveDate::from_ymd_opt(2023, 3, 1).unwrap();
        let docs =
            connector.fetch_day(&FetchConfig::default(), Some("ACME"), date).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].title, "Acme beats estimates", "text is whitespace-collapsed");
        assert_eq!(docs[0].body, "Quarterly revenue rose sharply on cloud demand.");
        assert_eq!(docs[0].url.as_deref(), Some("https://testwire.example/a1"));
        assert_eq!(docs[0].symbol.as_deref(), Some("ACME"));
        assert_eq!(
            crate::model::rfc3339_secs::to_string(&docs[0].published_at),
            "2023-03-01T14:30:00Z"
        );
        assert_eq!(docs[0].fetched_at, docs[0].published_at);
        // ids are derived from source, url and time, so they are stable
        let again = connector.fetch_day(&FetchConfig::default(), Some("ACME"), date).unwrap();
        assert_eq!(docs, again);
    }

    #[test]
    fn custom_time_formats_parse_as_utc() {
        assert_eq!(
            parse_time("2023-03-01 14:30:00", Some("%Y-%m-%d %H:%M:%S")).unwrap(),
            DateTime::parse_from_rfc3339("2023-03-01T14:30:00Z").unwrap()
        );
        assert_eq!(
            parse_time("2023-03-01 14:30:00 +0800", Some("%Y-%m-%d %H:%M:%S %z")).unwrap(),
            DateTime::parse_from_rfc3339("2023-03-01T06:30:00Z").unwrap()
        );
        assert!(parse_time("yesterday", None).is_err());
        assert!(parse_time("2023-03-01", Some("%H:%M")).is_err());
    }

    #[test]
    fn missing_required_fields_fail_extraction() {
        let mut rules = extract_rules();
        rules.title = "h3.nope".into();
        let connector = HttpConnector::new(
            http_spec(false),
            "https://x.example/{date}",
            rules,
            CannedTransport { body: LIST_PAGE.to_string() },
        );
        let err = connector
            .fetch_day(&FetchConfig::default(), None, NaiveDate::from_ymd_opt(2023, 3, 1).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains("no title"), "{err}");
    }

    #[test]
    fn file_transport_maps_urls_to_readable_names() {
        assert_eq!(
            FileTransport::file_name_for("https://w.example/q?s=AAPL&d=2023-01-01"),
            "https___w.example_q_s_AAPL_d_2023-01-01"
        );
        let dir = tempfile::tempdir().unwrap();
        let url = "https://w.example/page?n=1";
        std::fs::write(dir.path().join(FileTransport::file_name_for(url)), "<html></html>")
            .unwrap();
        let transport = FileTransport::new(dir.path());
        assert_eq!(transport.get(url, &FetchConfig::default()).unwrap(), "<html></html>");
        assert!(transport.get("https://w.example/missing", &FetchConfig::default()).is_err());
    }

    #[test]
    fn url_template_substitutes_every_placeholder() {
        let connector = HttpConnector::new(
            http_spec(true),
            "https://x.example/{symbol}/{date}/{query}/{page}?t={token}",
            extract_rules(),
            CannedTransport { body: String::new() },
        );
        let cfg = FetchConfig { token: Some("s3cret".into()), ..FetchConfig::default() };
        let url = connector.render_url(
            &cfg,
            Some("AAPL"),
            NaiveDate::from_ymd_opt(2023, 1, 5),
            Some("earnings"),
            7,
        );
        assert_eq!(url, "https://x.example/AAPL/2023-01-05/earnings/7?t=s3cret");
    }
}
