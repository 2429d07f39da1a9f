//! News ingestion: pluggable source connectors, bounded retry, a worker
//! pool and an incremental on-disk store.
//!
//! A crawl plan is a list of independent (source, symbol, date-or-page)
//! tasks. Each task owns exactly one store file; tasks whose file already
//! exists are skipped, so an interrupted crawl resumes by rerunning the
//! same plan. Store contents are a pure function of the plan and the source
//! data, independent of worker count and scheduling.

pub mod connector;
pub mod rules;
pub mod store;

pub use connector::{
    connector_from_rule, Connector, FileTransport, HttpConnector, ReplayConnector, Transport,
    UreqTransport,
};
pub use rules::{load_rules, ExtractRules, RulesFile, SourceKind, SourceRule};
pub use store::{read_store, write_task_file, StoreLayout, STORE_CSV_HEADER};

use crate::model::{FetchConfig, RawDocument, SourceInterface};
use chrono::NaiveDate;
use rayon::prelude::*;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source {name} does not support the {interface:?} interface")]
    UnsupportedInterface { name: String, interface: SourceInterface },
    #[error("start date {start} is after end date {end}")]
    DateOrder { start: NaiveDate, end: NaiveDate },
    #[error("pages must be >= 1")]
    BadPages,
    #[error("{task}: all {attempts} attempts failed, last error: {last_error}")]
    FetchExhausted { task: String, attempts: u32, last_error: String },
    #[error("transport error for {url}: {message}")]
    Transport { url: String, message: String },
    #[error("extraction failed for {url}: {message}")]
    Extract { url: String, message: String },
    #[error("bad source rules ({path}): {message}")]
    BadRules { path: String, message: String },
    #[error("document rejected: {0}")]
    BadDocument(#[from] crate::model::ModelError),
    #[error(transparent)]
    Fixture(#[from] crate::jsonl::JsonlError),
    #[error("storage failure at {path}: {source}")]
    Storage { path: PathBuf, source: std::io::Error },
    #[error("bad store contents at {path}, line {line}: {message}")]
    BadStore { path: PathBuf, line: usize, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// What one fetch task addresses: a symbol-day or a result page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskKey {
    Date(NaiveDate),
    Page(u32),
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKey::Date(d) => write!(f, "{d}"),
            TaskKey::Page(p) => write!(f, "page-{p:04}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FetchTask {
    pub source: String,
    pub symbol: String,
    pub key: TaskKey,
}

impl fmt::Display for FetchTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.source, self.symbol, self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backoff {
    /// Retry immediately; what fixtures and tests use.
    None,
    /// 500 ms doubling per retry, jittered +/-20% by a deterministic
    /// per-task stream.
    Exponential,
}

/// Delay before retry attempt `attempt` (the first attempt is 1 and never
/// waits).
fn retry_delay(policy: Backoff, attempt: u32, seed: u64) -> Duration {
    if attempt <= 1 {
        return Duration::ZERO;
    }
    match policy {
        Backoff::None => Duration::ZERO,
        Backoff::Exponential => {
            let doublings = (attempt - 2).min(10);
            let base_ms = 500u64 << doublings;
            let mut rng = crate::rng::PinnedRng::new(seed ^ u64::from(attempt));
            // per-mille factor in [800, 1200]
            let factor = 800 + rng.next_below(401);
            Duration::from_millis(base_ms * factor / 1000)
        }
    }
}

fn task_seed(task: &str) -> u64 {
    // FNV-1a over the task name, for jitter decorrelation only
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in task.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Runs `attempt_fn` up to `cfg.max_retry` times total and reports the last
/// error if every attempt fails.
fn with_retry<T>(
    cfg: &FetchConfig,
    policy: Backoff,
    task: &str,
    mut attempt_fn: impl FnMut() -> Result<T, IngestError>,
) -> Result<T, IngestError> {
    let attempts = cfg.max_retry.max(1);
    let seed = task_seed(task);
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        let delay = retry_delay(policy, attempt, seed);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        match attempt_fn() {
            Ok(value) => return Ok(value),
            Err(e) => {
                log::debug!("{task}: attempt {attempt}/{attempts} failed: {e}");
                last_error = e.to_string();
            }
        }
    }
    Err(IngestError::FetchExhausted { task: task.to_string(), attempts, last_error })
}

/// All documents published between `start` and `end` inclusive. When the
/// source understands symbols and one is given, only that symbol's
/// documents come back.
pub fn fetch_date_range(
    connector: &dyn Connector,
    cfg: &FetchConfig,
    start: NaiveDate,
    end: NaiveDate,
    symbol: Option<&str>,
) -> Result<Vec<RawDocument>, IngestError> {
    let spec = connector.spec();
    if !spec.supports(SourceInterface::DateRange) {
        return Err(IngestError::UnsupportedInterface {
            name: spec.name.clone(),
            interface: SourceInterface::DateRange,
        });
    }
    if start > end {
        return Err(IngestError::DateOrder { start, end });
    }
    let symbol = if spec.supports_symbol { symbol } else { None };
    let mut docs = Vec::new();
    let mut date = start;
    loop {
        let task = format!("{}/{}/{date}", spec.name, symbol.unwrap_or("*"));
        docs.extend(with_retry(cfg, connector.backoff(), &task, || {
            connector.fetch_day(cfg, symbol, date)
        })?);
        if date == end {
            break;
        }
        date = date.succ_opt().expect("calendar overflow");
    }
    docs.retain(|d| {
        let day = d.published_at.date_naive();
        day >= start && day <= end
    });
    if let Some(symbol) = symbol {
        docs.retain(|d| d.symbol.as_deref() == Some(symbol));
    }
    Ok(docs)
}

/// The first `pages` pages of newest-first results for a query, sorted by
/// publication time descending with duplicate ids removed.
pub fn fetch_streaming(
    connector: &dyn Connector,
    cfg: &FetchConfig,
    query: &str,
    pages: u32,
) -> Result<Vec<RawDocument>, IngestError> {
    let spec = connector.spec();
    if !spec.supports(SourceInterface::Streaming) {
        return Err(IngestError::UnsupportedInterface {
            name: spec.name.clone(),
            interface: SourceInterface::Streaming,
        });
    }
    if pages < 1 {
        return Err(IngestError::BadPages);
    }
    let mut docs = Vec::new();
    for page in 1..=pages {
        let task = format!("{}/{query}/page-{page:04}", spec.name);
        docs.extend(with_retry(cfg, connector.backoff(), &task, || {
            connector.fetch_page(cfg, query, page)
        })?);
    }
    // equal ids imply equal timestamps (ids embed them), so sorting makes
    // duplicates adjacent
    docs.sort_by(|a, b| b.published_at.cmp(&a.published_at).then(a.id.cmp(&b.id)));
    docs.dedup_by(|a, b| a.id == b.id);
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailedTask {
    pub task: FetchTask,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CrawlReport {
    pub done: usize,
    pub skipped: usize,
    pub failed: Vec<FailedTask>,
}

/// Executes a crawl plan on a bounded worker pool. Per task: skip if its
/// store file exists, otherwise fetch with the retry budget and write the
/// file atomically. Fetch failures are collected per task; storage failures
/// abort the run (already-written files stay).
pub fn run_crawl(
    plan: &[FetchTask],
    connector: &dyn Connector,
    cfg: &FetchConfig,
    layout: &StoreLayout,
    workers: usize,
) -> Result<CrawlReport, IngestError> {
    enum Outcome {
        Done,
        Skipped,
        Failed(String),
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| IngestError::Pool(e.to_string()))?;

    let outcomes: Vec<Result<Outcome, IngestError>> = pool.install(|| {
        plan.par_iter()
            .map(|task| {
                let path = layout.task_path(task);
                if path.exists() {
                    return Ok(Outcome::Skipped);
                }
                let name = task.to_string();
                let fetched = match task.key {
                    TaskKey::Date(date) => with_retry(cfg, connector.backoff(), &name, || {
                        connector.fetch_day(cfg, Some(&task.symbol), date)
                    }),
                    TaskKey::Page(page) => with_retry(cfg, connector.backoff(), &name, || {
                        connector.fetch_page(cfg, &task.symbol, page)
                    }),
                };
                match fetched {
                    Ok(docs) => {
                        store::write_task_file(&path, &docs)?;
                        Ok(Outcome::Done)
                    }
                    Err(e) => Ok(Outcome::Failed(e.to_string())),
                }
            })
            .collect()
    });

    let mut report = CrawlReport::default();
    for (task, outcome) in plan.iter().zip(outcomes) {
        match outcome? {
            Outcome::Done => report.done += 1,
            Outcome::Skipped => report.skipped += 1,
            Outcome::Failed(error) => {
                report.failed.push(FailedTask { task: task.clone(), error })
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Market, SourceSpec};
    use chrono::{DateTime, Utc};
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn fixture_doc(symbol: &str, title: &str, published: &str) -> RawDocument {
        RawDocument::new(
            "replay",
            Some(symbol.to_string()),
            title,
            format!("body of {title}"),
            ts(published),
            Some(format!("https://replay.example/{}", title.replace(' ', "-"))),
            ts(published),
        )
        .unwrap()
    }

    fn replay_fixture() -> Vec<RawDocument> {
        vec![
            fixture_doc("AAPL", "aapl morning", "2023-01-01T09:00:00Z"),
            fixture_doc("AAPL", "aapl evening", "2023-01-01T18:00:00Z"),
            fixture_doc("MSFT", "msft note", "2023-01-01T12:00:00Z"),
            fixture_doc("AAPL", "aapl next day", "2023-01-02T08:00:00Z"),
        ]
    }

    fn write_fixture(docs: &[RawDocument]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay_news.jsonl");
        crate::jsonl::write_jsonl(&path, docs).unwrap();
        (dir, path)
    }

    fn replay_spec(interfaces: &[SourceInterface]) -> SourceSpec {
        SourceSpec::new("replay", Market::Us, interfaces.iter().copied(), true).unwrap()
    }

    fn both() -> Vec<SourceInterface> {
        vec![SourceInterface::DateRange, SourceInterface::Streaming]
    }

    #[test]
    fn date_range_fetch_matches_direct_fixture_read() {
        let fixture = replay_fixture();
        let (_dir, path) = write_fixture(&fixture);
        let connector = ReplayConnector::new(replay_spec(&both()), &path, 3).unwrap();
        let got = fetch_date_range(
            &connector,
            &FetchConfig::default(),
            date("2023-01-01"),
            date("2023-01-01"),
            Some("AAPL"),
        )
        .unwrap();
        // oracle: read the fixture file directly and filter
        let raw: Vec<RawDocument> = crate::jsonl::read_jsonl(&path).unwrap();
        let want: Vec<RawDocument> = raw
            .into_iter()
            .filter(|d| {
                d.symbol.as_deref() == Some("AAPL")
                    && d.published_at.date_naive() == date("2023-01-01")
            })
            .collect();
        assert_eq!(got, want);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn date_range_rejects_reversed_dates_and_missing_interface() {
        let (_dir, path) = write_fixture(&replay_fixture());
        let connector = ReplayConnector::new(replay_spec(&both()), &path, 3).unwrap();
        assert!(matches!(
            fetch_date_range(
                &connector,
                &FetchConfig::default(),
                date("2023-01-02"),
                date("2023-01-01"),
                None,
            ),
            Err(IngestError::DateOrder { .. })
        ));

        let streaming_only =
            ReplayConnector::new(replay_spec(&[SourceInterface::Streaming]), &path, 3).unwrap();
        assert!(matches!(
            fetch_date_range(
                &streaming_only,
                &FetchConfig::default(),
                date("2023-01-01"),
                date("2023-01-01"),
                None,
            ),
            Err(IngestError::UnsupportedInterface { .. })
        ));
    }

    #[test]
    fn empty_day_yields_empty_list() {
        let (_dir, path) = write_fixture(&replay_fixture());
        let connector = ReplayConnector::new(replay_spec(&both()), &path, 3).unwrap();
        let got = fetch_date_range(
            &connector,
            &FetchConfig::default(),
            date("2022-06-01"),
            date("2022-06-01"),
            None,
        )
        .unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn streaming_pages_come_back_newest_first() {
        let docs: Vec<RawDocument> = (0..10)
            .map(|i| {
                fixture_doc("AAPL", &format!("item {i}"), &format!("2023-01-01T{i:02}:00:00Z"))
            })
            .collect();
        let (_dir, path) = write_fixture(&docs);
        let connector = ReplayConnector::new(replay_spec(&both()), &path, 3).unwrap();
        let got = fetch_streaming(&connector, &FetchConfig::default(), "apple", 3).unwrap();
        // oracle: sort the fixture newest first and take 3 pages of 3
        let mut want = docs.clone();
        want.sort_by_key(|d| std::cmp::Reverse(d.published_at));
        want.truncate(9);
        assert_eq!(got, want);
        assert!(got.windows(2).all(|w| w[0].published_at >= w[1].published_at));

        let (_empty_dir, empty_path) = write_fixture(&[]);
        let empty = ReplayConnector::new(replay_spec(&both()), &empty_path, 3).unwrap();
        assert!(fetch_streaming(&empty, &FetchConfig::default(), "q", 1).unwrap().is_empty());
        assert!(matches!(
            fetch_streaming(&empty, &FetchConfig::default(), "q", 0),
            Err(IngestError::BadPages)
        ));

        let range_only =
            ReplayConnector::new(replay_spec(&[SourceInterface::DateRange]), &path, 3).unwrap();
        assert!(matches!(
            fetch_streaming(&range_only, &FetchConfig::default(), "q", 3),
            Err(IngestError::UnsupportedInterface { .. })
        ));
    }

    /// Fails the first `fail_first` attempts of every call, then succeeds;
    /// counts attempts.
    struct FlakyConnector {
        spec: SourceSpec,
        fail_first: u32,
        attempts: AtomicU32,
        doc: RawDocument,
    }

    impl FlakyConnector {
        fn new(fail_first: u32) -> Self {
            FlakyConnector {
                spec: replay_spec(&both()),
                fail_first,
                attempts: AtomicU32::new(0),
                doc: fixture_doc("AAPL", "flaky doc", "2023-01-01T09:00:00Z"),
            }
        }

        fn attempt(&self) -> Result<Vec<RawDocument>, IngestError> {
            let n = self.attempts.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.fail_first {
                Err(IngestError::Transport {
                    url: "flaky://".into(),
                    message: format!("injected failure {n}"),
                })
            } else {
                Ok(vec![self.doc.clone()])
            }
        }
    }

    impl Connector for FlakyConnector {
        fn spec(&self) -> &SourceSpec {
            &self.spec
        }

        fn fetch_day(
            &self,
            _cfg: &FetchConfig,
            _symbol: Option<&str>,
            _date: NaiveDate,
        ) -> Result<Vec<RawDocument>, IngestError> {
            self.attempt()
        }

        fn fetch_page(
            &self,
            _cfg: &FetchConfig,
            _query: &str,
            _page: u32,
        ) -> Result<Vec<RawDocument>, IngestError> {
            self.attempt()
        }
    }

    #[test]
    fn retry_budget_is_exactly_max_retry_attempts() {
        let connector = FlakyConnector::new(2);
        let cfg = FetchConfig { max_retry: 3, ..FetchConfig::default() };
        let got = fetch_date_range(
            &connector,
            &cfg,
            date("2023-01-01"),
            date("2023-01-01"),
            Some("AAPL"),
        )
        .unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(connector.attempts.load(Ordering::SeqCst), 3, "two failures, one success");

        let connector = FlakyConnector::new(u32::MAX);
        let cfg = FetchConfig { max_retry: 2, ..FetchConfig::default() };
        let err = fetch_date_range(
            &connector,
            &cfg,
            date("2023-01-01"),
            date("2023-01-01"),
            Some("AAPL"),
        )
        .unwrap_err();
        match err {
            IngestError::FetchExhausted { attempts, last_error, .. } => {
                assert_eq!(attempts, 2);
                assert!(last_error.contains("injected failure 2"));
            }
            other => panic!("unexpected error {other}"),
        }
        assert_eq!(connector.attempts.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn retry_delays_are_zero_or_bounded_exponential() {
        for attempt in 1..=5 {
            assert_eq!(retry_delay(Backoff::None, attempt, 7), Duration::ZERO);
        }
        assert_eq!(retry_delay(Backoff::Exponential, 1, 7), Duration::ZERO);
        for (attempt, base) in [(2u32, 500u64), (3, 1000), (4, 2000)] {
            let d = retry_delay(Backoff::Exponential, attempt, 7).as_millis() as u64;
            assert!(d >= base * 8 / 10 && d <= base * 12 / 10, "attempt {attempt}: {d}ms");
        }
    }

    fn plan_for(symbols: &[&str], days: &[&str]) -> Vec<FetchTask> {
        let mut plan = Vec::new();
        for symbol in symbols {
            for day in days {
                plan.push(FetchTask {
                    source: "replay".into(),
                    symbol: symbol.to_string(),
                    key: TaskKey::Date(date(day)),
                });
            }
        }
        plan
    }

    fn store_snapshot(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
        let mut snapshot = BTreeMap::new();
        for symbol_dir in std::fs::read_dir(root).unwrap() {
            let symbol_dir = symbol_dir.unwrap().path();
            for file in std::fs::read_dir(&symbol_dir).unwrap() {
                let file = file.unwrap().path();
                snapshot.insert(
                    file.strip_prefix(root).unwrap().display().to_string(),
                    std::fs::read(&file).unwrap(),
                );
            }
        }
        snapshot
    }

    #[test]
    fn crawl_skips_existing_files_and_resumes_cleanly() {
        let (_fdir, fixture) = write_fixture(&replay_fixture());
        let connector = ReplayConnector::new(replay_spec(&both()), &fixture, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let layout = StoreLayout::new(dir.path());
        let plan = plan_for(&["AAPL", "MSFT"], &["2023-01-01", "2023-01-02"]);

        // pre-existing files count as skipped, not done
        for task in &plan[..2] {
            let path = layout.task_path(task);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, "id,source,symbol,title,body,published_at,url,fetched_at\n")
                .unwrap();
        }
        let report = run_crawl(&plan, &connector, &FetchConfig::default(), &layout, 2).unwrap();
        assert_eq!((report.done, report.skipped, report.failed.len()), (2, 2, 0));

        // a second run fetches nothing
        let report = run_crawl(&plan, &connector, &FetchConfig::default(), &layout, 2).unwrap();
        assert_eq!((report.done, report.skipped, report.failed.len()), (0, 4, 0));
    }

    #[test]
    fn store_contents_are_independent_of_worker_count() {
        let (_fdir, fixture) = write_fixture(&replay_fixture());
        let connector = ReplayConnector::new(replay_spec(&both()), &fixture, 3).unwrap();
        let plan = plan_for(&["AAPL", "MSFT"], &["2023-01-01", "2023-01-02"]);

        let solo = tempfile::tempdir().unwrap();
        let wide = tempfile::tempdir().unwrap();
        run_crawl(&plan, &connector, &FetchConfig::default(), &StoreLayout::new(solo.path()), 1)
            .unwrap();
        run_crawl(&plan, &connector, &FetchConfig::default(), &StoreLayout::new(wide.path()), 8)
            .unwrap();
        assert_eq!(store_snapshot(solo.path()), store_snapshot(wide.path()));

        // and the report itself is deterministic
        let again = tempfile::tempdir().unwrap();
        let a = run_crawl(
            &plan,
            &connector,
            &FetchConfig::default(),
            &StoreLayout::new(again.path()),
            8,
        )
        .unwrap();
        assert_eq!((a.done, a.skipped), (4, 0));
    }

    #[test]
    fn failing_tasks_write_nothing_and_are_all_reported() {
        let connector = FlakyConnector::new(u32::MAX);
        let dir = tempfile::tempdir().unwrap();
        let layout = StoreLayout::new(dir.path());
        let plan = plan_for(&["AAPL", "MSFT"], &["2023-01-01"]);
        let report = run_crawl(&plan, &connector, &FetchConfig::default(), &layout, 4).unwrap();
        assert_eq!(report.done, 0);
        assert_eq!(report.skipped, 0);
        assert_eq!(report.failed.len(), plan.len());
        // failures come back in plan order
        let failed_tasks: Vec<&FetchTask> = report.failed.iter().map(|f| &f.task).collect();
        assert_eq!(failed_tasks, plan.iter().collect::<Vec<_>>());
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "no files written");
    }

    #[test]
    fn crawled_store_reads_back_as_the_fetched_documents() {
        let fixture = replay_fixture();
        let (_fdir, fixture_path) = write_fixture(&fixture);
        let connector = ReplayConnector::new(replay_spec(&both()), &fixture_path, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let layout = StoreLayout::new(dir.path());
        let plan = plan_for(&["AAPL", "MSFT"], &["2023-01-01", "2023-01-02"]);
        run_crawl(&plan, &connector, &FetchConfig::default(), &layout, 2).unwrap();
        let stored = read_store(dir.path()).unwrap();
        assert_eq!(stored.len(), fixture.len());
        let mut stored_ids: Vec<&str> = stored.iter().map(|d| d.id.as_str()).collect();
        let mut fixture_ids: Vec<&str> = fixture.iter().map(|d| d.id.as_str()).collect();
        stored_ids.sort_unstable();
        fixture_ids.sort_unstable();
        assert_eq!(stored_ids, fixture_ids);
    }
}
