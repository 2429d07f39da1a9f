//! The incremental crawl store: one CSV file per fetch task.
//!
//! A task's file existing is the definition of "done", so resuming a crawl
//! is a directory scan, not a database. Files are written to a temp name
//! and renamed into place, which keeps a killed crawl from leaving a
//! half-written file that would then be wrongly skipped forever.

use super::{FetchTask, IngestError};
use crate::model::{rfc3339_secs, RawDocument};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

pub const STORE_CSV_HEADER: [&str; 8] =
    ["id", "source", "symbol", "title", "body", "published_at", "url", "fetched_at"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StoreLayout { root: root.into() }
    }

    /// `root/<symbol>/<date or page>.csv`.
    pub fn task_path(&self, task: &FetchTask) -> PathBuf {
        self.root.join(&task.symbol).join(format!("{}.csv", task.key))
    }
}

fn storage_err(path: &Path) -> impl Fn(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Storage { path: path.to_path_buf(), source }
}

fn csv_storage_err(path: &Path) -> impl Fn(csv::Error) -> IngestError + '_ {
    move |e| IngestError::Storage { path: path.to_path_buf(), source: std::io::Error::other(e) }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes one task's documents atomically (temp file + rename).
pub fn write_task_file(path: &Path, docs: &[RawDocument]) -> Result<(), IngestError> {
    let parent = path.parent().ok_or_else(|| {
        IngestError::Storage { path: path.to_path_buf(), source: std::io::Error::other("no parent") }
    })?;
    std::fs::create_dir_all(parent).map_err(storage_err(path))?;
    let unique = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let temp = parent.join(format!(
        ".tmp-{unique}-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("task.csv")
    ));

    let mut writer = csv::Writer::from_path(&temp).map_err(csv_storage_err(&temp))?;
    writer.write_record(STORE_CSV_HEADER).map_err(csv_storage_err(&temp))?;
    for doc in docs {
        writer
            .write_record([
                doc.id.as_str(),
                doc.source.as_str(),
                doc.symbol.as_deref().unwrap_or(""),
                doc.title.as_str(),
                doc.body.as_str(),
                &rfc3339_secs::to_string(&doc.published_at),
                doc.url.as_deref().unwrap_or(""),
                &rfc3339_secs::to_string(&doc.fetched_at),
            ])
            .map_err(csv_storage_err(&temp))?;
    }
    writer.flush().map_err(storage_err(&temp))?;
    drop(writer);
    std::fs::rename(&temp, path).map_err(storage_err(path))?;
    Ok(())
}

fn read_task_file(path: &Path) -> Result<Vec<RawDocument>, IngestError> {
    let bad = |line: usize, message: String| IngestError::BadStore {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_storage_err(path))?;
    let header = reader.headers().map_err(csv_storage_err(path))?;
    if header != STORE_CSV_HEADER.as_slice() {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let mut docs = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(csv_storage_err(path))?;
        if row.len() != STORE_CSV_HEADER.len() {
            return Err(bad(line, format!("{} fields, expected 8", row.len())));
        }
        let time = |field: usize| {
            chrono::DateTime::parse_from_rfc3339(&row[field])
                .map(|t| t.with_timezone(&chrono::Utc))
                .map_err(|e| bad(line, format!("bad time {:?}: {e}", &row[field])))
        };
        let optional = |field: usize| {
            if row[field].is_empty() {
                None
            } else {
                Some(row[field].to_string())
            }
        };
        docs.push(RawDocument {
            id: row[0].to_string(),
            source: row[1].to_string(),
            symbol: optional(2),
            title: row[3].to_string(),
            body: row[4].to_string(),
            published_at: time(5)?,
            url: optional(6),
            fetched_at: time(7)?,
        });
    }
    Ok(docs)
}

/// Reads every task file under the store root, in sorted (symbol, file)
/// order so the result is deterministic regardless of crawl scheduling.
pub fn read_store(root: impl AsRef<Path>) -> Result<Vec<RawDocument>, IngestError> {
    let root = root.as_ref();
    let mut symbol_dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(storage_err(root))? {
        let entry = entry.map_err(storage_err(root))?;
        if entry.path().is_dir() {
            symbol_dirs.push(entry.path());
        }
    }
    symbol_dirs.sort();
    let mut docs = Vec::new();
    for dir in symbol_dirs {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(storage_err(&dir))? {
            let entry = entry.map_err(storage_err(&dir))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                files.push(path);
            }
        }
        files.sort();
        for file in files {
            docs.extend(read_task_file(&file)?);
        }
    }
    Ok(docs)
}
