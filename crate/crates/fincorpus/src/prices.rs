//! Daily price bars, validated per-symbol series and the CSV loader shared
//! by labeling and backtesting.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("invalid price bar for {symbol} on {date}: {reason}")]
    BadBar { symbol: String, date: NaiveDate, reason: String },
    #[error("duplicate date {date} in series for {symbol}")]
    DuplicateDate { symbol: String, date: NaiveDate },
    #[error("bar for {found} in series for {expected}")]
    SymbolMismatch { expected: String, found: String },
    #[error("series for {0} has no bars")]
    EmptySeries(String),
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader { path: String, expected: String, found: String },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub symbol: String,
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl PriceBar {
    pub fn validate(&self) -> Result<(), PriceError> {
        let bad = |reason: String| PriceError::BadBar {
            symbol: self.symbol.clone(),
            date: self.date,
            reason,
        };
        for (name, v) in
            [("open", self.open), ("high", self.high), ("low", self.low), ("close", self.close)]
        {
            if !v.is_finite() {
                return Err(bad(format!("{name} {v} is not finite")));
            }
        }
        // close is already known finite here, so NaN cannot sneak past.
        if self.close <= 0.0 {
            return Err(bad(format!("close {} not positive", self.close)));
        }
        if self.low > self.open || self.low > self.close {
            return Err(bad(format!("low {} above open/close", self.low)));
        }
        if self.high < self.open || self.high < self.close {
            return Err(bad(format!("high {} below open/close", self.high)));
        }
        Ok(())
    }
}

/// A per-symbol daily series with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    symbol: String,
    bars: Vec<PriceBar>,
}

impl PriceSeries {
    /// Validates every bar, sorts by date and rejects duplicates.
    pub fn new(symbol: impl Into<String>, mut bars: Vec<PriceBar>) -> Result<Self, PriceError> {
        let symbol = symbol.into();
        if bars.is_empty() {
            return Err(PriceError::EmptySeries(symbol));
        }
        for bar in &bars {
            if bar.symbol != symbol {
                return Err(PriceError::SymbolMismatch {
                    expected: symbol,
                    found: bar.symbol.clone(),
                });
            }
            bar.validate()?;
        }
        bars.sort_by_key(|b| b.date);
        for pair in bars.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(PriceError::DuplicateDate { symbol, date: pair[0].date });
            }
        }
        Ok(PriceSeries { symbol, bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    /// Index of the last bar dated at or before `date`.
    pub fn index_at_or_before(&self, date: NaiveDate) -> Option<usize> {
        match self.bars.binary_search_by_key(&date, |b| b.date) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }

    /// Index of the first bar dated at or after `date`.
    pub fn index_at_or_after(&self, date: NaiveDate) -> Option<usize> {
        match self.bars.binary_search_by_key(&date, |b| b.date) {
            Ok(i) => Some(i),
            Err(i) if i < self.bars.len() => Some(i),
            Err(_) => None,
        }
    }
}

pub const PRICE_CSV_HEADER: &str = "symbol,date,open,high,low,close,volume";

/// Loads `symbol,date,open,high,low,close,volume` rows (header required,
/// dates `YYYY-MM-DD`) into one validated series per symbol.
pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, PriceSeries>, PriceError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| csv_error(&name, e))?;
    let header = reader
        .headers()
        .map_err(|e| csv_error(&name, e))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != PRICE_CSV_HEADER {
        return Err(PriceError::BadHeader {
            path: name,
            expected: PRICE_CSV_HEADER.to_string(),
            found: header,
        });
    }
    let mut by_symbol: BTreeMap<String, Vec<PriceBar>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&name, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| PriceError::Parse { path: name.clone(), line, message };
        if record.len() != 7 {
            return Err(parse_err(format!("expected 7 fields, found {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(field(1), "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date `{}`: {e}", field(1))))?;
        let num = |i: usize, label: &str| -> Result<f64, PriceError> {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_err(format!("bad {label} `{}`: {e}", field(i))))
        };
        let bar = PriceBar {
            symbol: field(0).to_string(),
            date,
            open: num(2, "open")?,
            high: num(3, "high")?,
            low: num(4, "low")?,
            close: num(5, "close")?,
            volume: field(6)
                .parse::<u64>()
                .map_err(|e| parse_err(format!("bad volume `{}`: {e}", field(6))))?,
        };
        if bar.symbol.is_empty() {
            return Err(parse_err("empty symbol".to_string()));
        }
        by_symbol.entry(bar.symbol.clone()).or_default().push(bar);
    }
    by_symbol
        .into_iter()
        .map(|(symbol, bars)| PriceSeries::new(symbol.clone(), bars).map(|s| (symbol, s)))
        .collect()
}

/// Loads every `*.csv` under `dir` (sorted by name) and merges the rows
/// before building the per-symbol series.
pub fn load_prices_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, PriceSeries>, PriceError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| PriceError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("csv"))
        .collect();
    paths.sort();
    let mut bars: BTreeMap<String, Vec<PriceBar>> = BTreeMap::new();
    for path in paths {
        for (symbol, series) in load_prices_csv(&path)? {
            bars.entry(symbol).or_default().extend(series.bars);
        }
    }
    bars.into_iter()
        .map(|(symbol, bars)| PriceSeries::new(symbol.clone(), bars).map(|s| (symbol, s)))
        .collect()
}

fn csv_error(path: &str, e: csv::Error) -> PriceError {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = e.to_string();
            PriceError::Io {
                path: path.to_string(),
                source: std::io::Error::other(msg),
            }
        }
        _ => PriceError::Parse {
            path: path.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        },
    }
}
