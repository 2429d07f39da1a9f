//! Corpus engineering toolkit for building financial-news instruction
//! datasets.
//!
//! The library covers the full path from raw news to training-ready files:
//! ingestion connectors with an incremental on-disk store, text cleaning,
//! quality filtering (length, character mix, repetition, perplexity,
//! language), MinHash/LSH deduplication, market-feedback labeling of each
//! document from forward returns, temporal-then-random splitting with
//! instruction JSONL export, and evaluation (classification metrics plus a
//! long/short backtest). Two smaller modules provide quantitative factor
//! formulas and GPU training-cost arithmetic.
//!
//! Everything is deterministic by construction: documents get
//! content-derived ids, shuffles use a pinned generator, hash families use
//! published seeds, and parallel stages produce output independent of
//! worker count. The `fincorpus` binary wires the same functions into a
//! stage-by-stage CLI and a config-driven pipeline runner.

pub mod clean;
pub mod cost;
pub mod dataset;
pub mod dedup;
pub mod eval;
pub mod factor;
pub mod filter;
pub mod ingest;
pub mod jsonl;
pub mod label;
pub mod langid;
pub mod lm;
pub mod model;
pub mod pipeline;
pub mod prices;
pub mod rng;
pub mod tokenize;

pub use model::{CleanDocument, FineSentiment, RawDocument, Sentiment};
