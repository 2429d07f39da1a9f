//! Interpolated word n-gram language model for perplexity scoring.
//!
//! Jelinek-Mercer style: the conditional probability of a token is a
//! weighted mix of maximum-likelihood estimates at every order up to the
//! model's, plus a uniform floor of `1/(|vocab|+1)` that reserves mass for
//! unseen tokens. Orders whose context was never observed contribute
//! nothing; their weight is renormalized away so every conditional
//! distribution still sums to exactly 1 over vocab plus the unknown token.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LmError {
    #[error("training corpus contains no tokens")]
    EmptyCorpus,
    #[error("order {0} outside supported range 1..=5")]
    OrderOutOfRange(usize),
    #[error("cannot score an empty token sequence")]
    EmptySequence,
    #[error("need {expected} interpolation weights (orders high to low, then floor), got {got}")]
    WrongLambdaCount { expected: usize, got: usize },
    #[error("interpolation weights must be non-negative and sum to 1, got sum {0}")]
    BadLambdas(f64),
    #[error("unsupported model file version {0}")]
    BadVersion(u32),
    #[error("malformed model file: {0}")]
    BadFile(String),
}

const MODEL_FILE_VERSION: u32 = 1;
const CONTEXT_SEP: &str = "\u{1f}";
const LAMBDA_SUM_TOL: f64 = 1e-12;

/// Interpolation weights for `order`, highest order first, floor mass last.
/// Only order 3 is externally pinned; the others follow the same shape
/// (decaying toward lower orders, 0.05 floor).
pub fn default_lambdas(order: usize) -> Vec<f64> {
    match order {
        1 => vec![0.95, 0.05],
        2 => vec![0.60, 0.35, 0.05],
        3 => vec![0.50, 0.30, 0.15, 0.05],
        4 => vec![0.45, 0.25, 0.15, 0.10, 0.05],
        5 => vec![0.40, 0.25, 0.15, 0.10, 0.05, 0.05],
        _ => unreachable!("order validated before lambda lookup"),
    }
}

type CountTable = Vec<BTreeMap<String, BTreeMap<String, u64>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    /// `lambdas[0]` weights the full-order term; the last entry is the
    /// uniform floor mass.
    lambdas: Vec<f64>,
    vocab: BTreeSet<String>,
    /// `counts[k-1]`: (k-1)-token context (joined with U+001F) to next-token
    /// counts.
    counts: CountTable,
    /// Continuation totals per context, derived from `counts`.
    totals: Vec<BTreeMap<String, u64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    lambdas: Vec<f64>,
    counts: CountTable,
}

fn join_context(context: &[String]) -> String {
    context.join(CONTEXT_SEP)
}

impl NgramLm {
    /// Trains with the default weights for `order`.
    pub fn train<S: AsRef<str>>(corpus: &[Vec<S>], order: usize) -> Result<NgramLm, LmError> {
        if !(1..=5).contains(&order) {
            return Err(LmError::OrderOutOfRange(order));
        }
        Self::train_with(corpus, order, default_lambdas(order))
    }

    pub fn train_with<S: AsRef<str>>(
        corpus: &[Vec<S>],
        order: usize,
        lambdas: Vec<f64>,
    ) -> Result<NgramLm, LmError> {
        if !(1..=5).contains(&order) {
            return Err(LmError::OrderOutOfRange(order));
        }
        validate_lambdas(&lambdas, order)?;
        let mut counts: CountTable = vec![BTreeMap::new(); order];
        for sequence in corpus {
            for i in 0..sequence.len() {
                for k in 1..=order {
                    if i + 1 < k {
                        continue;
                    }
                    let context: Vec<String> = sequence[i + 1 - k..i]
                        .iter()
                        .map(|t| t.as_ref().to_string())
                        .collect();
                    *counts[k - 1]
                        .entry(join_context(&context))
                        .or_default()
                        .entry(sequence[i].as_ref().to_string())
                        .or_default() += 1;
                }
            }
        }
        Self::from_parts(order, lambdas, counts)
    }

    fn from_parts(order: usize, lambdas: Vec<f64>, counts: CountTable) -> Result<NgramLm, LmError> {
        let vocab: BTreeSet<String> = counts
            .first()
            .and_then(|unigrams| unigrams.get(""))
            .map(|next| next.keys().cloned().collect())
            .unwrap_or_default();
        if vocab.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let totals = counts
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|(ctx, next)| (ctx.clone(), next.values().sum()))
                    .collect()
            })
            .collect();
        Ok(NgramLm {
            order,
            lambdas,
            vocab,
            counts,
            totals,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(|s| s.as_str())
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `p(token | context)`. Only the last `order - 1` context tokens
    /// matter. Defined for any token, including ones never seen in
    /// training.
    pub fn prob(&self, context: &[String], token: &str) -> f64 {
        let floor = 1.0 / (self.vocab.len() as f64 + 1.0);
        let lambda_floor = *self.lambdas.last().expect("validated non-empty");
        let mut weight = lambda_floor;
        let mut mix = lambda_floor * floor;
        for k in 1..=self.order {
            if context.len() < k - 1 {
                continue;
            }
            let ctx_key = join_context(&context[context.len() - (k - 1)..]);
            let Some(total) = self.totals[k - 1].get(&ctx_key) else {
                continue;
            };
            let count = self.counts[k - 1]
                .get(&ctx_key)
                .and_then(|next| next.get(token))
                .copied()
                .unwrap_or(0);
            let lambda = self.lambdas[self.order - k];
            mix += lambda * (count as f64 / *total as f64);
            weight += lambda;
        }
        mix / weight
    }

    /// `exp(-(1/N) * sum ln p(token_i | context_i))`. Infinite only when the
    /// floor mass is zero and an unseen token appears.
    pub fn perplexity<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64, LmError> {
        if tokens.is_empty() {
            return Err(LmError::EmptySequence);
        }
        let owned: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut ln_sum = 0.0;
        for i in 0..owned.len() {
            let start = i.saturating_sub(self.order - 1);
            ln_sum += self.prob(&owned[start..i], &owned[i]).ln();
        }
        Ok((-ln_sum / owned.len() as f64).exp())
    }

    /// Tokenizes with the reference tokenizer and scores.
    pub fn perplexity_of_text(&self, text: &str) -> Result<f64, LmError> {
        self.perplexity(&crate::tokenize::tokenize(text))
    }

    pub fn save(&self, writer: impl Write) -> Result<(), LmError> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            order: self.order,
            lambdas: self.lambdas.clone(),
            counts: self.counts.clone(),
        };
        serde_json::to_writer(writer, &file).map_err(|e| LmError::BadFile(e.to_string()))
    }

    pub fn load(reader: impl Read) -> Result<NgramLm, LmError> {
        let file: ModelFile =
            serde_json::from_reader(reader).map_err(|e| LmError::BadFile(e.to_string()))?;
        if file.version != MODEL_FILE_VERSION {
            return Err(LmError::BadVersion(file.version));
        }
        if !(1..=5).contains(&file.order) {
            return Err(LmError::OrderOutOfRange(file.order));
        }
        if file.counts.len() != file.order {
            return Err(LmError::BadFile(format!(
                "expected {} count tables, found {}",
                file.order,
                file.counts.len()
            )));
        }
        validate_lambdas(&file.lambdas, file.order)?;
        Self::from_parts(file.order, file.lambdas, file.counts)
    }
}

fn validate_lambdas(lambdas: &[f64], order: usize) -> Result<(), LmError> {
    if lambdas.len() != order + 1 {
        return Err(LmError::WrongLambdaCount {
            expected: order + 1,
            got: lambdas.len(),
        });
    }
    let sum: f64 = lambdas.iter().sum();
    if lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) || (sum - 1.0).abs() > LAMBDA_SUM_TOL {
        return Err(LmError::BadLambdas(sum));
    }
    Ok(())
}
