//! Quantitative factor formulas over date-indexed series and small
//! (date, company, value) panels.
//!
//! Missing values are NaN throughout. Every operation preserves the input's
//! index and never turns a missing value into a present one; divisions by
//! zero produce missing rather than infinities.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid window {0}: {1}")]
    BadWindow(usize, &'static str),
    #[error("company {company} has {got} observations, momentum over {period} needs {needed}")]
    InsufficientHistory { company: String, period: usize, needed: usize, got: usize },
    #[error("duplicate panel row for {company} on {date}")]
    DuplicateRow { company: String, date: NaiveDate },
}

fn checked_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::NAN
    } else {
        a / b
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Earnings<'a> {
    Scalar(f64),
    Series(&'a [f64]),
}

/// Elementwise price over earnings; zero or missing earnings give missing.
pub fn price_to_earnings(price: &[f64], earnings: Earnings) -> Result<Vec<f64>, FactorError> {
    match earnings {
        Earnings::Scalar(e) => Ok(price.iter().map(|&p| checked_div(p, e)).collect()),
        Earnings::Series(es) => {
            if price.len() != es.len() {
                return Err(FactorError::LengthMismatch(price.len(), es.len()));
            }
            Ok(price.iter().zip(es).map(|(&p, &e)| checked_div(p, e)).collect())
        }
    }
}

/// Rolling mean; the first `window - 1` entries are missing, as is any
/// window containing a missing value.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, FactorError> {
    if window < 1 {
        return Err(FactorError::BadWindow(window, "must be >= 1"));
    }
    Ok((0..series.len())
        .map(|i| {
            if i + 1 < window {
                f64::NAN
            } else {
                let slice = &series[i + 1 - window..=i];
                slice.iter().sum::<f64>() / window as f64
            }
        })
        .collect())
}

fn sample_std(slice: &[f64]) -> f64 {
    let n = slice.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = slice.iter().sum::<f64>() / n as f64;
    let var = slice.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    var.sqrt()
}

/// Rolling sample standard deviation (divisor `window - 1`).
pub fn volatility(series: &[f64], window: usize) -> Result<Vec<f64>, FactorError> {
    if window < 2 {
        return Err(FactorError::BadWindow(window, "must be >= 2"));
    }
    Ok((0..series.len())
        .map(|i| {
            if i + 1 < window {
                f64::NAN
            } else {
                sample_std(&series[i + 1 - window..=i])
            }
        })
        .collect())
}

fn zip_eq<'a>(
    a: &'a [f64],
    b: &'a [f64],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a, FactorError> {
    if a.len() != b.len() {
        return Err(FactorError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().copied().zip(b.iter().copied()))
}

/// Return on equity against the average of this and the previous period's
/// equity; the first entry has no previous period and is missing.
pub fn roe(net_income: &[f64], equity: &[f64]) -> Result<Vec<f64>, FactorError> {
    if net_income.len() != equity.len() {
        return Err(FactorError::LengthMismatch(net_income.len(), equity.len()));
    }
    Ok((0..equity.len())
        .map(|i| {
            if i == 0 {
                f64::NAN
            } else {
                checked_div(net_income[i], (equity[i - 1] + equity[i]) / 2.0)
            }
        })
        .collect())
}

pub fn de_ratio(debt: &[f64], equity: &[f64]) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(debt, equity)?.map(|(d, e)| checked_div(d, e)).collect())
}

pub fn eps(net_income: &[f64], shares: &[f64]) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(net_income, shares)?.map(|(n, s)| checked_div(n, s)).collect())
}

pub fn current_ratio(assets: &[f64], liabilities: &[f64]) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(assets, liabilities)?.map(|(a, l)| checked_div(a, l)).collect())
}

pub fn gross_margin(revenue: &[f64], cogs: &[f64]) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(revenue, cogs)?.map(|(r, c)| checked_div(r - c, r)).collect())
}

/// value_t / value_{t-k} - 1, missing for the first `k` entries.
pub fn pct_change(series: &[f64], k: usize) -> Result<Vec<f64>, FactorError> {
    if k < 1 {
        return Err(FactorError::BadWindow(k, "must be >= 1"));
    }
    Ok((0..series.len())
        .map(|i| if i < k { f64::NAN } else { checked_div(series[i], series[i - k]) - 1.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub date: NaiveDate,
    pub company: String,
    pub value: f64,
}

/// A long-format panel, canonically ordered by (date, company). Factor
/// outputs align with [`Panel::rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: Vec<PanelRow>,
}

impl Panel {
    pub fn new(mut rows: Vec<PanelRow>) -> Result<Self, FactorError> {
        rows.sort_by(|a, b| (a.date, &a.company).cmp(&(b.date, &b.company)));
        for pair in rows.windows(2) {
            if pair[0].date == pair[1].date && pair[0].company == pair[1].company {
                return Err(FactorError::DuplicateRow {
                    company: pair[0].company.clone(),
                    date: pair[0].date,
                });
            }
        }
        Ok(Panel { rows })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// Standardize ranks with the mean and std of every rank in the panel,
    /// mixing dates. Faithful to the reference arithmetic this reproduces.
    Verbatim,
    /// Standardize ranks within each date.
    CrossSectional,
}

/// Descending average ranks (1 = largest) of the given values.
fn rank_descending(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b].partial_cmp(&values[a]).expect("no NaN in rank input").then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Momentum factor: per-company percentage change over `time_period`
/// observations, ranked descending within each date (ties averaged), then
/// standardized per `mode`. Rows without enough history stay missing.
pub fn momentum_factor(
    panel: &Panel,
    time_period: usize,
    mode: StandardizeMode,
) -> Result<Vec<PanelRow>, FactorError> {
    if time_period < 1 {
        return Err(FactorError::BadWindow(time_period, "must be >= 1"));
    }
    let rows = panel.rows();
    let mut by_company: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_company.entry(&row.company).or_default().push(i);
    }
    for (company, indices) in &by_company {
        if indices.len() < time_period + 1 {
            return Err(FactorError::InsufficientHistory {
                company: company.to_string(),
                period: time_period,
                needed: time_period + 1,
                got: indices.len(),
            });
        }
    }

    let mut changes = vec![f64::NAN; rows.len()];
    let company_changes: Vec<(Vec<usize>, Vec<f64>)> = by_company
        .par_iter()
        .map(|(_, indices)| {
            let series: Vec<f64> = indices.iter().map(|&i| rows[i].value).collect();
            let ch = pct_change(&series, time_period).expect("validated period");
            (indices.clone(), ch)
        })
        .collect();
    for (indices, ch) in company_changes {
        for (&i, c) in indices.iter().zip(ch) {
            changes[i] = c;
        }
    }

    let mut by_date: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if !changes[i].is_nan() {
            by_date.entry(row.date).or_default().push(i);
        }
    }
    let mut ranks = vec![f64::NAN; rows.len()];
    for indices in by_date.values() {
        let values: Vec<f64> = indices.iter().map(|&i| changes[i]).collect();
        for (&i, r) in indices.iter().zip(rank_descending(&values)) {
            ranks[i] = r;
        }
    }

    let mut out = vec![f64::NAN; rows.len()];
    match mode {
        StandardizeMode::Verbatim => {
            let all: Vec<f64> = ranks.iter().copied().filter(|r| !r.is_nan()).collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let std = sample_std(&all);
            for (i, &r) in ranks.iter().enumerate() {
                if !r.is_nan() {
                    out[i] = checked_div(r - mean, std);
                }
            }
        }
        StandardizeMode::CrossSectional => {
            for indices in by_date.values() {
                let vals: Vec<f64> = indices.iter().map(|&i| ranks[i]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let std = sample_std(&vals);
                for &i in indices {
                    out[i] = checked_div(ranks[i] - mean, std);
                }
            }
        }
    }

    Ok(rows
        .iter()
        .zip(out)
        .map(|(row, value)| PanelRow { date: row.date, company: row.company.clone(), value })
        .collect())
}

/// Fundamental momentum factor over a metric panel.
pub fn fmf(
    panel: &Panel,
    time_period: usize,
    mode: StandardizeMode,
) -> Result<Vec<PanelRow>, FactorError> {
    momentum_factor(panel, time_period, mode)
}

/// Price momentum factor over an indicator panel; same arithmetic as
/// [`fmf`], different input semantics.
pub fn pmf(
    panel: &Panel,
    time_period: usize,
    mode: StandardizeMode,
) -> Result<Vec<PanelRow>, FactorError> {
    momentum_factor(panel, time_period, mode)
}

/// Weighted combination of the two momentum factors.
pub fn cmf(fmf: &[f64], pmf: &[f64], w_f: f64, w_p: f64) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(fmf, pmf)?.map(|(f, p)| w_f * f + w_p * p).collect())
}

/// Non-linear combination ln(fmf) * exp(pmf); non-positive fmf is outside
/// the log's domain and yields missing.
pub fn nlmf(fmf: &[f64], pmf: &[f64]) -> Result<Vec<f64>, FactorError> {
    Ok(zip_eq(fmf, pmf)?
        .map(|(f, p)| if f <= 0.0 || f.is_nan() { f64::NAN } else { f.ln() * p.exp() })
        .collect())
}
