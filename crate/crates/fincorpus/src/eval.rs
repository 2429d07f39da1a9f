//! Classification metrics over sentiment predictions and a long/short
//! backtest that compounds per-trade returns into a cumulative return rate.

use crate::model::Sentiment;
use crate::prices::PriceSeries;
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("no records with a positive or negative gold label")]
    EmptyAfterRestriction,
    #[error("invalid backtest config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub gold: Sentiment,
    pub pred: Sentiment,
    pub symbol: String,
    pub signal_date: NaiveDate,
}

/// 3x3 counts addressed as `counts[gold.index()][pred.index()]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>) -> Self {
        let mut counts = [[0u64; 3]; 3];
        for r in records {
            counts[r.gold.index()][r.pred.index()] += 1;
        }
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn class_counts(&self, class: Sentiment) -> ClassCounts {
        let c = class.index();
        let true_pos = self.counts[c][c];
        let false_pos: u64 = (0..3).filter(|&g| g != c).map(|g| self.counts[g][c]).sum();
        let false_neg: u64 = (0..3).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        let true_neg = self.total() - true_pos - false_pos - false_neg;
        ClassCounts { true_pos, false_pos, false_neg, true_neg }
    }

    /// Per-class F1 with the 0/0 -> 0 convention for precision, recall and
    /// the harmonic mean itself.
    pub fn class_f1(&self, class: Sentiment) -> f64 {
        let c = self.class_counts(class);
        let precision = zero_safe(c.true_pos as f64, (c.true_pos + c.false_pos) as f64);
        let recall = zero_safe(c.true_pos as f64, (c.true_pos + c.false_neg) as f64);
        zero_safe(2.0 * precision * recall, precision + recall)
    }
}

fn zero_safe(numerator: f64, denominator: f64) -> f64 {
    if denominator == 0.0 {
        0.0
    } else {
        numerator / denominator
    }
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let correct = records.iter().filter(|r| r.gold == r.pred).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Accuracy over records whose gold label is positive or negative; neutral
/// predictions on those records count as errors.
pub fn acc_without_neutral(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let restricted: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.gold != Sentiment::Neutral).collect();
    if restricted.is_empty() {
        return Err(EvalError::EmptyAfterRestriction);
    }
    let correct = restricted.iter().filter(|r| r.gold == r.pred).count();
    Ok(correct as f64 / restricted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    MacroAll,
    MacroWoNeutral,
    Weighted,
}

pub fn f1_scores(records: &[PredictionRecord], mode: F1Mode) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    match mode {
        F1Mode::MacroAll => {
            let cm = ConfusionMatrix::from_records(records);
            Ok(Sentiment::ALL.iter().map(|&c| cm.class_f1(c)).sum::<f64>() / 3.0)
        }
        F1Mode::MacroWoNeutral => {
            let restricted: Vec<&PredictionRecord> =
                records.iter().filter(|r| r.gold != Sentiment::Neutral).collect();
            if restricted.is_empty() {
                return Err(EvalError::EmptyAfterRestriction);
            }
            let cm = ConfusionMatrix::from_records(restricted.iter().copied());
            Ok((cm.class_f1(Sentiment::Positive) + cm.class_f1(Sentiment::Negative)) / 2.0)
        }
        F1Mode::Weighted => {
            let cm = ConfusionMatrix::from_records(records);
            let total = cm.total() as f64;
            Ok(Sentiment::ALL
                .iter()
                .map(|&c| {
                    let support: u64 = cm.counts[c.index()].iter().sum();
                    cm.class_f1(c) * support as f64 / total
                })
                .sum())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc_all: f64,
    pub acc_wo_neutral: f64,
    pub f1_macro_all: f64,
    pub f1_macro_wo_neutral: f64,
    pub f1_weighted: f64,
    pub confusion: ConfusionMatrix,
}

/// Full metrics bundle. Fails with [`EvalError::EmptyAfterRestriction`] when
/// every gold label is neutral, since two of the report's fields are
/// undefined in that case.
pub fn compute_metrics(records: &[PredictionRecord]) -> Result<MetricsReport, EvalError> {
    Ok(MetricsReport {
        acc_all: accuracy(records)?,
        acc_wo_neutral: acc_without_neutral(records)?,
        f1_macro_all: f1_scores(records, F1Mode::MacroAll)?,
        f1_macro_wo_neutral: f1_scores(records, F1Mode::MacroWoNeutral)?,
        f1_weighted: f1_scores(records, F1Mode::Weighted)?,
        confusion: ConfusionMatrix::from_records(records),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktestMode {
    LongShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub hold_days: usize,
    pub mode: BacktestMode,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig { hold_days: 5, mode: BacktestMode::LongShort }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.hold_days == 0 {
            return Err(EvalError::BadConfig("hold_days must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeDirection {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub example_id: String,
    pub direction: TradeDirection,
    pub entry_date: NaiveDate,
    pub exit_date: NaiveDate,
    pub entry_close: f64,
    pub exit_close: f64,
    pub return_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrade {
    pub example_id: String,
    pub symbol: String,
    pub signal_date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockResult {
    pub symbol: String,
    pub initial_value: f64,
    pub final_value: f64,
    pub crr_pct: f64,
    pub trades: Vec<Trade>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub per_stock: BTreeMap<String, StockResult>,
    pub skipped: Vec<SkippedTrade>,
    pub avg_crr_pct: f64,
}

/// (sum of finals / sum of initials - 1) * 100.
pub fn avg_crr(per_stock: &BTreeMap<String, StockResult>) -> Result<f64, EvalError> {
    if per_stock.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let initial: f64 = per_stock.values().map(|s| s.initial_value).sum();
    let fin: f64 = per_stock.values().map(|s| s.final_value).sum();
    Ok((fin / initial - 1.0) * 100.0)
}

fn simulate_stock(
    symbol: &str,
    signals: &[&PredictionRecord],
    prices: &BTreeMap<String, PriceSeries>,
    hold_days: usize,
) -> (StockResult, Vec<SkippedTrade>) {
    let mut value = 1.0f64;
    let mut trades = Vec::new();
    let mut skipped = Vec::new();
    // Exit date of the currently open position; a signal dated strictly
    // before it is ignored, one dated on it trades at that same close.
    let mut open_until: Option<NaiveDate> = None;

    for record in signals {
        if record.pred == Sentiment::Neutral {
            continue;
        }
        if let Some(exit) = open_until {
            if record.signal_date < exit {
                continue;
            }
        }
        let mut skip = |reason: String| {
            skipped.push(SkippedTrade {
                example_id: record.example_id.clone(),
                symbol: symbol.to_string(),
                signal_date: record.signal_date,
                reason,
            });
        };
        let Some(series) = prices.get(symbol) else {
            skip(format!("no price series for {symbol}"));
            continue;
        };
        let bars = series.bars();
        let Ok(entry_idx) = bars.binary_search_by_key(&record.signal_date, |b| b.date) else {
            skip(format!("no bar on {}", record.signal_date));
            continue;
        };
        let exit_idx = entry_idx + hold_days;
        let Some(exit_bar) = bars.get(exit_idx) else {
            skip(format!("series ends before exit, {hold_days} bars after {}", record.signal_date));
            continue;
        };
        let entry = bars[entry_idx].close;
        let exit = exit_bar.close;
        let (direction, ret) = match record.pred {
            Sentiment::Positive => (TradeDirection::Long, exit / entry - 1.0),
            Sentiment::Negative => (TradeDirection::Short, (entry - exit) / entry),
            Sentiment::Neutral => unreachable!("filtered above"),
        };
        value *= 1.0 + ret;
        open_until = Some(exit_bar.date);
        trades.push(Trade {
            example_id: record.example_id.clone(),
            direction,
            entry_date: bars[entry_idx].date,
            exit_date: exit_bar.date,
            entry_close: entry,
            exit_close: exit,
            return_frac: ret,
        });
    }

    let result = StockResult {
        symbol: symbol.to_string(),
        initial_value: 1.0,
        final_value: value,
        crr_pct: (value / 1.0 - 1.0) * 100.0,
        trades,
    };
    (result, skipped)
}

/// Per-stock unit-capital simulation: positive predictions open a long at
/// the signal day's close and close `hold_days` bars later, negative open a
/// short, neutral do nothing. One open position per stock; trades without
/// the needed bars are skipped and reported. Stocks are independent, so the
/// simulation runs per stock in parallel with a deterministic merge.
pub fn backtest(
    records: &[PredictionRecord],
    prices: &BTreeMap<String, PriceSeries>,
    cfg: &BacktestConfig,
) -> Result<BacktestResult, EvalError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut by_symbol: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for record in records {
        by_symbol.entry(&record.symbol).or_default().push(record);
    }
    for signals in by_symbol.values_mut() {
        signals.sort_by(|a, b| {
            (a.signal_date, &a.example_id).cmp(&(b.signal_date, &b.example_id))
        });
    }
    let groups: Vec<(&str, Vec<&PredictionRecord>)> = by_symbol.into_iter().collect();
    let simulated: Vec<(StockResult, Vec<SkippedTrade>)> = groups
        .par_iter()
        .map(|(symbol, signals)| simulate_stock(symbol, signals, prices, cfg.hold_days))
        .collect();

    let mut per_stock = BTreeMap::new();
    let mut skipped = Vec::new();
    for (result, mut misses) in simulated {
        per_stock.insert(result.symbol.clone(), result);
        skipped.append(&mut misses);
    }
    let avg_crr_pct = avg_crr(&per_stock)?;
    Ok(BacktestResult { per_stock, skipped, avg_crr_pct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prices::PriceBar;
    use proptest::prelude::*;

    fn rec(id: &str, gold: Sentiment, pred: Sentiment) -> PredictionRecord {
        PredictionRecord {
            example_id: id.to_string(),
            gold,
            pred,
            symbol: "TST".to_string(),
            signal_date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
        }
    }

    fn signal(id: &str, symbol: &str, day: u32, pred: Sentiment) -> PredictionRecord {
        PredictionRecord {
            example_id: id.to_string(),
            gold: pred,
            pred,
            symbol: symbol.to_string(),
            signal_date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap()
                + chrono::Days::new(day as u64),
        }
    }

    fn series(symbol: &str, closes: &[f64]) -> PriceSeries {
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| PriceBar {
                symbol: symbol.to_string(),
                date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap() + chrono::Days::new(i as u64),
                open: close,
                high: close,
                low: close,
                close,
                volume: 1_000,
            })
            .collect();
        PriceSeries::new(symbol, bars).unwrap()
    }

    use Sentiment::{Negative as Neg, Neutral as Neu, Positive as Pos};

    #[test]
    fn accuracy_counts_agreements() {
        let all = vec![rec("a", Pos, Pos), rec("b", Neg, Neg)];
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let quarter = vec![
            rec("a", Pos, Pos),
            rec("b", Neg, Pos),
            rec("c", Neu, Pos),
            rec("d", Pos, Neg),
        ];
        assert_eq!(accuracy(&quarter).unwrap(), 0.25);
        assert_eq!(accuracy(&[]).unwrap_err(), EvalError::EmptyInput);
    }

    #[test]
    fn accuracy_without_neutral_restricts_by_gold() {
        let mut records = vec![rec("a", Pos, Pos), rec("b", Pos, Neu)];
        for i in 0..5 {
            records.push(rec(&format!("n{i}"), Neu, Neu));
        }
        assert_eq!(acc_without_neutral(&records).unwrap(), 0.5);
        let all_neutral = vec![rec("a", Neu, Pos), rec("b", Neu, Neg)];
        assert_eq!(
            acc_without_neutral(&all_neutral).unwrap_err(),
            EvalError::EmptyAfterRestriction
        );
    }

    #[test]
    fn perfect_predictions_score_one_in_every_mode() {
        let records = vec![
            rec("a", Pos, Pos),
            rec("b", Neg, Neg),
            rec("c", Neu, Neu),
            rec("d", Pos, Pos),
        ];
        for mode in [F1Mode::MacroAll, F1Mode::MacroWoNeutral, F1Mode::Weighted] {
            assert_eq!(f1_scores(&records, mode).unwrap(), 1.0, "{mode:?}");
        }
        let single_class = vec![rec("a", Pos, Pos), rec("b", Pos, Pos)];
        assert_eq!(f1_scores(&single_class, F1Mode::Weighted).unwrap(), 1.0);
        // macro over all three classes pays for the two absent ones
        assert!((f1_scores(&single_class, F1Mode::MacroAll).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wo_neutral_f1_counts_neutral_predictions_as_errors() {
        let records = vec![rec("a", Pos, Neu), rec("b", Neg, Neg)];
        // positive: TP 0 -> F1 0; negative: perfect -> F1 1
        assert_eq!(f1_scores(&records, F1Mode::MacroWoNeutral).unwrap(), 0.5);
        assert_eq!(
            f1_scores(&[rec("a", Neu, Pos)], F1Mode::MacroWoNeutral).unwrap_err(),
            EvalError::EmptyAfterRestriction
        );
    }

    #[test]
    fn confusion_matrix_class_counts_partition_totals() {
        let records = vec![
            rec("a", Pos, Neg),
            rec("b", Pos, Pos),
            rec("c", Neg, Neu),
            rec("d", Neu, Neu),
            rec("e", Neg, Neg),
        ];
        let cm = ConfusionMatrix::from_records(&records);
        assert_eq!(cm.total(), 5);
        for class in Sentiment::ALL {
            let c = cm.class_counts(class);
            assert_eq!(c.true_pos + c.false_pos + c.false_neg + c.true_neg, 5, "{class:?}");
        }
        assert_eq!(cm.counts[Pos.index()][Neg.index()], 1);
        assert_eq!(cm.counts[Neg.index()][Neu.index()], 1);
    }

    /// Brute-force per-class tallies computed with plain loops, no shared
    /// code with the implementation.
    fn oracle_f1(records: &[PredictionRecord], mode: F1Mode) -> Option<f64> {
        let pool: Vec<&PredictionRecord> = match mode {
            F1Mode::MacroWoNeutral => records.iter().filter(|r| r.gold != Neu).collect(),
            _ => records.iter().collect(),
        };
        if pool.is_empty() {
            return None;
        }
        let classes: &[Sentiment] = match mode {
            F1Mode::MacroWoNeutral => &[Pos, Neg],
            _ => &Sentiment::ALL,
        };
        let f1_of = |class: Sentiment| -> f64 {
            let tp = pool.iter().filter(|r| r.gold == class && r.pred == class).count() as f64;
            let fp = pool.iter().filter(|r| r.gold != class && r.pred == class).count() as f64;
            let fno = pool.iter().filter(|r| r.gold == class && r.pred != class).count() as f64;
            let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let r = if tp + fno == 0.0 { 0.0 } else { tp / (tp + fno) };
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        };
        Some(match mode {
            F1Mode::Weighted => classes
                .iter()
                .map(|&c| {
                    let support = pool.iter().filter(|r| r.gold == c).count() as f64;
                    f1_of(c) * support / pool.len() as f64
                })
                .sum(),
            _ => classes.iter().map(|&c| f1_of(c)).sum::<f64>() / classes.len() as f64,
        })
    }

    #[test]
    fn random_sets_match_brute_force_oracle() {
        let mut rng = crate::rng::PinnedRng::new(11_235);
        for round in 0..60 {
            let n = 1 + rng.next_below(200) as usize;
            let records: Vec<PredictionRecord> = (0..n)
                .map(|i| {
                    let gold = Sentiment::ALL[rng.next_below(3) as usize];
                    let pred = Sentiment::ALL[rng.next_below(3) as usize];
                    rec(&format!("r{round}e{i}"), gold, pred)
                })
                .collect();
            let correct = records.iter().filter(|r| r.gold == r.pred).count() as f64;
            assert!((accuracy(&records).unwrap() - correct / n as f64).abs() < 1e-12);
            for mode in [F1Mode::MacroAll, F1Mode::MacroWoNeutral, F1Mode::Weighted] {
                match oracle_f1(&records, mode) {
                    Some(want) => {
                        let got = f1_scores(&records, mode).unwrap();
                        assert!((got - want).abs() < 1e-12, "round {round} {mode:?}");
                    }
                    None => assert!(f1_scores(&records, mode).is_err()),
                }
            }
            // permutation invariance: reverse the records, everything holds
            let mut reversed = records.clone();
            reversed.reverse();
            assert_eq!(accuracy(&records).unwrap(), accuracy(&reversed).unwrap());
            assert_eq!(
                ConfusionMatrix::from_records(&records),
                ConfusionMatrix::from_records(&reversed)
            );
        }
    }

    #[test]
    fn scripted_two_stock_backtest_matches_hand_walk() {
        let prices = BTreeMap::from([
            (
                "AAA".to_string(),
                series("AAA", &[100.0, 105.0, 110.0, 110.0, 100.0, 99.0, 98.0, 97.0]),
            ),
            (
                "BBB".to_string(),
                series("BBB", &[50.0, 48.0, 45.0, 46.0, 47.0, 47.0, 47.0, 47.0]),
            ),
        ]);
        let records = vec![
            signal("a1", "AAA", 0, Pos),
            signal("a2", "AAA", 1, Pos), // open long until day 2: ignored
            signal("a3", "AAA", 3, Neg),
            signal("b1", "BBB", 0, Pos),
            signal("b2", "BBB", 1, Neg), // open long until day 2: ignored
            signal("b3", "BBB", 5, Neu),
        ];
        let cfg = BacktestConfig { hold_days: 2, mode: BacktestMode::LongShort };
        let result = backtest(&records, &prices, &cfg).unwrap();

        let a = &result.per_stock["AAA"];
        assert_eq!(a.trades.len(), 2);
        assert_eq!(a.trades[0].direction, TradeDirection::Long);
        assert_eq!(a.trades[0].entry_close, 100.0);
        assert_eq!(a.trades[0].exit_close, 110.0);
        assert_eq!(a.trades[1].direction, TradeDirection::Short);
        assert_eq!(a.trades[1].entry_close, 110.0);
        assert_eq!(a.trades[1].exit_close, 99.0);
        // long 100->110 is +10%, short 110->99 is +10%: 1.1 * 1.1
        assert!((a.final_value - 1.21).abs() < 1e-9);
        assert!((a.crr_pct - 21.0).abs() < 1e-9);

        let b = &result.per_stock["BBB"];
        assert_eq!(b.trades.len(), 1);
        assert!((b.final_value - 0.9).abs() < 1e-9);
        assert!((b.crr_pct - -10.0).abs() < 1e-9);

        assert!((result.avg_crr_pct - 5.5).abs() < 1e-9);
        assert!(result.skipped.is_empty());

        // record order is irrelevant; the backtest sorts internally
        let mut shuffled = records.clone();
        shuffled.reverse();
        shuffled.swap(1, 4);
        assert_eq!(backtest(&shuffled, &prices, &cfg).unwrap(), result);
    }

    #[test]
    fn all_neutral_predictions_conserve_value_exactly() {
        let prices = BTreeMap::from([("AAA".to_string(), series("AAA", &[100.0, 90.0, 80.0]))]);
        let records =
            vec![signal("a1", "AAA", 0, Neu), signal("a2", "AAA", 1, Neu)];
        let result = backtest(&records, &prices, &BacktestConfig::default()).unwrap();
        let a = &result.per_stock["AAA"];
        assert_eq!(a.final_value, a.initial_value);
        assert_eq!(a.crr_pct, 0.0);
        assert_eq!(result.avg_crr_pct, 0.0);
        assert!(a.trades.is_empty());
    }

    #[test]
    fn single_long_trade_returns_ten_percent() {
        let prices =
            BTreeMap::from([("AAA".to_string(), series("AAA", &[100.0, 101.0, 110.0]))]);
        let records = vec![signal("a1", "AAA", 0, Pos)];
        let cfg = BacktestConfig { hold_days: 2, mode: BacktestMode::LongShort };
        let result = backtest(&records, &prices, &cfg).unwrap();
        assert!((result.per_stock["AAA"].crr_pct - 10.0).abs() < 1e-9);
        assert!((result.avg_crr_pct - 10.0).abs() < 1e-9);
    }

    #[test]
    fn signal_on_exit_date_reopens_same_close() {
        let prices = BTreeMap::from([(
            "AAA".to_string(),
            series("AAA", &[100.0, 105.0, 110.0, 115.0, 121.0]),
        )]);
        let records = vec![signal("a1", "AAA", 0, Pos), signal("a2", "AAA", 2, Pos)];
        let cfg = BacktestConfig { hold_days: 2, mode: BacktestMode::LongShort };
        let result = backtest(&records, &prices, &cfg).unwrap();
        let a = &result.per_stock["AAA"];
        assert_eq!(a.trades.len(), 2);
        assert_eq!(a.trades[1].entry_close, 110.0);
        assert_eq!(a.trades[1].exit_close, 121.0);
        assert!((a.final_value - 1.21).abs() < 1e-9);
    }

    #[test]
    fn missing_bars_skip_the_trade_and_continue() {
        let prices =
            BTreeMap::from([("AAA".to_string(), series("AAA", &[100.0, 101.0, 102.0]))]);
        let records = vec![
            signal("a1", "AAA", 6, Pos),        // no bar on that date
            signal("a2", "AAA", 2, Pos),        // exit would be past the series end
            signal("z1", "ZZZ", 0, Neg),        // unknown symbol
            signal("a3", "AAA", 0, Pos),        // viable: 100 -> 102
        ];
        let cfg = BacktestConfig { hold_days: 2, mode: BacktestMode::LongShort };
        let result = backtest(&records, &prices, &cfg).unwrap();
        assert_eq!(result.skipped.len(), 3);
        let reasons: Vec<&str> = result.skipped.iter().map(|s| s.reason.as_str()).collect();
        assert!(reasons.iter().any(|r| r.contains("no bar")));
        assert!(reasons.iter().any(|r| r.contains("ends before exit")));
        assert!(reasons.iter().any(|r| r.contains("no price series")));
        let a = &result.per_stock["AAA"];
        assert_eq!(a.trades.len(), 1);
        assert!((a.final_value - 1.02).abs() < 1e-9);
    }

    #[test]
    fn avg_crr_identities() {
        let stock = |symbol: &str, fin: f64| StockResult {
            symbol: symbol.to_string(),
            initial_value: 1.0,
            final_value: fin,
            crr_pct: (fin - 1.0) * 100.0,
            trades: Vec::new(),
        };
        let balanced = BTreeMap::from([
            ("A".to_string(), stock("A", 1.10)),
            ("B".to_string(), stock("B", 0.90)),
        ]);
        assert!(avg_crr(&balanced).unwrap().abs() < 1e-12);
        let single = BTreeMap::from([("A".to_string(), stock("A", 1.095))]);
        assert!((avg_crr(&single).unwrap() - 9.5).abs() < 1e-9);
        assert_eq!(avg_crr(&BTreeMap::new()).unwrap_err(), EvalError::EmptyInput);

        // with equal initial values the aggregate equals the mean of CRRs
        let finals = [1.31, 0.77, 1.02, 1.0, 0.5];
        let map: BTreeMap<String, StockResult> = finals
            .iter()
            .enumerate()
            .map(|(i, &f)| (format!("S{i}"), stock(&format!("S{i}"), f)))
            .collect();
        let mean: f64 = map.values().map(|s| s.crr_pct).sum::<f64>() / finals.len() as f64;
        assert!((avg_crr(&map).unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn backtest_rejects_bad_input() {
        let prices = BTreeMap::new();
        assert_eq!(
            backtest(&[], &prices, &BacktestConfig::default()).unwrap_err(),
            EvalError::EmptyInput
        );
        let cfg = BacktestConfig { hold_days: 0, mode: BacktestMode::LongShort };
        assert!(matches!(
            backtest(&[rec("a", Pos, Pos)], &prices, &cfg).unwrap_err(),
            EvalError::BadConfig(_)
        ));
    }

    fn sentiment_strategy() -> impl Strategy<Value = Sentiment> {
        prop_oneof![Just(Neg), Just(Neu), Just(Pos)]
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval(
            labels in prop::collection::vec((sentiment_strategy(), sentiment_strategy()), 1..80)
        ) {
            let records: Vec<PredictionRecord> = labels
                .iter()
                .enumerate()
                .map(|(i, &(gold, pred))| rec(&format!("e{i}"), gold, pred))
                .collect();
            let acc = accuracy(&records).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            let cm = ConfusionMatrix::from_records(&records);
            prop_assert_eq!(cm.total() as usize, records.len());
            for mode in [F1Mode::MacroAll, F1Mode::Weighted] {
                let f1 = f1_scores(&records, mode).unwrap();
                prop_assert!((0.0..=1.0).contains(&f1), "{:?} gave {}", mode, f1);
            }
            if let Ok(f1) = f1_scores(&records, F1Mode::MacroWoNeutral) {
                prop_assert!((0.0..=1.0).contains(&f1));
            }
        }
    }
}
