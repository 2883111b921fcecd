use std::fmt;
use std::io::Write;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::timeseries::format_float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Position {
    In,
    Out,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Position::In => "IN",
            Position::Out => "OUT",
        })
    }
}

/// Out of the market iff the predicted change is below `threshold`.
/// A non-finite prediction keeps the money in.
pub fn threshold_decision(predicted_change: f64, threshold: f64) -> Position {
    if !predicted_change.is_finite() {
        log::warn!("non-finite prediction {predicted_change}; staying in the market");
        return Position::In;
    }
    if predicted_change < threshold {
        Position::Out
    } else {
        Position::In
    }
}

/// Capital kept after one position change.
pub fn cost_factor(cost_bp: f64) -> f64 {
    1.0 - cost_bp / 10_000.0
}

/// What happens on one step, before accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub step: usize,
    pub date: Option<NaiveDate>,
    pub prediction: f64,
    /// Position held over this step.
    pub position: Position,
    /// Index level ratio over this step.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub step: usize,
    pub date: Option<NaiveDate>,
    pub prediction: f64,
    pub position: Position,
    pub index_return: f64,
    /// Gross of costs: the index return when in, zero when out.
    pub strategy_return: f64,
    pub trade: bool,
    /// Capital multiple after this step, net of costs.
    pub capital: f64,
    /// Net capital ratio over this step.
    pub step_multiple: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeLedger {
    pub rows: Vec<LedgerRow>,
    pub cost_bp: f64,
}

impl TradeLedger {
    pub fn final_capital(&self) -> f64 {
        self.rows.last().map_or(1.0, |r| r.capital)
    }

    pub fn trades(&self) -> usize {
        self.rows.iter().filter(|r| r.trade).count()
    }

    /// CSV with columns
    /// `step,date,prediction,position,index_return,strategy_return,trade,capital`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "step",
            "date",
            "prediction",
            "position",
            "index_return",
            "strategy_return",
            "trade",
            "capital",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.date.map(|d| d.to_string()).unwrap_or_default(),
                format_float(r.prediction),
                r.position.to_string(),
                format_float(r.index_return),
                format_float(r.strategy_return),
                u8::from(r.trade).to_string(),
                format_float(r.capital),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn check_cost(cost_bp: f64) -> Result<()> {
    if !(0.0..10_000.0).contains(&cost_bp) {
        return Err(Error::invalid(format!("cost_bp must be in [0, 10000), got {cost_bp}")));
    }
    Ok(())
}

/// Sequential capital accounting starting from capital 1.
///
/// On each step the trade cost (if the position differs from the previous
/// one) is charged first, then the index growth is applied when in.
/// `prior` is the position held before the first step.
pub fn build_ledger(inputs: &[StepInput], cost_bp: f64, prior: Position) -> Result<TradeLedger> {
    check_cost(cost_bp)?;
    let keep = cost_factor(cost_bp);
    let mut capital = 1.0;
    let mut previous = prior;
    let mut rows = Vec::with_capacity(inputs.len());
    for s in inputs {
        if !(s.growth.is_finite() && s.growth > 0.0) {
            return Err(Error::invalid(format!(
                "index growth at step {} must be positive, got {}",
                s.step, s.growth
            )));
        }
        let trade = s.position != previous;
        let mut step_multiple = 1.0;
        if trade {
            capital *= keep;
            step_multiple *= keep;
        }
        let index_return = s.growth - 1.0;
        let strategy_return = match s.position {
            Position::In => {
                capital *= s.growth;
                step_multiple *= s.growth;
                index_return
            }
            Position::Out => 0.0,
        };
        rows.push(LedgerRow {
            step: s.step,
            date: s.date,
            prediction: s.prediction,
            position: s.position,
            index_return,
            strategy_return,
            trade,
            capital,
            step_multiple,
        });
        previous = s.position;
    }
    Ok(TradeLedger { rows, cost_bp })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedRow {
    pub step: usize,
    pub date: Option<NaiveDate>,
    /// Share of paths in the market over this step.
    pub fraction_in: f64,
    pub index_return: f64,
    /// Mean across paths of the net simple return over this step.
    pub strategy_return: f64,
    pub capital: f64,
    pub index_capital: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedLedger {
    pub rows: Vec<AveragedRow>,
}

impl AveragedLedger {
    pub fn final_capital(&self) -> f64 {
        self.rows.last().map_or(1.0, |r| r.capital)
    }

    pub fn final_index_capital(&self) -> f64 {
        self.rows.last().map_or(1.0, |r| r.index_capital)
    }

    pub fn strategy_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.strategy_return).collect()
    }

    pub fn index_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.index_return).collect()
    }

    /// CSV with columns
    /// `step,date,fraction_in,index_return,strategy_return,capital,index_capital`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "step",
            "date",
            "fraction_in",
            "index_return",
            "strategy_return",
            "capital",
            "index_capital",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.date.map(|d| d.to_string()).unwrap_or_default(),
                format_float(r.fraction_in),
                format_float(r.index_return),
                format_float(r.strategy_return),
                format_float(r.capital),
                format_float(r.index_capital),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Averages per-step net returns across aligned path ledgers, then compounds.
pub fn average_ledgers(paths: &[TradeLedger]) -> Result<AveragedLedger> {
    let first = paths.first().ok_or_else(|| Error::invalid("no ledgers to average"))?;
    let n = first.rows.len();
    for p in paths {
        if p.rows.len() != n || p.rows.iter().zip(&first.rows).any(|(a, b)| a.step != b.step) {
            return Err(Error::invalid("path ledgers are not aligned on the same steps"));
        }
    }
    let m = paths.len() as f64;
    let mut capital = 1.0;
    let mut index_capital = 1.0;
    let mut rows = Vec::with_capacity(n);
    for (i, base) in first.rows.iter().enumerate() {
        let mean_ret = paths.iter().map(|p| p.rows[i].step_multiple - 1.0).sum::<f64>() / m;
        let n_in = paths.iter().filter(|p| p.rows[i].position == Position::In).count();
        capital *= 1.0 + mean_ret;
        index_capital *= 1.0 + base.index_return;
        rows.push(AveragedRow {
            step: base.step,
            date: base.date,
            fraction_in: n_in as f64 / m,
            index_return: base.index_return,
            strategy_return: mean_ret,
            capital,
            index_capital,
        });
    }
    Ok(AveragedLedger { rows })
}
