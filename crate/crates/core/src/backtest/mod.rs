//! Threshold trading on ensemble predictions, walked forward over an index
//! with multi-path averaging, trade costs and performance metrics.

mod ledger;
mod metrics;

use std::io::Write;
use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;

pub use ledger::{
    average_ledgers, build_ledger, cost_factor, threshold_decision, AveragedLedger, AveragedRow, LedgerRow, Position,
    StepInput, TradeLedger,
};
pub use metrics::{binomial_upper_tail, decadal_excess, gain, sharpe_decadal, sharpe_from_excess, sign_test, SharpeRatio};

use crate::ensemble::SelectionRule;
use crate::error::{Error, Result};
use crate::forecast::{forecast_window, window_seed, ForecastConfig};
use crate::timeseries::{difference_all, format_float, walk_forward_windows, Differencing, SeriesFrame, Window, WindowPlan};

/// Total training era (fit plus select) in years.
pub const TRAINING_YEARS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    /// Map sampling, fitting, selection and combination. The target is the
    /// traded index column, predicted one step ahead in differenced units.
    pub forecast: ForecastConfig,
    pub differencing: Differencing,
    pub steps_per_year: usize,
    pub fit_years: usize,
    pub select_years: usize,
    pub test_years: usize,
    pub paths: usize,
    pub cost_bp: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fit_years == 0 || self.select_years == 0 || self.fit_years + self.select_years != TRAINING_YEARS {
            return Err(Error::Config(format!(
                "fit_years + select_years must equal {TRAINING_YEARS} with both positive, got {} + {}",
                self.fit_years, self.select_years
            )));
        }
        if self.test_years == 0 || self.steps_per_year == 0 {
            return Err(Error::Config("test_years and steps_per_year must be positive".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.forecast.lead != 1 {
            return Err(Error::Config(format!(
                "trading decisions need one-step-ahead predictions, got lead {}",
                self.forecast.lead
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        self.forecast.selection.validate()
    }

    pub fn plan(&self) -> WindowPlan {
        WindowPlan::tiled(
            self.fit_years * self.steps_per_year,
            self.select_years * self.steps_per_year,
            self.test_years * self.steps_per_year,
        )
    }

    pub fn steps_per_decade(&self) -> usize {
        10 * self.steps_per_year
    }
}

struct Prepared {
    changes: SeriesFrame,
    /// Index level ratio at each row of `changes`.
    growth: Vec<f64>,
}

fn prepare(levels: &SeriesFrame, cfg: &BacktestConfig) -> Result<Prepared> {
    let mut names = cfg.forecast.variables.clone();
    if !names.contains(&cfg.forecast.target) {
        names.push(cfg.forecast.target.clone());
    }
    let index = levels.column(&cfg.forecast.target)?;
    if let Some((row, v)) = index.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(Error::invalid(format!(
            "index `{}` must have positive levels, found {v} at row {row}",
            cfg.forecast.target
        )));
    }
    let changes = difference_all(&levels.select(&names)?, cfg.differencing)?;
    let growth = index.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(Prepared { changes, growth })
}

fn window_inputs(data: &Prepared, window: &Window, cfg: &BacktestConfig, seed: u64) -> Result<Vec<StepInput>> {
    let fc = forecast_window(&data.changes, window, &cfg.forecast, seed)?;
    Ok(fc
        .test_rows
        .clone()
        .zip(&fc.predictions)
        .map(|(row, &prediction)| StepInput {
            step: data.changes.step(row),
            date: data.changes.date_at(row),
            prediction,
            position: threshold_decision(prediction, cfg.threshold),
            growth: data.growth[row],
        })
        .collect())
}

/// Trades one window with maps sampled under `path_seed`, starting in the
/// market. `window` indexes rows of the differenced frame, which is one row
/// shorter than `levels`.
pub fn run_path(levels: &SeriesFrame, window: &Window, cfg: &BacktestConfig, path_seed: u64) -> Result<TradeLedger> {
    cfg.validate()?;
    let data = prepare(levels, cfg)?;
    build_ledger(&window_inputs(&data, window, cfg, path_seed)?, cfg.cost_bp, Position::In)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub start_step: usize,
    pub start_date: Option<NaiveDate>,
    /// Rows of the ledgers covered by this window.
    pub rows: Range<usize>,
    pub strategy_multiple: f64,
    pub index_multiple: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallMetrics {
    pub strategy_multiple: f64,
    pub index_multiple: f64,
    pub gain: f64,
    /// `None` with fewer than two complete decades.
    pub sharpe_decadal: Option<SharpeRatio>,
    /// `None` when every window ties with the index.
    pub sign_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub paths: Vec<TradeLedger>,
    pub averaged: AveragedLedger,
    pub windows: Vec<WindowMetrics>,
    pub overall: OverallMetrics,
}

/// Walk-forward backtest over every window the plan fits, averaged over
/// `cfg.paths` paths seeded `seed, seed + 1, ...`.
pub fn run_backtest(levels: &SeriesFrame, cfg: &BacktestConfig) -> Result<BacktestResult> {
    cfg.validate()?;
    let data = prepare(levels, cfg)?;
    let windows = walk_forward_windows(data.changes.len(), &cfg.plan())?;

    let jobs: Vec<(usize, usize)> = (0..cfg.paths)
        .flat_map(|p| (0..windows.len()).map(move |w| (p, w)))
        .collect();
    let pieces: Vec<Vec<StepInput>> = jobs
        .par_iter()
        .map(|&(p, w)| {
            let path_seed = cfg.seed.wrapping_add(p as u64);
            window_inputs(&data, &windows[w], cfg, window_seed(path_seed, w))
        })
        .collect::<Result<_>>()?;

    let paths: Vec<TradeLedger> = pieces
        .chunks(windows.len())
        .map(|chunk| build_ledger(&chunk.concat(), cfg.cost_bp, Position::In))
        .collect::<Result<_>>()?;
    let averaged = average_ledgers(&paths)?;

    let mut window_metrics = Vec::with_capacity(windows.len());
    let mut offset = 0;
    for w in &windows {
        let rows = offset..offset + w.test.len();
        offset = rows.end;
        let slice = &averaged.rows[rows.clone()];
        let strategy_multiple = slice.iter().fold(1.0, |c, r| c * (1.0 + r.strategy_return));
        let index_multiple = slice.iter().fold(1.0, |c, r| c * (1.0 + r.index_return));
        window_metrics.push(WindowMetrics {
            start_step: slice[0].step,
            start_date: slice[0].date,
            rows,
            strategy_multiple,
            index_multiple,
            gain: gain(strategy_multiple, index_multiple)?,
        });
    }

    let strategy_multiple = averaged.final_capital();
    let index_multiple = averaged.final_index_capital();
    let sharpe = match sharpe_decadal(&averaged.strategy_returns(), &averaged.index_returns(), cfg.steps_per_decade()) {
        Ok(s) => Some(s),
        Err(Error::InsufficientData(msg)) => {
            log::info!("decadal Sharpe ratio skipped: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let sm: Vec<f64> = window_metrics.iter().map(|m| m.strategy_multiple).collect();
    let im: Vec<f64> = window_metrics.iter().map(|m| m.index_multiple).collect();
    let sign_p = sign_test(&sm, &im).ok();
    Ok(BacktestResult {
        paths,
        averaged,
        windows: window_metrics,
        overall: OverallMetrics {
            strategy_multiple,
            index_multiple,
            gain: gain(strategy_multiple, index_multiple)?,
            sharpe_decadal: sharpe,
            sign_p,
        },
    })
}

fn rule_parameter(rule: &SelectionRule) -> f64 {
    match *rule {
        SelectionRule::TopFraction(q) => q,
        SelectionRule::MinCorr(r) => r,
    }
}

pub const METRICS_HEADER: [&str; 10] = [
    "index",
    "fit_years",
    "q",
    "cost_bp",
    "window_start",
    "strategy_multiple",
    "index_multiple",
    "gain",
    "sharpe_decadal",
    "sign_p",
];

/// Appends one row per window plus an overall row (`window_start = all`).
/// Writes no header; see [`METRICS_HEADER`].
pub fn write_metrics_rows<W: Write>(w: &mut csv::Writer<W>, result: &BacktestResult, cfg: &BacktestConfig) -> Result<()> {
    let index = cfg.forecast.target.as_str();
    let fit = cfg.fit_years.to_string();
    let q = format_float(rule_parameter(&cfg.forecast.selection));
    let cost = format_float(cfg.cost_bp);
    for m in &result.windows {
        let start = m.start_date.map(|d| d.to_string()).unwrap_or_else(|| m.start_step.to_string());
        w.write_record([
            index,
            &fit,
            &q,
            &cost,
            &start,
            &format_float(m.strategy_multiple),
            &format_float(m.index_multiple),
            &format_float(m.gain),
            "",
            "",
        ])?;
    }
    let o = &result.overall;
    w.write_record([
        index,
        &fit,
        &q,
        &cost,
        "all",
        &format_float(o.strategy_multiple),
        &format_float(o.index_multiple),
        &format_float(o.gain),
        &o.sharpe_decadal.map(|s| format_float(s.value())).unwrap_or_default(),
        &o.sign_p.map(format_float).unwrap_or_default(),
    ])?;
    Ok(())
}

pub fn write_metrics_csv<W: Write>(writer: W, result: &BacktestResult, cfg: &BacktestConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    write_metrics_rows(&mut w, result, cfg)?;
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
