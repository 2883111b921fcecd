//! Scoring, down-selection and combination of per-map predictions.

use std::io::Write;

use crate::error::{Error, Result};
use crate::regress::LinearModel;
use crate::stats::pearson;
use crate::timeseries::format_float;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub model: LinearModel,
    /// Correlation with observations on the selection window;
    /// `-inf` when the model's predictions there have zero variance.
    pub select_corr: f64,
}

/// Models ranked by selection-window correlation, best first, with the
/// number of leading entries that survived down-selection.
///
/// Down-selection only ever shrinks the kept prefix; dropped models stay in
/// `entries` so the full ranking can still be reported.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    entries: Vec<ScoredModel>,
    kept: usize,
}

impl ScoredPool {
    pub fn entries(&self) -> &[ScoredModel] {
        &self.entries
    }

    /// Surviving models, best first.
    pub fn kept(&self) -> &[ScoredModel] {
        &self.entries[..self.kept]
    }

    pub fn kept_len(&self) -> usize {
        self.kept
    }

    pub fn is_empty(&self) -> bool {
        self.kept == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionRule {
    /// Keep the best `ceil(q * n)` of the `n` scored models.
    TopFraction(f64),
    /// Keep every model whose selection correlation is at least `r_t`.
    /// `r_t = -1` keeps everything, including zero-variance predictors.
    MinCorr(f64),
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionRule::TopFraction(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::invalid(format!("selection fraction {q} not in (0, 1]")))
            }
            SelectionRule::MinCorr(r) if !(-1.0..=1.0).contains(&r) => {
                Err(Error::invalid(format!("minimum correlation {r} not in [-1, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Scores each model by Pearson correlation of its selection-window
/// predictions with `observed`, and ranks them.
pub fn score_models(
    models: Vec<LinearModel>,
    predictions: &[Vec<f64>],
    observed: &[f64],
) -> Result<ScoredPool> {
    if models.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            found: predictions.len(),
        });
    }
    let mut entries = Vec::with_capacity(models.len());
    for (model, pred) in models.into_iter().zip(predictions) {
        if pred.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                expected: observed.len(),
                found: pred.len(),
            });
        }
        let select_corr = pearson(pred, observed).unwrap_or(f64::NEG_INFINITY);
        entries.push(ScoredModel { model, select_corr });
    }
    entries.sort_by(|a, b| {
        b.select_corr
            .total_cmp(&a.select_corr)
            .then(a.model.map_id.cmp(&b.model.map_id))
    });
    let kept = entries.len();
    Ok(ScoredPool { entries, kept })
}

/// `ceil(q * n)` without letting representation error in `q * n` round up.
fn top_count(q: f64, n: usize) -> usize {
    let raw = q * n as f64;
    let nearest = raw.round();
    let count = if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    (count as usize).clamp(1, n)
}

pub fn downselect(pool: &ScoredPool, rule: &SelectionRule) -> Result<ScoredPool> {
    rule.validate()?;
    if pool.entries.is_empty() {
        return Err(Error::invalid("cannot down-select an empty pool"));
    }
    let limit = match *rule {
        SelectionRule::TopFraction(q) => top_count(q, pool.entries.len()),
        SelectionRule::MinCorr(r) if r <= -1.0 => pool.entries.len(),
        SelectionRule::MinCorr(r) => pool.entries.iter().take_while(|e| e.select_corr >= r).count(),
    };
    let kept = limit.min(pool.kept);
    if kept == 0 {
        let r_t = match *rule {
            SelectionRule::MinCorr(r) => r,
            SelectionRule::TopFraction(_) => f64::NAN,
        };
        return Err(Error::EmptySelection { r_t });
    }
    Ok(ScoredPool {
        entries: pool.entries.clone(),
        kept,
    })
}

/// Mean after dropping `floor(trim * m)` values from each tail.
pub fn trimmed_mean_prediction(values: &[f64], trim: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("trimmed mean of no values"));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::invalid(format!("trim fraction {trim} not in [0, 0.5)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let raw = trim * m as f64;
    let cut = if (raw - raw.round()).abs() <= 1e-9 { raw.round() } else { raw.floor() } as usize;
    let kept = &sorted[cut..m - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Mean of the `floor(sqrt(n))` best-ranked kept models.
/// `predictions` follows the order of `pool.kept()`.
pub fn sqrt_n_best_average(pool: &ScoredPool, predictions: &[f64]) -> Result<f64> {
    let n = pool.kept_len();
    if n == 0 {
        return Err(Error::invalid("empty pool"));
    }
    if predictions.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: predictions.len(),
        });
    }
    let k = isqrt(n).max(1);
    Ok(predictions[..k].iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Combiner {
    TrimmedMean { trim: f64 },
    SqrtNBest,
}

impl Default for Combiner {
    fn default() -> Self {
        Combiner::TrimmedMean { trim: 0.2 }
    }
}

impl Combiner {
    /// Combines one time step; `predictions` follows `pool.kept()` order.
    pub fn combine(&self, pool: &ScoredPool, predictions: &[f64]) -> Result<f64> {
        match *self {
            Combiner::TrimmedMean { trim } => trimmed_mean_prediction(predictions, trim),
            Combiner::SqrtNBest => sqrt_n_best_average(pool, predictions),
        }
    }
}

/// CSV with columns `map_id,method,select_corr,kept_flag` in rank order.
pub fn write_pool_csv<W: Write>(pool: &ScoredPool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["map_id", "method", "select_corr", "kept_flag"])?;
    for (i, e) in pool.entries.iter().enumerate() {
        w.write_record([
            e.model.map_id.to_string(),
            e.model.method.to_string(),
            format_float(e.select_corr),
            u8::from(i < pool.kept).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
