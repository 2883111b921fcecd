//! One walk-forward window of the multiview pipeline: sample delay maps,
//! fit a model per map on the fit range, rank and down-select on the
//! selection range, and combine the survivors over the test range.

use std::ops::Range;

use rayon::prelude::*;

use crate::backtest::threshold_decision;
use crate::embedding::{
    build_universe, materialize_range, sample_disjoint_partitions, sample_random_maps, DelayMap, MapTarget,
};
use crate::ensemble::{downselect, score_models, Combiner, ScoredPool, SelectionRule};
use crate::error::{Error, Result};
use crate::regress::{fit_lars_cv, fit_ols, predict, CvSettings, LinearModel};
use crate::stats::{mean, pearson};
use crate::timeseries::{walk_forward_windows, SeriesFrame, Window, WindowPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Random disjoint partitions of the coordinate universe.
    Disjoint { partitions: usize },
    /// Independently drawn maps.
    Random { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitKind {
    Ols,
    LarsCv(CvSettings),
}

impl FitKind {
    pub fn fit(&self, x: &nalgebra::DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
        match self {
            FitKind::Ols => fit_ols(x, y),
            FitKind::LarsCv(s) => fit_lars_cv(x, y, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub variables: Vec<String>,
    pub max_lag: usize,
    pub k: usize,
    pub sampling: Sampling,
    pub target: String,
    pub lead: usize,
    pub fit: FitKind,
    pub selection: SelectionRule,
    pub combiner: Combiner,
}

impl ForecastConfig {
    /// First frame row at which every possible map has full history.
    pub fn first_target_row(&self) -> usize {
        self.max_lag + self.lead - 1
    }

    pub fn map_target(&self) -> Result<MapTarget> {
        MapTarget::new(self.target.clone(), self.lead)
    }
}

pub fn sample_maps(cfg: &ForecastConfig, seed: u64) -> Result<Vec<DelayMap>> {
    let universe = build_universe(&cfg.variables, cfg.max_lag)?;
    let target = cfg.map_target()?;
    match cfg.sampling {
        Sampling::Disjoint { partitions } => sample_disjoint_partitions(&universe, cfg.k, partitions, &target, seed),
        Sampling::Random { count } => sample_random_maps(&universe, cfg.k, count, &target, seed),
    }
}

/// Map-sampling seed for window `w` of a run seeded `seed`; window 0 uses
/// `seed` itself.
pub fn window_seed(seed: u64, w: usize) -> u64 {
    seed.wrapping_add((w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Outcome of one window.
#[derive(Debug, Clone)]
pub struct WindowForecast {
    pub maps: Vec<DelayMap>,
    pub pool: ScoredPool,
    /// Frame rows of the test targets.
    pub test_rows: Range<usize>,
    /// Step stamps of the test targets.
    pub test_times: Vec<usize>,
    pub observed: Vec<f64>,
    pub predictions: Vec<f64>,
}

struct MapFit {
    model: LinearModel,
    select_pred: Vec<f64>,
    test_pred: Vec<f64>,
}

fn clip_fit_rows(window: &Window, cfg: &ForecastConfig) -> Result<Range<usize>> {
    let start = window.fit.start.max(cfg.first_target_row());
    if start + 2 > window.fit.end {
        return Err(Error::insufficient(format!(
            "fit range {:?} leaves fewer than 2 rows after {} rows of lag history",
            window.fit,
            cfg.first_target_row()
        )));
    }
    Ok(start..window.fit.end)
}

/// Runs one window with maps sampled under `seed`.
pub fn forecast_window(frame: &SeriesFrame, window: &Window, cfg: &ForecastConfig, seed: u64) -> Result<WindowForecast> {
    let maps = sample_maps(cfg, seed)?;
    forecast_window_with_maps(frame, window, cfg, maps)
}

pub fn forecast_window_with_maps(
    frame: &SeriesFrame,
    window: &Window,
    cfg: &ForecastConfig,
    maps: Vec<DelayMap>,
) -> Result<WindowForecast> {
    if window.test.end > frame.len() {
        return Err(Error::insufficient(format!(
            "window test range {:?} exceeds frame of {} rows",
            window.test,
            frame.len()
        )));
    }
    if maps.is_empty() {
        return Err(Error::invalid("no delay maps to fit"));
    }
    let fit_rows = clip_fit_rows(window, cfg)?;
    let target = frame.column(&cfg.target)?;

    let fits: Vec<MapFit> = maps
        .par_iter()
        .map(|map| {
            let fit = materialize_range(frame, map, fit_rows.clone())?;
            let model = cfg.fit.fit(&fit.x, &fit.y)?.with_map_id(map.id);
            let sel = materialize_range(frame, map, window.select.clone())?;
            let test = materialize_range(frame, map, window.test.clone())?;
            Ok(MapFit {
                select_pred: predict(&model, &sel.x)?,
                test_pred: predict(&model, &test.x)?,
                model,
            })
        })
        .collect::<Result<_>>()?;

    let observed_sel = &target[window.select.clone()];
    let (models, rest): (Vec<_>, Vec<_>) = fits
        .into_iter()
        .map(|f| (f.model, (f.select_pred, f.test_pred)))
        .unzip();
    let (select_preds, test_preds): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
    let pool = score_models(models, &select_preds, observed_sel)?;
    let pool = downselect(&pool, &cfg.selection)?;

    // Row of each kept model inside `test_preds` (maps are indexed by id).
    let index_of: Vec<usize> = pool
        .kept()
        .iter()
        .map(|e| maps.iter().position(|m| m.id == e.model.map_id).expect("model from known map"))
        .collect();
    let mut members = vec![0.0; index_of.len()];
    let predictions = (0..window.test.len())
        .map(|t| {
            for (m, &i) in members.iter_mut().zip(&index_of) {
                *m = test_preds[i][t];
            }
            cfg.combiner.combine(&pool, &members)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(WindowForecast {
        maps,
        pool,
        test_rows: window.test.clone(),
        test_times: window.test.clone().map(|r| frame.step(r)).collect(),
        observed: target[window.test.clone()].to_vec(),
        predictions,
    })
}

/// Every window of `plan` over `frame`, window `w` sampling maps under
/// [`window_seed`]`(seed, w)`.
pub fn walk_forward(frame: &SeriesFrame, plan: &WindowPlan, cfg: &ForecastConfig, seed: u64) -> Result<Vec<WindowForecast>> {
    walk_forward_windows(frame.len(), plan)?
        .iter()
        .enumerate()
        .map(|(w, window)| forecast_window(frame, window, cfg, window_seed(seed, w)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub windows: usize,
    pub test_points: usize,
    /// Correlation over all test points pooled.
    pub test_corr: Option<f64>,
    /// Mean of the per-window correlations; windows with an undefined
    /// correlation are skipped.
    pub mean_window_corr: Option<f64>,
    /// Share of test points where the predicted and observed changes fall
    /// on the same side of zero.
    pub sign_accuracy: f64,
}

/// When `differenced`, predictions already are changes; otherwise changes
/// are measured from the last target value known at prediction time.
pub fn summarize(frame: &SeriesFrame, forecasts: &[WindowForecast], cfg: &ForecastConfig, differenced: bool) -> Result<ForecastSummary> {
    let target = frame.column(&cfg.target)?;
    let mut pred = Vec::new();
    let mut obs = Vec::new();
    let mut hits = 0usize;
    let mut window_corrs = Vec::new();
    for fc in forecasts {
        if let Some(c) = pearson(&fc.predictions, &fc.observed) {
            window_corrs.push(c);
        }
        for ((row, p), o) in fc.test_rows.clone().zip(&fc.predictions).zip(&fc.observed) {
            let base = if differenced { 0.0 } else { target[row - cfg.lead] };
            if threshold_decision(p - base, 0.0) == threshold_decision(o - base, 0.0) {
                hits += 1;
            }
        }
        pred.extend_from_slice(&fc.predictions);
        obs.extend_from_slice(&fc.observed);
    }
    Ok(ForecastSummary {
        windows: forecasts.len(),
        test_points: pred.len(),
        test_corr: pearson(&pred, &obs),
        mean_window_corr: (!window_corrs.is_empty()).then(|| mean(&window_corrs)),
        sign_accuracy: if pred.is_empty() { f64::NAN } else { hits as f64 / pred.len() as f64 },
    })
}

/// One seed of the disjoint-versus-random comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPair {
    pub seed: u64,
    pub n_maps: usize,
    pub disjoint_corr: f64,
    pub random_corr: f64,
}

impl SamplingPair {
    pub fn disjoint_wins(&self) -> bool {
        self.disjoint_corr >= self.random_corr
    }
}

/// Maps produced by `partitions` disjoint partitions of the universe.
pub fn disjoint_map_count(cfg: &ForecastConfig, partitions: usize) -> usize {
    let universe = cfg.variables.len() * cfg.max_lag;
    partitions * (universe / cfg.k)
}

/// Runs disjoint-partition and random sampling with equal map counts under
/// each seed and reports the mean per-window test correlation of each.
/// Only map sampling depends on the seed.
pub fn compare_sampling(
    frame: &SeriesFrame,
    plan: &WindowPlan,
    cfg: &ForecastConfig,
    partitions: usize,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<SamplingPair>> {
    let n_maps = disjoint_map_count(cfg, partitions);
    if n_maps == 0 {
        return Err(Error::invalid("the coordinate universe is smaller than one map"));
    }
    let score = |sampling: Sampling, seed: u64| -> Result<f64> {
        let c = ForecastConfig {
            sampling,
            ..cfg.clone()
        };
        let runs = walk_forward(frame, plan, &c, seed)?;
        let corrs: Vec<f64> = runs
            .iter()
            .map(|fc| pearson(&fc.predictions, &fc.observed).unwrap_or(0.0))
            .collect();
        Ok(mean(&corrs))
    };
    seeds
        .map(|seed| {
            Ok(SamplingPair {
                seed,
                n_maps,
                disjoint_corr: score(Sampling::Disjoint { partitions }, seed)?,
                random_corr: score(Sampling::Random { count: n_maps }, seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::{walk_forward_windows, WindowPlan};

    fn ar_frame(n: usize) -> SeriesFrame {
        // x[t] = 0.8 x[t-1] + small deterministic forcing; y follows x with lag 2.
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        for t in 1..n {
            x[t] = 0.8 * x[t - 1] + ((t as f64) * 0.7).sin();
            if t >= 2 {
                y[t] = 0.5 * x[t - 2] + 0.1 * ((t as f64) * 1.3).cos();
            }
        }
        SeriesFrame::new(vec![("x".into(), x), ("y".into(), y)]).unwrap()
    }

    fn config(sampling: Sampling) -> ForecastConfig {
        ForecastConfig {
            variables: vec!["x".into(), "y".into()],
            max_lag: 4,
            k: 2,
            sampling,
            target: "x".into(),
            lead: 1,
            fit: FitKind::Ols,
            selection: SelectionRule::TopFraction(0.5),
            combiner: Combiner::default(),
        }
    }

    #[test]
    fn window_forecast_is_skilful_and_deterministic() {
        let frame = ar_frame(400);
        let w = walk_forward_windows(400, &WindowPlan::tiled(200, 100, 100)).unwrap();
        let cfg = config(Sampling::Disjoint { partitions: 3 });
        let a = forecast_window(&frame, &w[0], &cfg, 1).unwrap();
        assert_eq!(a.maps.len(), 12);
        assert_eq!(a.pool.kept_len(), 6);
        assert_eq!(a.predictions.len(), 100);
        let corr = crate::stats::pearson(&a.predictions, &a.observed).unwrap();
        assert!(corr > 0.8, "corr {corr}");
        let b = forecast_window(&frame, &w[0], &cfg, 1).unwrap();
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn fit_range_too_short_for_lags() {
        let frame = ar_frame(30);
        let w = Window { fit: 0..4, select: 4..10, test: 10..20 };
        assert!(forecast_window(&frame, &w, &config(Sampling::Random { count: 3 }), 0).is_err());
    }

    #[test]
    fn summary_counts_signs() {
        let frame = ar_frame(600);
        let cfg = config(Sampling::Disjoint { partitions: 2 });
        let plan = WindowPlan::tiled(200, 100, 100);
        let runs = walk_forward(&frame, &plan, &cfg, 3).unwrap();
        assert_eq!(runs.len(), 3);
        let s = summarize(&frame, &runs, &cfg, false).unwrap();
        assert_eq!(s.test_points, 300);
        let target = frame.column("x").unwrap();
        let mut hits = 0;
        for fc in &runs {
            for (i, row) in fc.test_rows.clone().enumerate() {
                let up_pred = fc.predictions[i] >= target[row - 1];
                let up_obs = fc.observed[i] >= target[row - 1];
                hits += usize::from(up_pred == up_obs);
            }
        }
        assert_eq!(s.sign_accuracy, hits as f64 / 300.0);
        assert!(s.test_corr.unwrap() > 0.8);
    }

    #[test]
    fn comparison_matches_counts() {
        let frame = ar_frame(400);
        let cfg = config(Sampling::Disjoint { partitions: 1 });
        let plan = WindowPlan::tiled(200, 100, 100);
        let pairs = compare_sampling(&frame, &plan, &cfg, 3, 0..3).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.n_maps == 12));
        assert_eq!(pairs[2].seed, 2);
        assert_eq!(pairs, compare_sampling(&frame, &plan, &cfg, 3, 0..3).unwrap());
    }
}
