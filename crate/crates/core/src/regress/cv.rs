use nalgebra::DMatrix;

use super::lars::lars_path;
use super::model::{FitMethod, LinearModel};
use super::ols::{check_design, column_means, ols_coefficients};
use crate::error::{Error, Result};

/// Path fractions 0, 0.05, ..., 1.0.
pub const FRACTION_GRID_POINTS: usize = 21;

/// Cross-validation knobs for [`fit_lars_cv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CvSettings {
    pub folds: usize,
    pub fractions: Vec<f64>,
    pub shrink_factors: Vec<f64>,
}

impl CvSettings {
    pub fn with_folds(folds: usize) -> Self {
        CvSettings {
            folds,
            fractions: (0..FRACTION_GRID_POINTS)
                .map(|i| i as f64 / (FRACTION_GRID_POINTS - 1) as f64)
                .collect(),
            shrink_factors: (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings::with_folds(10)
    }
}

/// Contiguous block boundaries; block `b` is `bounds[b]..bounds[b + 1]`.
fn fold_bounds(n: usize, folds: usize) -> Vec<usize> {
    (0..=folds).map(|b| b * n / folds).collect()
}

fn split(x: &DMatrix<f64>, y: &[f64], hold: std::ops::Range<usize>) -> (DMatrix<f64>, Vec<f64>) {
    let keep: Vec<usize> = (0..y.len()).filter(|r| !hold.contains(r)).collect();
    let xt = DMatrix::from_fn(keep.len(), x.ncols(), |r, c| x[(keep[r], c)]);
    let yt = keep.iter().map(|&r| y[r]).collect();
    (xt, yt)
}

fn held_out_sse(x: &DMatrix<f64>, y: &[f64], hold: &std::ops::Range<usize>, intercept: f64, beta: &[f64]) -> f64 {
    hold.clone()
        .map(|r| {
            let pred = intercept + beta.iter().enumerate().map(|(j, b)| x[(r, j)] * b).sum::<f64>();
            (y[r] - pred) * (y[r] - pred)
        })
        .sum()
}

fn first_min(errors: &[f64]) -> usize {
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    best
}

/// Least-angle fit at the path fraction chosen by blocked cross-validation.
///
/// Folds are contiguous row blocks so that serially dependent rows are not
/// split between training and validation. If the chosen fraction keeps no
/// variable, the least-squares coefficients are instead shrunk by a single
/// factor, also chosen by cross-validation.
pub fn fit_lars_cv(x: &DMatrix<f64>, y: &[f64], settings: &CvSettings) -> Result<LinearModel> {
    check_design(x, y, 3)?;
    let n = y.len();
    let folds = settings.folds;
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    if n < folds {
        return Err(Error::insufficient(format!(
            "{n} rows is too few for {folds} folds"
        )));
    }
    let bounds = fold_bounds(n, folds);
    let holds: Vec<_> = (0..folds).map(|b| bounds[b]..bounds[b + 1]).collect();

    let mut path_sse = vec![0.0; settings.fractions.len()];
    for hold in &holds {
        let (xt, yt) = split(x, y, hold.clone());
        let path = lars_path(&xt, &yt)?;
        let norms = path.l1_norms();
        for (i, &f) in settings.fractions.iter().enumerate() {
            let (b0, b) = path.at_fraction_with(&norms, f);
            path_sse[i] += held_out_sse(x, y, hold, b0, &b);
        }
    }
    let best = first_min(&path_sse);
    let path = lars_path(x, y)?;
    let (b0, beta) = path.at_fraction(settings.fractions[best]);
    if beta.iter().any(|b| *b != 0.0) {
        return Ok(LinearModel::finish(b0, beta, FitMethod::LarsCv, 1.0, x, y));
    }

    let mut shrink_sse = vec![0.0; settings.shrink_factors.len()];
    for hold in &holds {
        let (xt, yt) = split(x, y, hold.clone());
        let (_, beta) = ols_coefficients(&xt, &yt)?;
        let means = column_means(&xt);
        let y_mean = yt.iter().sum::<f64>() / yt.len() as f64;
        let slope_at_mean: f64 = means.iter().zip(&beta).map(|(m, b)| m * b).sum();
        for (i, &c) in settings.shrink_factors.iter().enumerate() {
            let scaled: Vec<f64> = beta.iter().map(|b| b * c).collect();
            shrink_sse[i] += held_out_sse(x, y, hold, y_mean - c * slope_at_mean, &scaled);
        }
    }
    let c = settings.shrink_factors[first_min(&shrink_sse)];
    let (_, beta) = ols_coefficients(x, y)?;
    let means = column_means(x);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let intercept = y_mean - c * means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    Ok(LinearModel::finish(intercept, beta, FitMethod::UniformShrink, c, x, y))
}
