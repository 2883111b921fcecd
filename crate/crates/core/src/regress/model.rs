use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::stats::pearson;
use crate::timeseries::format_float;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitMethod {
    Ols,
    LarsCv,
    UniformShrink,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Ols => "OLS",
            FitMethod::LarsCv => "LARS_CV",
            FitMethod::UniformShrink => "UNIFORM_SHRINK",
        })
    }
}

impl FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "OLS" => Ok(FitMethod::Ols),
            "LARS_CV" => Ok(FitMethod::LarsCv),
            "UNIFORM_SHRINK" => Ok(FitMethod::UniformShrink),
            other => Err(Error::invalid(format!("unknown fit method `{other}`"))),
        }
    }
}

/// A fitted linear response model for one delay map.
///
/// `coefficients` are stored unshrunk; [`predict`] multiplies them by
/// `shrink_factor`. The intercept already accounts for the shrinkage.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub map_id: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub method: FitMethod,
    /// In-fit correlation of predictions with targets; `None` when either
    /// side has zero variance.
    pub fit_corr: Option<f64>,
    pub shrink_factor: f64,
}

impl LinearModel {
    pub fn with_map_id(mut self, id: usize) -> Self {
        self.map_id = id;
        self
    }

    pub fn k(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients as applied at prediction time.
    pub fn effective_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|b| b * self.shrink_factor)
            .collect()
    }

    /// Indices of non-zero effective coefficients.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&j| self.coefficients[j] != 0.0)
            .collect()
    }

    pub(crate) fn finish(
        intercept: f64,
        coefficients: Vec<f64>,
        method: FitMethod,
        shrink_factor: f64,
        x: &DMatrix<f64>,
        y: &[f64],
    ) -> Self {
        let mut model = LinearModel {
            map_id: 0,
            intercept,
            coefficients,
            method,
            fit_corr: None,
            shrink_factor,
        };
        let fitted = predict_unchecked(&model, x);
        model.fit_corr = pearson(&fitted, y);
        model
    }
}

fn predict_unchecked(model: &LinearModel, x: &DMatrix<f64>) -> Vec<f64> {
    let coefs = model.effective_coefficients();
    (0..x.nrows())
        .map(|r| {
            let mut acc = model.intercept;
            for (j, b) in coefs.iter().enumerate() {
                acc += x[(r, j)] * b;
            }
            acc
        })
        .collect()
}

/// `intercept + X * (shrink_factor * coefficients)` row by row.
pub fn predict(model: &LinearModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.k() {
        return Err(Error::DimensionMismatch {
            expected: model.k(),
            found: x.ncols(),
        });
    }
    Ok(predict_unchecked(model, x))
}

/// CSV with columns `map_id,method,intercept,shrink_factor,coef_1..coef_k,fit_corr`.
/// Models with fewer than the widest `k` leave trailing coefficient cells empty.
pub fn write_models_csv<W: Write>(models: &[LinearModel], writer: W) -> Result<()> {
    let k = models.iter().map(LinearModel::k).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "map_id".to_string(),
        "method".into(),
        "intercept".into(),
        "shrink_factor".into(),
    ];
    header.extend((1..=k).map(|j| format!("coef_{j}")));
    header.push("fit_corr".into());
    w.write_record(&header)?;
    for m in models {
        let mut rec = vec![
            m.map_id.to_string(),
            m.method.to_string(),
            format_float(m.intercept),
            format_float(m.shrink_factor),
        ];
        rec.extend((0..k).map(|j| m.coefficients.get(j).map(|b| format_float(*b)).unwrap_or_default()));
        rec.push(m.fit_corr.map(format_float).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_models_csv<R: Read>(reader: R) -> Result<Vec<LinearModel>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 5 {
        return Err(Error::invalid("model csv needs at least 5 columns"));
    }
    let k = header.len() - 5;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |idx: usize| -> Result<f64> {
            rec[idx].parse().map_err(|_| Error::Parse {
                row,
                column: header[idx].to_string(),
                message: format!("not a number: `{}`", &rec[idx]),
            })
        };
        let map_id = rec[0].parse().map_err(|_| Error::Parse {
            row,
            column: "map_id".into(),
            message: "not an integer".into(),
        })?;
        let mut coefficients = Vec::with_capacity(k);
        for j in 0..k {
            if rec[4 + j].is_empty() {
                break;
            }
            coefficients.push(num(4 + j)?);
        }
        let fit_corr = if rec[4 + k].is_empty() { None } else { Some(num(4 + k)?) };
        out.push(LinearModel {
            map_id,
            method: rec[1].parse()?,
            intercept: num(2)?,
            shrink_factor: num(3)?,
            coefficients,
            fit_corr,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(intercept: f64, coefs: &[f64]) -> LinearModel {
        LinearModel {
            map_id: 0,
            intercept,
            coefficients: coefs.to_vec(),
            method: FitMethod::Ols,
            fit_corr: None,
            shrink_factor: 1.0,
        }
    }

    #[test]
    fn zero_coefficients_predict_intercept() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(predict(&model(3.0, &[0.0, 0.0]), &x).unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn hand_two_by_two() {
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(predict(&model(1.0, &[2.0, -1.0]), &x).unwrap(), vec![3.0]);
    }

    #[test]
    fn shrink_applies_to_coefficients() {
        let mut m = model(1.0, &[2.0]);
        m.method = FitMethod::UniformShrink;
        m.shrink_factor = 0.5;
        let x = DMatrix::from_row_slice(1, 1, &[4.0]);
        assert_eq!(predict(&m, &x).unwrap(), vec![5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(
            predict(&model(0.0, &[1.0]), &x),
            Err(Error::DimensionMismatch { expected: 1, found: 3 })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut a = model(0.25, &[1.5, -2.0]);
        a.fit_corr = Some(0.75);
        let mut b = model(-1.0, &[0.1]);
        b.map_id = 7;
        b.method = FitMethod::UniformShrink;
        b.shrink_factor = 0.3;
        let mut buf = Vec::new();
        write_models_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        assert_eq!(read_models_csv(buf.as_slice()).unwrap(), vec![a, b]);
    }
}
