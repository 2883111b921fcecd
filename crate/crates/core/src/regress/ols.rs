use nalgebra::{DMatrix, DVector};

use super::model::{FitMethod, LinearModel};
use crate::error::{Error, Result};

pub(crate) fn check_design(x: &DMatrix<f64>, y: &[f64], min_rows: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < min_rows {
        return Err(Error::insufficient(format!(
            "need at least {min_rows} rows, got {}",
            x.nrows()
        )));
    }
    Ok(())
}

pub(crate) fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.sum() / n).collect()
}

/// Least-squares intercept and slopes; the minimum-norm slope vector when
/// the centered design is rank deficient.
pub fn ols_coefficients(x: &DMatrix<f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_design(x, y, 2)?;
    let n = x.nrows();
    let k = x.ncols();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if k == 0 {
        return Ok((y_mean, Vec::new()));
    }
    let x_means = column_means(x);
    let xc = DMatrix::from_fn(n, k, |r, c| x[(r, c)] - x_means[c]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = xc.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let beta: Vec<f64> = if sigma_max <= 0.0 {
        vec![0.0; k]
    } else {
        let tol = sigma_max * n.max(k) as f64 * f64::EPSILON;
        svd.solve(&yc, tol)
            .map_err(|e| Error::invalid(format!("svd solve failed: {e}")))?
            .iter()
            .copied()
            .collect()
    };
    let intercept = y_mean - x_means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    Ok((intercept, beta))
}

pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    let (intercept, beta) = ols_coefficients(x, y)?;
    Ok(LinearModel::finish(intercept, beta, FitMethod::Ols, 1.0, x, y))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Normal-equations solve by Gaussian elimination with partial pivoting.
    //! Independent of the SVD route used by `fit_ols`.

    use nalgebra::DMatrix;

    #[allow(clippy::needless_range_loop)]
    pub fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let n = x.nrows();
        let k = x.ncols();
        let p = k + 1;
        // Augmented design [1 | X].
        let at = |r: usize, c: usize| if c == 0 { 1.0 } else { x[(r, c - 1)] };
        let mut a = vec![vec![0.0f64; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = (0..n).map(|r| at(r, i) * at(r, j)).sum();
            }
            a[i][p] = (0..n).map(|r| at(r, i) * y[r]).sum();
        }
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            for row in 0..p {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..=p {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        let sol: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
        (sol[0], sol[1..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::predict;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, y)
    }

    #[test]
    fn exact_fit_single_column() {
        let v = [1.0, 2.0, 4.0, 8.0, 3.0];
        let x = DMatrix::from_column_slice(5, 1, &v);
        let m = fit_ols(&x, &v).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.fit_corr.unwrap() - 1.0).abs() < 1e-12);
        let pred = predict(&m, &x).unwrap();
        for (p, t) in pred.iter().zip(&v) {
            assert!((p - t).abs() <= 1e-10);
        }
    }

    #[test]
    fn constant_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, _) = random_design(&mut rng, 12, 3);
        let m = fit_ols(&x, &[7.0; 12]).unwrap();
        assert_eq!(m.coefficients, vec![0.0; 3]);
        assert_eq!(m.intercept, 7.0);
        assert_eq!(m.fit_corr, None);
    }

    #[test]
    fn errors() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(fit_ols(&x, &[1.0]), Err(Error::DimensionMismatch { .. })));
        let x1 = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(fit_ols(&x1, &[1.0]).is_err());
    }

    #[test]
    fn matches_normal_equations_on_50_by_5() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let (x, y) = random_design(&mut rng, 50, 5);
        let m = fit_ols(&x, &y).unwrap();
        let (b0, b) = oracle::normal_equations(&x, &y);
        assert!((m.intercept - b0).abs() <= 1e-10);
        for (got, want) in m.coefficients.iter().zip(&b) {
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn rank_deficient_duplicate_column_splits_weight() {
        // Minimum-norm answer puts equal weight on identical columns.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let col: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = DMatrix::from_fn(20, 2, |r, _| col[r]);
        let y: Vec<f64> = col.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = fit_ols(&x, &y).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((m.coefficients[1] - 1.0).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_design(seed: u64, n in 3usize..40, k in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = random_design(&mut rng, n, k);
            let m = fit_ols(&x, &y).unwrap();
            let pred = predict(&m, &x).unwrap();
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let scale = y.iter().map(|v| v.abs()).sum::<f64>().max(1.0) * n as f64;
            prop_assert!(resid.iter().sum::<f64>().abs() <= 1e-8 * scale);
            for c in 0..k {
                let dot: f64 = (0..n).map(|r| x[(r, c)] * resid[r]).sum();
                prop_assert!(dot.abs() <= 1e-8 * scale);
            }
        }

        #[test]
        fn zero_column_never_changes_predictions(seed: u64, n in 3usize..40, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = random_design(&mut rng, n, k);
            let padded = x.clone().insert_column(k, 0.0);
            let a = predict(&fit_ols(&x, &y).unwrap(), &x).unwrap();
            let fit = fit_ols(&padded, &y).unwrap();
            prop_assert!(fit.coefficients[k].abs() <= 1e-12);
            let b = predict(&fit, &padded).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
            }
        }
    }
}
