//! Least angle regression (the plain LAR variant, no lasso drops).
//!
//! Columns are centered and scaled to unit Euclidean norm, the response is
//! centered. Starting from all-zero coefficients, the column most correlated
//! with the residual enters the active set; coefficients then move along the
//! direction that keeps every active column equally correlated with the
//! residual, until an inactive column catches up. The last step moves all the
//! way to the least-squares fit on the active columns.

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::ols::{check_design, column_means};
use crate::error::Result;

/// One breakpoint of the path. `coefs` are on the standardized scale and
/// indexed by original column; excluded columns stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LarsStep {
    pub active: Vec<usize>,
    pub coefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LarsPath {
    pub steps: Vec<LarsStep>,
    pub x_means: Vec<f64>,
    /// Euclidean norm of each centered column; 0 for excluded columns.
    pub x_norms: Vec<f64>,
    pub y_mean: f64,
    /// Columns dropped for zero variance.
    pub excluded: Vec<usize>,
}

impl LarsPath {
    /// Intercept and coefficients on the original scale at breakpoint `step`.
    pub fn original_scale(&self, step: usize) -> (f64, Vec<f64>) {
        self.destandardize(&self.steps[step].coefs)
    }

    pub fn destandardize(&self, std_coefs: &[f64]) -> (f64, Vec<f64>) {
        let beta: Vec<f64> = std_coefs
            .iter()
            .zip(&self.x_norms)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - self.x_means.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
        (intercept, beta)
    }

    /// L1 norm of the original-scale coefficients at each breakpoint.
    pub fn l1_norms(&self) -> Vec<f64> {
        (0..self.steps.len())
            .map(|i| self.original_scale(i).1.iter().map(|b| b.abs()).sum())
            .collect()
    }

    /// Intercept and coefficients at `fraction` of the final L1 norm,
    /// interpolating linearly between breakpoints.
    pub fn at_fraction(&self, fraction: f64) -> (f64, Vec<f64>) {
        self.at_fraction_with(&self.l1_norms(), fraction)
    }

    pub(crate) fn at_fraction_with(&self, norms: &[f64], fraction: f64) -> (f64, Vec<f64>) {
        let last = self.steps.len() - 1;
        let total = norms[last];
        if fraction <= 0.0 || total <= 0.0 {
            return self.original_scale(0);
        }
        if fraction >= 1.0 {
            return self.original_scale(last);
        }
        let target = fraction * total;
        let i = (1..=last).find(|&i| norms[i] >= target).unwrap_or(last);
        let (lo, hi) = (norms[i - 1], norms[i]);
        let w = if hi > lo { ((target - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 1.0 };
        let a = &self.steps[i - 1].coefs;
        let b = &self.steps[i].coefs;
        let mixed: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect();
        self.destandardize(&mixed)
    }
}

/// Computes the full least-angle path of `y` on the columns of `x`.
pub fn lars_path(x: &DMatrix<f64>, y: &[f64]) -> Result<LarsPath> {
    check_design(x, y, 2)?;
    let n = x.nrows();
    let p = x.ncols();
    let x_means = column_means(x);
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut x_norms = vec![0.0; p];
    let mut excluded = Vec::new();
    let mut z = DMatrix::zeros(n, p);
    for j in 0..p {
        let col: Vec<f64> = (0..n).map(|r| x[(r, j)] - x_means[j]).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = (0..n).map(|r| x[(r, j)].abs()).fold(0.0, f64::max);
        if norm <= 1e-12 * scale.max(1e-300) * (n as f64).sqrt() || norm == 0.0 {
            warn!("lars: column {j} has zero variance and is excluded");
            excluded.push(j);
            continue;
        }
        x_norms[j] = norm;
        for r in 0..n {
            z[(r, j)] = col[r] / norm;
        }
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let max_active = (p - excluded.len()).min(n - 1);
    let mut blocked = vec![false; p];
    for &j in &excluded {
        blocked[j] = true;
    }

    let mut beta = DVector::zeros(p);
    let mut active: Vec<usize> = Vec::new();
    let mut steps = vec![LarsStep {
        active: Vec::new(),
        coefs: vec![0.0; p],
    }];
    let y_scale = yc.norm();
    if max_active == 0 || y_scale == 0.0 {
        return Ok(LarsPath { steps, x_means, x_norms, y_mean, excluded });
    }

    let correlations = |beta: &DVector<f64>| -> DVector<f64> {
        let resid = &yc - &z * beta;
        z.transpose() * resid
    };

    let c = correlations(&beta);
    let first = (0..p)
        .filter(|&j| !blocked[j])
        .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()).then(b.cmp(&a)))
        .expect("at least one usable column");
    if c[first].abs() <= 1e-14 * y_scale {
        return Ok(LarsPath { steps, x_means, x_norms, y_mean, excluded });
    }
    active.push(first);

    loop {
        let c = correlations(&beta);
        let big_c = active.iter().map(|&j| c[j].abs()).fold(0.0, f64::max);
        if big_c <= 1e-14 * y_scale {
            break;
        }
        let signs: Vec<f64> = active.iter().map(|&j| if c[j] >= 0.0 { 1.0 } else { -1.0 }).collect();
        let m = active.len();
        let xa = DMatrix::from_fn(n, m, |r, i| signs[i] * z[(r, active[i])]);
        let gram = xa.transpose() * &xa;
        // A vanishing Cholesky pivot means the newest column is (numerically)
        // a combination of the active ones.
        let chol = gram
            .cholesky()
            .filter(|ch| ch.l_dirty().diagonal().iter().all(|d| d * d > 1e-12));
        let Some(chol) = chol else {
            let j = active.pop().expect("active set non-empty");
            warn!("lars: column {j} is collinear with the active set and is skipped");
            blocked[j] = true;
            if let Some(last) = steps.last_mut() {
                if last.active.last() == Some(&j) {
                    last.active.pop();
                }
            }
            if active.is_empty() {
                break;
            }
            continue;
        };
        let ones = DVector::from_element(m, 1.0);
        let ginv_ones = chol.solve(&ones);
        let a_norm = 1.0 / ones.dot(&ginv_ones).sqrt();
        let w = ginv_ones * a_norm;
        let u = &xa * &w;
        let a = z.transpose() * &u;

        let full = big_c / a_norm;
        let mut gamma = full;
        let mut entering = None;
        let reachable = blocked.iter().filter(|b| !**b).count().min(n - 1);
        if m < reachable {
            for j in 0..p {
                if blocked[j] || active.contains(&j) {
                    continue;
                }
                for (num, den) in [(big_c - c[j], a_norm - a[j]), (big_c + c[j], a_norm + a[j])] {
                    if den > 1e-12 {
                        let g = num / den;
                        if g > 1e-12 * full && g < gamma {
                            gamma = g;
                            entering = Some(j);
                        }
                    }
                }
            }
        }

        for (i, &j) in active.iter().enumerate() {
            beta[j] += gamma * signs[i] * w[i];
        }
        match entering {
            Some(j) => {
                active.push(j);
                steps.push(LarsStep {
                    active: active.clone(),
                    coefs: beta.iter().copied().collect(),
                });
            }
            None => {
                steps.push(LarsStep {
                    active: active.clone(),
                    coefs: beta.iter().copied().collect(),
                });
                break;
            }
        }
    }
    Ok(LarsPath { steps, x_means, x_norms, y_mean, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::fit_ols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standardized(x: &DMatrix<f64>, path: &LarsPath) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            if path.x_norms[c] > 0.0 {
                (x[(r, c)] - path.x_means[c]) / path.x_norms[c]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn single_column_is_one_step_to_ols() {
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 3.0, 2.0, 5.0, 4.0, 0.5]);
        let y = [2.0, 5.0, 3.5, 9.0, 8.0, 1.0];
        let path = lars_path(&x, &y).unwrap();
        assert_eq!(path.steps.len(), 2);
        let (b0, b) = path.original_scale(1);
        let ols = fit_ols(&x, &y).unwrap();
        assert!((b[0] - ols.coefficients[0]).abs() < 1e-12);
        assert!((b0 - ols.intercept).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_design_enters_by_correlation_with_soft_threshold_steps() {
        // Centered orthonormal columns: correlations are z_j' y and the path is
        // the soft-threshold family beta_j(l) = sign(c_j) max(|c_j| - l, 0).
        let z = DMatrix::from_row_slice(
            4,
            3,
            &[0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, 0.5, -0.5, -0.5, -0.5, 0.5],
        );
        let c = [3.0, -1.0, 2.0];
        let y: Vec<f64> = (0..4).map(|r| (0..3).map(|j| z[(r, j)] * c[j]).sum()).collect();
        let path = lars_path(&z, &y).unwrap();
        assert_eq!(path.steps.len(), 4);
        assert_eq!(path.steps[1].active, vec![0, 2]);
        assert_eq!(path.steps[2].active, vec![0, 2, 1]);
        // Breakpoints at lambda = 2 and lambda = 1, then 0.
        let expect = [[1.0, 0.0, 0.0], [2.0, 0.0, 1.0], [3.0, -1.0, 2.0]];
        for (s, e) in path.steps[1..].iter().zip(&expect) {
            for j in 0..3 {
                assert!((s.coefs[j] - e[j]).abs() < 1e-12, "{:?} vs {:?}", s.coefs, e);
            }
        }
    }

    #[test]
    fn zero_variance_column_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(20, 3, |_, c| if c == 1 { 5.0 } else { rng.random_range(-1.0..1.0) });
        let y: Vec<f64> = (0..20).map(|r| x[(r, 0)] - x[(r, 2)]).collect();
        let path = lars_path(&x, &y).unwrap();
        assert_eq!(path.excluded, vec![1]);
        let last = path.steps.last().unwrap();
        assert_eq!(last.coefs[1], 0.0);
        let (_, b) = path.original_scale(path.steps.len() - 1);
        assert!((b[0] - 1.0).abs() < 1e-10 && (b[2] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn equiangular_and_endpoint_on_random_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = rng.random_range(15..50);
            let p = rng.random_range(2..10);
            let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let path = lars_path(&x, &y).unwrap();
            let z = standardized(&x, &path);
            let yc = DVector::from_iterator(n, y.iter().map(|v| v - path.y_mean));
            for step in &path.steps[1..] {
                let b = DVector::from_vec(step.coefs.clone());
                let c = z.transpose() * (&yc - &z * b);
                let cs: Vec<f64> = step.active.iter().map(|&j| c[j].abs()).collect();
                let hi = cs.iter().cloned().fold(f64::MIN, f64::max);
                let lo = cs.iter().cloned().fold(f64::MAX, f64::min);
                assert!(hi - lo <= 1e-8, "spread {}", hi - lo);
            }
            let (b0, b) = path.original_scale(path.steps.len() - 1);
            let ols = fit_ols(&x, &y).unwrap();
            assert!((b0 - ols.intercept).abs() <= 1e-8);
            for (u, v) in b.iter().zip(&ols.coefficients) {
                assert!((u - v).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn fraction_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..30).map(|r| x[(r, 0)] + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let path = lars_path(&x, &y).unwrap();
        let (b0, b) = path.at_fraction(0.0);
        assert_eq!(b, vec![0.0; 4]);
        assert!((b0 - path.y_mean).abs() < 1e-15);
        assert_eq!(path.at_fraction(1.0), path.original_scale(path.steps.len() - 1));
        let norms = path.l1_norms();
        let total = *norms.last().unwrap();
        let (_, at_break) = path.at_fraction(norms[1] / total);
        let (_, want) = path.original_scale(1);
        for (u, v) in at_break.iter().zip(&want) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
