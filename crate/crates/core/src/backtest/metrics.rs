use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

/// Strategy capital multiple relative to the index multiple.
pub fn gain(strategy_multiple: f64, index_multiple: f64) -> Result<f64> {
    if index_multiple.is_nan() || index_multiple <= 0.0 {
        return Err(Error::invalid(format!("index multiple must be positive, got {index_multiple}")));
    }
    Ok(strategy_multiple / index_multiple)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SharpeRatio {
    Finite(f64),
    /// Every excess was identical; the ratio is the sign of the mean
    /// excess times infinity, or undefined when the mean is zero.
    ZeroVariance { mean_excess: f64 },
}

impl SharpeRatio {
    pub fn value(&self) -> f64 {
        match *self {
            SharpeRatio::Finite(v) => v,
            SharpeRatio::ZeroVariance { mean_excess } if mean_excess > 0.0 => f64::INFINITY,
            SharpeRatio::ZeroVariance { mean_excess } if mean_excess < 0.0 => f64::NEG_INFINITY,
            SharpeRatio::ZeroVariance { .. } => f64::NAN,
        }
    }
}

/// Mean over sample standard deviation of per-period excesses.
pub fn sharpe_from_excess(excess: &[f64]) -> Result<SharpeRatio> {
    if excess.len() < 2 {
        return Err(Error::insufficient(format!(
            "Sharpe ratio needs at least 2 periods, got {}",
            excess.len()
        )));
    }
    let m = mean(excess);
    let sd = sample_sd(excess);
    if sd == 0.0 || sd <= 8.0 * f64::EPSILON * m.abs() {
        return Ok(SharpeRatio::ZeroVariance { mean_excess: m });
    }
    Ok(SharpeRatio::Finite(m / sd))
}

/// Per-decade log excess of the strategy over the baseline. The trailing
/// partial decade is dropped.
pub fn decadal_excess(strategy_returns: &[f64], baseline_returns: &[f64], steps_per_decade: usize) -> Result<Vec<f64>> {
    if strategy_returns.len() != baseline_returns.len() {
        return Err(Error::DimensionMismatch {
            expected: strategy_returns.len(),
            found: baseline_returns.len(),
        });
    }
    if steps_per_decade == 0 {
        return Err(Error::invalid("steps_per_decade must be positive"));
    }
    Ok(strategy_returns
        .chunks_exact(steps_per_decade)
        .zip(baseline_returns.chunks_exact(steps_per_decade))
        .map(|(s, b)| {
            let ls: f64 = s.iter().map(|r| r.ln_1p()).sum();
            let lb: f64 = b.iter().map(|r| r.ln_1p()).sum();
            ls - lb
        })
        .collect())
}

/// Sharpe ratio of decadal log excesses, without any annualising factor.
pub fn sharpe_decadal(strategy_returns: &[f64], baseline_returns: &[f64], steps_per_decade: usize) -> Result<SharpeRatio> {
    let excess = decadal_excess(strategy_returns, baseline_returns, steps_per_decade)?;
    if excess.len() < 2 {
        return Err(Error::insufficient(format!(
            "need 2 complete decades of {steps_per_decade} steps, have {} steps",
            strategy_returns.len()
        )));
    }
    sharpe_from_excess(&excess)
}

/// `P(Binomial(n, 1/2) >= wins)`.
pub fn binomial_upper_tail(n: u64, wins: u64) -> f64 {
    if wins == 0 {
        return 1.0;
    }
    if wins > n {
        return 0.0;
    }
    if n <= 120 {
        // Exact integer sum; n * C(n, n/2) stays inside u128.
        let mut c: u128 = 1;
        let mut total: u128 = 0;
        for i in 0..=n {
            if i >= wins {
                total += c;
            }
            c = c * u128::from(n - i) / u128::from(i + 1);
        }
        return total as f64 / 2f64.powi(n as i32);
    }
    let mut log_p = -(n as f64) * std::f64::consts::LN_2;
    let mut logs = Vec::with_capacity((n - wins + 1) as usize);
    for i in 0..=n {
        if i >= wins {
            logs.push(log_p);
        }
        if i < n {
            log_p += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// One-sided exact sign test that the strategy beats the baseline more
/// often than chance. Ties are dropped.
pub fn sign_test(strategy: &[f64], baseline: &[f64]) -> Result<f64> {
    if strategy.len() != baseline.len() {
        return Err(Error::DimensionMismatch {
            expected: strategy.len(),
            found: baseline.len(),
        });
    }
    let wins = strategy.iter().zip(baseline).filter(|(s, b)| s > b).count() as u64;
    let losses = strategy.iter().zip(baseline).filter(|(s, b)| s < b).count() as u64;
    if wins + losses == 0 {
        return Err(Error::insufficient("every window is tied; the sign test is undefined"));
    }
    Ok(binomial_upper_tail(wins + losses, wins))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tail by summing pmf terms built from a product formula in f64.
    fn naive_tail(n: u64, w: u64) -> f64 {
        (w..=n)
            .map(|i| {
                let mut c = 1.0f64;
                for j in 0..i {
                    c *= (n - j) as f64 / (j + 1) as f64;
                }
                c * 0.5f64.powi(n as i32)
            })
            .sum()
    }

    #[test]
    fn gains() {
        assert_eq!(gain(1.3, 1.3).unwrap(), 1.0);
        assert_eq!(gain(2.0, 1.6).unwrap(), 1.25);
        assert_eq!(gain(0.8, 1.0).unwrap(), 0.8);
        assert!(gain(1.0, 0.0).is_err());
        assert!(gain(1.0, -1.0).is_err());
    }

    #[test]
    fn sign_test_hand_values() {
        let base = vec![1.0; 10];
        let mut strat = vec![1.1; 9];
        strat.push(0.9);
        assert_eq!(sign_test(&strat, &base).unwrap(), 11.0 / 1024.0);
        let half: Vec<f64> = (0..10).map(|i| if i < 5 { 1.1 } else { 0.9 }).collect();
        assert!((sign_test(&half, &base).unwrap() - 638.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn sign_test_drops_ties() {
        let s = [1.2, 1.0, 1.0, 0.9];
        let b = [1.0, 1.0, 1.0, 1.0];
        // One win, one loss: P(Bin(2, 1/2) >= 1) = 3/4.
        assert_eq!(sign_test(&s, &b).unwrap(), 0.75);
        assert!(sign_test(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(sign_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn binomial_tail_matches_naive_sum() {
        for n in [1u64, 5, 30, 100, 120, 121, 300] {
            for w in [0, 1, n / 3, n / 2, n / 2 + 1, n - 1, n] {
                let got = binomial_upper_tail(n, w);
                let want = naive_tail(n, w);
                assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, "n={n} w={w} {got} {want}");
            }
        }
        assert_eq!(binomial_upper_tail(10, 11), 0.0);
    }

    #[test]
    fn sharpe_hand_case() {
        let s = sharpe_from_excess(&[0.1, 0.3]).unwrap();
        assert!((s.value() - std::f64::consts::SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn sharpe_decadal_by_construction() {
        // Two decades of 2 steps; strategy decade multiples e^0.1 and e^0.3
        // times the baseline.
        let base = [0.01, -0.02, 0.03, 0.0];
        let strat: Vec<f64> = [0.1, 0.0, 0.3, 0.0]
            .iter()
            .zip(&base)
            .map(|(x, b): (&f64, &f64)| (x + b.ln_1p()).exp_m1())
            .collect();
        let s = sharpe_decadal(&strat, &base, 2).unwrap();
        assert!((s.value() - 0.2 / 0.02f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sharpe_degenerate_cases() {
        let r = [0.01, 0.02, -0.01, 0.0];
        match sharpe_decadal(&r, &r, 2).unwrap() {
            SharpeRatio::ZeroVariance { mean_excess } => assert_eq!(mean_excess, 0.0),
            other => panic!("{other:?}"),
        }
        assert!(sharpe_decadal(&r, &r, 3).is_err());
        assert!(sharpe_decadal(&r, &r[..3], 1).is_err());
        assert_eq!(SharpeRatio::ZeroVariance { mean_excess: 0.5 }.value(), f64::INFINITY);
        assert!(SharpeRatio::ZeroVariance { mean_excess: 0.0 }.value().is_nan());
    }
}
