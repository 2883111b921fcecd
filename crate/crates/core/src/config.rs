//! Plain-text `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Every key has a
//! default; unknown or repeated keys are rejected. [`RunConfig::echo`]
//! writes every key with its effective value, so the echo alone reproduces
//! a run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::backtest::BacktestConfig;
use crate::ensemble::{Combiner, SelectionRule};
use crate::error::{Error, Result};
use crate::forecast::{FitKind, ForecastConfig, Sampling};
use crate::regress::CvSettings;
use crate::skill::{ConditionalTestConfig, ReferenceMode};
use crate::synth::{ImpulseSpec, InitialCondition, SystemKind, SystemSpec};
use crate::timeseries::{Differencing, WindowPlan};

type BacktestParts = (usize, usize, usize, usize, usize, f64, f64);

/// Known keys and their defaults, in echo order. An empty default means unset.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    // data
    ("date_column", ""),
    ("variables", ""),
    ("target", ""),
    ("differencing", "auto"),
    // delay maps
    ("max_lag", "40"),
    ("k", "20"),
    ("lead", "1"),
    ("sampling", "disjoint"),
    ("partitions", "10"),
    ("random_maps", "0"),
    // fitting, selection, combination
    ("fit_method", "ols"),
    ("folds", "10"),
    ("selection", "top_fraction"),
    ("q", "0.4"),
    ("r_t", "-1"),
    ("combiner", "trimmed_mean"),
    ("trim", "0.2"),
    // walk-forward windows in steps (forecast, compare-sampling)
    ("fit_len", "2000"),
    ("select_len", "1000"),
    ("test_len", "1000"),
    ("stride", "0"),
    // backtest
    ("steps_per_year", "252"),
    ("fit_years", "3"),
    ("select_years", "5"),
    ("test_years", "2"),
    ("paths", "5"),
    ("cost_bp", "3"),
    ("threshold", "0"),
    ("grid", "false"),
    // skill test
    ("top_k", "4"),
    ("n_perm", "1000"),
    ("reference", "outer"),
    ("fdr_q", "0.05"),
    // sampling comparison
    ("compare_seeds", "20"),
    // synthetic systems
    ("system", "lorenz63"),
    ("sigma", "10"),
    ("rho", "28"),
    ("beta", "2.6666666666666665"),
    ("dimension", "8"),
    ("forcing", "8"),
    ("dt", "0.01"),
    ("n_steps", "5000"),
    ("burn_in", "1000"),
    ("initial_seed", ""),
    ("impulse_rate", "0"),
    ("impulse_magnitude", "1"),
    ("impulse_relative", "true"),
    ("impulse_decay", "0.9"),
    ("impulse_columns", ""),
    ("impulse_seed", ""),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }
}

fn known_key(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let key = key.trim();
            if seen.contains(&key.to_string()) {
                return Err(Error::Config(format!("line {}: key `{key}` given twice", i + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = known_key(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map_or("", String::as_str)
    }

    /// Every key with its effective value, in a fixed order.
    pub fn echo(&self) -> String {
        KEYS.iter().map(|(k, _)| format!("{k} = {}\n", self.values[k])).collect()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    fn choice(&self, key: &str, allowed: &[&str]) -> Result<String> {
        let v = self.raw(key).to_ascii_lowercase();
        if allowed.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(Error::Config(format!("key `{key}` must be one of {allowed:?}, got `{}`", self.raw(key))))
        }
    }

    /// Parses every typed key so that mistakes surface before any work.
    pub fn check(&self) -> Result<()> {
        self.seed()?;
        self.forecast_parts()?;
        self.plan()?;
        self.backtest_parts()?;
        self.grid()?;
        self.skill_config()?;
        self.fdr_q()?;
        self.compare_seeds()?;
        self.system_spec()?;
        self.impulse_spec()?;
        self.differencing_choice()?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn date_column(&self) -> Option<String> {
        let v = self.raw("date_column");
        (!v.is_empty()).then(|| v.to_string())
    }

    pub fn variables(&self) -> Vec<String> {
        self.list("variables")
    }

    pub fn target(&self) -> Option<String> {
        let v = self.raw("target");
        (!v.is_empty()).then(|| v.to_string())
    }

    fn differencing_choice(&self) -> Result<String> {
        self.choice("differencing", &["auto", "none", "raw", "log"])
    }

    /// `None` means the series are used as given. `auto` is no differencing
    /// for forecasts and log differencing for backtests.
    pub fn differencing(&self, backtest: bool) -> Result<Option<Differencing>> {
        Ok(match self.differencing_choice()?.as_str() {
            "none" => None,
            "raw" => Some(Differencing::Raw),
            "log" => Some(Differencing::Log),
            _ if backtest => Some(Differencing::Log),
            _ => None,
        })
    }

    #[allow(clippy::type_complexity)]
    fn forecast_parts(&self) -> Result<(usize, usize, usize, Sampling, FitKind, SelectionRule, Combiner)> {
        let max_lag: usize = self.get("max_lag")?;
        let k: usize = self.get("k")?;
        let lead: usize = self.get("lead")?;
        if max_lag == 0 || k == 0 || lead == 0 {
            return Err(Error::Config("max_lag, k and lead must be positive".into()));
        }
        let sampling = match self.choice("sampling", &["disjoint", "random"])?.as_str() {
            "disjoint" => Sampling::Disjoint {
                partitions: self.get("partitions")?,
            },
            _ => Sampling::Random {
                count: self.get("random_maps")?,
            },
        };
        let fit = match self.choice("fit_method", &["ols", "lars_cv"])?.as_str() {
            "ols" => FitKind::Ols,
            _ => FitKind::LarsCv(CvSettings::with_folds(self.get("folds")?)),
        };
        let selection = match self.choice("selection", &["top_fraction", "min_corr"])?.as_str() {
            "top_fraction" => SelectionRule::TopFraction(self.get("q")?),
            _ => SelectionRule::MinCorr(self.get("r_t")?),
        };
        selection.validate().map_err(|e| Error::Config(strip(e)))?;
        let combiner = match self.choice("combiner", &["trimmed_mean", "sqrt_n_best"])?.as_str() {
            "trimmed_mean" => {
                let trim: f64 = self.get("trim")?;
                if !(0.0..0.5).contains(&trim) {
                    return Err(Error::Config(format!("trim must be in [0, 0.5), got {trim}")));
                }
                Combiner::TrimmedMean { trim }
            }
            _ => Combiner::SqrtNBest,
        };
        Ok((max_lag, k, lead, sampling, fit, selection, combiner))
    }

    /// Forecast settings for a frame with the given column names.
    pub fn forecast_config(&self, columns: &[String]) -> Result<ForecastConfig> {
        let (max_lag, k, lead, sampling, fit, selection, combiner) = self.forecast_parts()?;
        let variables = {
            let v = self.variables();
            if v.is_empty() {
                columns.to_vec()
            } else {
                v
            }
        };
        let target = match self.target() {
            Some(t) => t,
            None => variables
                .first()
                .cloned()
                .ok_or_else(|| Error::Config("no variables to forecast".into()))?,
        };
        let universe = variables.len() * max_lag;
        if k > universe {
            return Err(Error::Config(format!(
                "k = {k} exceeds the {universe} lagged coordinates of {} variables at max_lag {max_lag}",
                variables.len()
            )));
        }
        Ok(ForecastConfig {
            variables,
            max_lag,
            k,
            sampling,
            target,
            lead,
            fit,
            selection,
            combiner,
        })
    }

    pub fn plan(&self) -> Result<WindowPlan> {
        let fit_len = self.get("fit_len")?;
        let select_len = self.get("select_len")?;
        let test_len = self.get("test_len")?;
        let stride: usize = self.get("stride")?;
        Ok(WindowPlan {
            fit_len,
            select_len,
            test_len,
            stride: if stride == 0 { test_len } else { stride },
        })
    }

    /// Steps per year, fit/select/test years, paths, cost and threshold.
    fn backtest_parts(&self) -> Result<BacktestParts> {
        Ok((
            self.get("steps_per_year")?,
            self.get("fit_years")?,
            self.get("select_years")?,
            self.get("test_years")?,
            self.get("paths")?,
            self.get("cost_bp")?,
            self.get("threshold")?,
        ))
    }

    pub fn grid(&self) -> Result<bool> {
        self.get("grid")
    }

    pub fn backtest_config(&self, columns: &[String]) -> Result<BacktestConfig> {
        let (steps_per_year, fit_years, select_years, test_years, paths, cost_bp, threshold) = self.backtest_parts()?;
        let cfg = BacktestConfig {
            forecast: self.forecast_config(columns)?,
            differencing: self
                .differencing(true)?
                .ok_or_else(|| Error::Config("backtests trade on differenced series; use raw or log".into()))?,
            steps_per_year,
            fit_years,
            select_years,
            test_years,
            paths,
            cost_bp,
            threshold,
            seed: self.seed()?,
        };
        cfg.validate().map_err(|e| Error::Config(strip(e)))?;
        Ok(cfg)
    }

    pub fn skill_config(&self) -> Result<ConditionalTestConfig> {
        let reference = match self.choice("reference", &["outer", "conditional"])?.as_str() {
            "outer" => ReferenceMode::Outer,
            _ => ReferenceMode::Conditional,
        };
        Ok(ConditionalTestConfig {
            top_k: self.get("top_k")?,
            n_perm: self.get("n_perm")?,
            seed: self.seed()?,
            reference,
        })
    }

    pub fn fdr_q(&self) -> Result<f64> {
        let q: f64 = self.get("fdr_q")?;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("fdr_q must be in [0, 1], got {q}")));
        }
        Ok(q)
    }

    pub fn compare_seeds(&self) -> Result<usize> {
        let n: usize = self.get("compare_seeds")?;
        if n == 0 {
            return Err(Error::Config("compare_seeds must be positive".into()));
        }
        Ok(n)
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        let kind = match self.choice("system", &["lorenz63", "lorenz96"])?.as_str() {
            "lorenz63" => SystemKind::Lorenz63 {
                sigma: self.get("sigma")?,
                rho: self.get("rho")?,
                beta: self.get("beta")?,
            },
            _ => SystemKind::Lorenz96 {
                dimension: self.get("dimension")?,
                forcing: self.get("forcing")?,
            },
        };
        let spec = SystemSpec {
            kind,
            dt: self.get("dt")?,
            n_steps: self.get("n_steps")?,
            burn_in: self.get("burn_in")?,
            initial: match self.optional::<u64>("initial_seed")? {
                Some(s) => InitialCondition::Seeded(s),
                None => InitialCondition::Default,
            },
        };
        spec.validate().map_err(|e| Error::Config(strip(e)))?;
        Ok(spec)
    }

    /// `None` when the impulse rate is zero.
    pub fn impulse_spec(&self) -> Result<Option<ImpulseSpec>> {
        let rate: f64 = self.get("impulse_rate")?;
        let decay: f64 = self.get("impulse_decay")?;
        if !(0.0..=1.0).contains(&rate) || !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!(
                "impulse_rate must be in [0, 1] and impulse_decay in (0, 1), got {rate} and {decay}"
            )));
        }
        if rate == 0.0 {
            return Ok(None);
        }
        Ok(Some(ImpulseSpec {
            rate,
            magnitude: self.get("impulse_magnitude")?,
            relative_to_sd: self.get("impulse_relative")?,
            decay,
            columns: self.list("impulse_columns"),
            seed: match self.optional("impulse_seed")? {
                Some(s) => s,
                None => self.seed()?,
            },
        }))
    }
}

/// Message of an error without its category prefix.
fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) | Error::InsufficientData(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.seed().unwrap(), 0);
        let f = c.forecast_config(&["a".into(), "b".into()]).unwrap();
        assert_eq!(f.target, "a");
        assert_eq!(f.max_lag, 40);
        assert_eq!(f.k, 20);
        assert_eq!(f.sampling, Sampling::Disjoint { partitions: 10 });
        assert_eq!(f.selection, SelectionRule::TopFraction(0.4));
        assert_eq!(c.plan().unwrap().stride, 1000);
        assert_eq!(c.impulse_spec().unwrap(), None);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("seed = 3\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("`foo`"), "{err}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn malformed_lines() {
        assert!(RunConfig::parse("seed 3").is_err());
        assert!(RunConfig::parse("seed = x").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("sampling = sometimes").is_err());
        assert!(RunConfig::parse("q = 1.5").is_err());
        assert!(RunConfig::parse("system = lorenz96\ndimension = 3").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("# comment\n\nseed = 7\nvariables = a, b\nfit_method = lars_cv\n").unwrap();
        let echo = c.echo();
        assert!(echo.starts_with("seed = 7\n"));
        assert_eq!(echo.lines().count(), KEYS.len());
        assert_eq!(RunConfig::parse(&echo).unwrap(), c);
        assert_eq!(c.variables(), vec!["a", "b"]);
    }

    #[test]
    fn backtest_requires_differencing_and_eight_years() {
        let cols = vec!["djia".to_string()];
        let c = RunConfig::parse("differencing = none").unwrap();
        assert!(c.backtest_config(&cols).is_err());
        let c = RunConfig::parse("fit_years = 6\nselect_years = 2").unwrap();
        let b = c.backtest_config(&cols).unwrap();
        assert_eq!(b.differencing, Differencing::Log);
        let c = RunConfig::parse("fit_years = 6").unwrap();
        assert!(matches!(c.backtest_config(&cols), Err(Error::Config(_))));
    }

    #[test]
    fn impulses_default_to_run_seed() {
        let c = RunConfig::parse("seed = 11\nimpulse_rate = 0.01").unwrap();
        let s = c.impulse_spec().unwrap().unwrap();
        assert_eq!(s.seed, 11);
        assert!(s.relative_to_sd);
        assert_eq!(s.decay, 0.9);
    }
}
