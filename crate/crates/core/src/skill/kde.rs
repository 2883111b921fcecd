use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sample_sd};

/// Gaussian kernel density estimate with a Silverman rule-of-thumb bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    sample: Vec<f64>,
    bandwidth: f64,
    /// True when the sample had no spread and the bandwidth floor was used.
    pub degenerate: bool,
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to whichever spread
/// is positive, and never below `1e-9 * (range + 1)`. The flag reports
/// that the floor was needed.
pub fn silverman_bandwidth(sample: &[f64]) -> (f64, bool) {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let sd = sample_sd(&sorted);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = [sd, iqr / 1.34]
        .into_iter()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = 1e-9 * (sorted[n - 1] - sorted[0] + 1.0);
    if !spread.is_finite() {
        return (floor, true);
    }
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h < floor {
        (floor, true)
    } else {
        (h, false)
    }
}

impl Kde {
    pub fn fit(sample: &[f64]) -> Result<Self> {
        if sample.len() < 2 {
            return Err(Error::insufficient(format!(
                "density estimate needs at least 2 values, got {}",
                sample.len()
            )));
        }
        if let Some(v) = sample.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("density sample contains {v}")));
        }
        let (bandwidth, degenerate) = silverman_bandwidth(sample);
        Ok(Kde {
            sample: sample.to_vec(),
            bandwidth,
            degenerate,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.sample.len() as f64 * h * (2.0 * PI).sqrt());
        norm * self
            .sample
            .iter()
            .map(|s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum::<f64>()
    }
}
