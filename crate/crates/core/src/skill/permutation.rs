use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::SkillMatrix;
use crate::error::{Error, Result};

/// Reference probability that the `CP` entries are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    /// `P[i, j] = b[i] * b[j]`
    #[default]
    Outer,
    /// `P[i, j] = b[j]`
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalTestConfig {
    pub top_k: usize,
    pub n_perm: usize,
    pub seed: u64,
    pub reference: ReferenceMode,
}

impl Default for ConditionalTestConfig {
    fn default() -> Self {
        ConditionalTestConfig {
            top_k: 4,
            n_perm: 1000,
            seed: 0,
            reference: ReferenceMode::Outer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalTestResult {
    /// Season-by-season co-success rates; only `j > i` is filled, other
    /// entries and rows with no successes are NaN.
    pub cp: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// Sum of the largest `top_k` finite `z` entries.
    pub statistic: f64,
    /// How many entries went into the statistic (fewer than `top_k` when
    /// not enough are finite).
    pub used: usize,
    pub p_value: f64,
    pub n_perm: usize,
    pub top_k: usize,
    pub seed: u64,
}

struct Tables {
    cp: DMatrix<f64>,
    p: DMatrix<f64>,
    z: DMatrix<f64>,
}

/// Column-major 0/1 data: `cols[j][i]` is model `i` in season `j`.
fn tables(cols: &[Vec<u8>], reference: ReferenceMode) -> Tables {
    let s = cols.len();
    let n = cols[0].len() as f64;
    let gram = |a: usize, b: usize| -> f64 {
        cols[a].iter().zip(&cols[b]).map(|(x, y)| f64::from(x & y)).sum()
    };
    let diag: Vec<f64> = (0..s).map(|j| gram(j, j)).collect();
    let base: Vec<f64> = diag.iter().map(|d| d / n).collect();
    let mut cp = DMatrix::from_element(s, s, f64::NAN);
    let mut p = DMatrix::from_element(s, s, f64::NAN);
    let mut z = DMatrix::from_element(s, s, f64::NAN);
    for i in 0..s {
        if diag[i] == 0.0 {
            continue;
        }
        for j in i + 1..s {
            let c = gram(i, j) / diag[i];
            let r = match reference {
                ReferenceMode::Outer => base[i] * base[j],
                ReferenceMode::Conditional => base[j],
            };
            cp[(i, j)] = c;
            p[(i, j)] = r;
            z[(i, j)] = (c - r) / (r * (1.0 - r) / n).sqrt();
        }
    }
    Tables { cp, p, z }
}

/// Sum of the `top_k` largest finite entries and how many were used.
fn top_sum(z: &DMatrix<f64>, top_k: usize) -> (f64, usize) {
    let mut finite: Vec<f64> = z.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(|a, b| b.total_cmp(a));
    finite.truncate(top_k);
    (finite.iter().sum(), finite.len())
}

fn statistic(cols: &[Vec<u8>], cfg: &ConditionalTestConfig) -> f64 {
    top_sum(&tables(cols, cfg.reference).z, cfg.top_k).0
}

/// Tests whether success in one season makes success in another more
/// likely than independence would.
///
/// The null distribution comes from shuffling the 0/1 entries of every
/// season column independently. Replicate `r` draws from its own ChaCha8
/// stream `r` under `seed`, so the result does not depend on scheduling.
/// The p-value counts replicates at least as large as the observed value.
pub fn conditional_test(m: &SkillMatrix, cfg: &ConditionalTestConfig) -> Result<ConditionalTestResult> {
    if m.n_seasons() < 2 {
        return Err(Error::insufficient("conditional test needs at least 2 seasons"));
    }
    if m.n_models() < 2 {
        return Err(Error::insufficient("conditional test needs at least 2 models"));
    }
    if cfg.top_k == 0 || cfg.n_perm == 0 {
        return Err(Error::invalid("top_k and n_perm must be positive"));
    }
    let ones: usize = m.count_ones();
    if ones == 0 || ones == m.n_models() * m.n_seasons() {
        log::warn!("skill matrix is constant; every permutation reproduces it");
    }
    let cols: Vec<Vec<u8>> = (0..m.n_seasons()).map(|j| m.column(j)).collect();
    let t = tables(&cols, cfg.reference);
    let (observed, used) = top_sum(&t.z, cfg.top_k);
    if used < cfg.top_k {
        log::warn!("only {used} finite entries available for a top-{} statistic", cfg.top_k);
    }
    let slack = 1e-12 * observed.abs().max(1.0);
    let hits = (0..cfg.n_perm)
        .into_par_iter()
        .filter(|&r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let mut shuffled = cols.clone();
            for c in &mut shuffled {
                c.shuffle(&mut rng);
            }
            statistic(&shuffled, cfg) >= observed - slack
        })
        .count();
    Ok(ConditionalTestResult {
        cp: t.cp,
        p: t.p,
        z: t.z,
        statistic: observed,
        used,
        p_value: hits as f64 / cfg.n_perm as f64,
        n_perm: cfg.n_perm,
        top_k: cfg.top_k,
        seed: cfg.seed,
    })
}
