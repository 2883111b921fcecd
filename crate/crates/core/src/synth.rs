//! Synthetic chaotic trajectories and measurement-level impulse noise.

use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::sample_sd;
use crate::timeseries::{format_float, SeriesFrame};

#[derive(Debug, Clone, PartialEq)]
pub enum SystemKind {
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Lorenz96 { dimension: usize, forcing: f64 },
}

impl SystemKind {
    pub fn lorenz63() -> Self {
        SystemKind::Lorenz63 {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }

    pub fn lorenz96(dimension: usize) -> Self {
        SystemKind::Lorenz96 { dimension, forcing: 8.0 }
    }

    pub fn dimension(&self) -> usize {
        match self {
            SystemKind::Lorenz63 { .. } => 3,
            SystemKind::Lorenz96 { dimension, .. } => *dimension,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            SystemKind::Lorenz63 { .. } => vec!["x".into(), "y".into(), "z".into()],
            SystemKind::Lorenz96 { dimension, .. } => (0..*dimension).map(|i| format!("x{i}")).collect(),
        }
    }

    fn rhs(&self, s: &[f64], out: &mut [f64]) {
        match *self {
            SystemKind::Lorenz63 { sigma, rho, beta } => {
                out[0] = sigma * (s[1] - s[0]);
                out[1] = s[0] * (rho - s[2]) - s[1];
                out[2] = s[0] * s[1] - beta * s[2];
            }
            SystemKind::Lorenz96 { dimension: d, forcing } => {
                for i in 0..d {
                    let ip1 = s[(i + 1) % d];
                    let im1 = s[(i + d - 1) % d];
                    let im2 = s[(i + d - 2) % d];
                    out[i] = (ip1 - im2) * im1 - s[i] + forcing;
                }
            }
        }
    }

    fn default_state(&self) -> Vec<f64> {
        match *self {
            SystemKind::Lorenz63 { .. } => vec![1.0, 1.0, 1.0],
            SystemKind::Lorenz96 { dimension, forcing } => {
                let mut s = vec![forcing; dimension];
                s[0] += 0.01;
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `(1, 1, 1)` for Lorenz-63; `F` everywhere with `x0 += 0.01` for Lorenz-96.
    Default,
    State(Vec<f64>),
    /// The default state plus N(0, 0.01^2) noise drawn under the seed.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub dt: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub initial: InitialCondition,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if let SystemKind::Lorenz96 { dimension, .. } = self.kind {
            if dimension < 4 {
                return Err(Error::invalid(format!("Lorenz-96 needs dimension >= 4, got {dimension}")));
            }
        }
        if let InitialCondition::State(s) = &self.initial {
            if s.len() != self.kind.dimension() {
                return Err(Error::DimensionMismatch {
                    expected: self.kind.dimension(),
                    found: s.len(),
                });
            }
        }
        Ok(())
    }

    fn initial_state(&self) -> Vec<f64> {
        match &self.initial {
            InitialCondition::Default => self.kind.default_state(),
            InitialCondition::State(s) => s.clone(),
            InitialCondition::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                self.kind
                    .default_state()
                    .into_iter()
                    .map(|v| v + 0.01 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
    }
}

impl fmt::Display for SystemSpec {
    /// `key = value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SystemKind::Lorenz63 { sigma, rho, beta } => {
                writeln!(f, "system = lorenz63")?;
                writeln!(f, "sigma = {sigma}")?;
                writeln!(f, "rho = {rho}")?;
                writeln!(f, "beta = {beta}")?;
            }
            SystemKind::Lorenz96 { dimension, forcing } => {
                writeln!(f, "system = lorenz96")?;
                writeln!(f, "dimension = {dimension}")?;
                writeln!(f, "forcing = {forcing}")?;
            }
        }
        writeln!(f, "dt = {}", self.dt)?;
        writeln!(f, "n_steps = {}", self.n_steps)?;
        writeln!(f, "burn_in = {}", self.burn_in)?;
        match &self.initial {
            InitialCondition::Default => writeln!(f, "initial = default"),
            InitialCondition::State(s) => {
                let parts: Vec<String> = s.iter().map(|v| format_float(*v)).collect();
                writeln!(f, "initial = {}", parts.join(" "))
            }
            InitialCondition::Seeded(seed) => writeln!(f, "initial_seed = {seed}"),
        }
    }
}

fn rk4_step(kind: &SystemKind, s: &mut [f64], dt: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let n = s.len();
    kind.rhs(s, &mut k[0]);
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * dt * k[0][i];
    }
    kind.rhs(tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = s[i] + 0.5 * dt * k[1][i];
    }
    kind.rhs(tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = s[i] + dt * k[2][i];
    }
    kind.rhs(tmp, &mut k[3]);
    for i in 0..n {
        s[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
    }
}

/// Fixed-step fourth-order Runge-Kutta trajectory. Row `t` holds the state
/// after `burn_in + t + 1` steps; rows are stamped `0..n_steps`.
pub fn integrate(spec: &SystemSpec) -> Result<SeriesFrame> {
    spec.validate()?;
    let d = spec.kind.dimension();
    let mut state = spec.initial_state();
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    let mut columns = vec![Vec::with_capacity(spec.n_steps); d];
    for step in 1..=spec.burn_in + spec.n_steps {
        rk4_step(&spec.kind, &mut state, spec.dt, &mut k, &mut tmp);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if step > spec.burn_in {
            for (c, v) in columns.iter_mut().zip(&state) {
                c.push(*v);
            }
        }
    }
    SeriesFrame::new(spec.kind.column_names().into_iter().zip(columns).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSpec {
    /// Per-step, per-column arrival probability.
    pub rate: f64,
    pub magnitude: f64,
    /// Scale `magnitude` by each column's sample standard deviation.
    pub relative_to_sd: bool,
    /// Per-step decay factor in (0, 1).
    pub decay: f64,
    /// Columns to perturb; empty means all.
    pub columns: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Impulse {
    pub column: String,
    pub row: usize,
    /// `magnitude * g` with `g` standard normal.
    pub amplitude: f64,
}

/// Everything needed to rebuild the added noise exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseTrack {
    pub decay: f64,
    pub impulses: Vec<Impulse>,
}

fn check_rate_decay(rate: f64, decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("impulse rate must be in [0, 1], got {rate}")));
    }
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::invalid(format!("impulse decay must be in (0, 1), got {decay}")));
    }
    Ok(())
}

/// Draws impulse arrivals and adds their decaying tracks to `frame`.
pub fn add_impulses(frame: &SeriesFrame, spec: &ImpulseSpec) -> Result<(SeriesFrame, ImpulseTrack)> {
    check_rate_decay(spec.rate, spec.decay)?;
    let targets: Vec<String> = if spec.columns.is_empty() {
        frame.names().to_vec()
    } else {
        for c in &spec.columns {
            frame.column_index(c)?;
        }
        spec.columns.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut impulses = Vec::new();
    // Column-major draws keep each column's arrivals independent of the others' count.
    for name in &targets {
        let scale = if spec.relative_to_sd {
            let sd = sample_sd(frame.column(name)?);
            if sd.is_finite() { sd } else { 0.0 }
        } else {
            1.0
        };
        for row in 0..frame.len() {
            if rng.random_bool(spec.rate) {
                let g: f64 = rng.sample(StandardNormal);
                impulses.push(Impulse {
                    column: name.clone(),
                    row,
                    amplitude: spec.magnitude * scale * g,
                });
            }
        }
    }
    let track = ImpulseTrack {
        decay: spec.decay,
        impulses,
    };
    Ok((apply_impulses(frame, &track, 1.0)?, track))
}

/// Noise series for one column: `noise[t] = decay * noise[t-1] + arrivals at t`.
pub fn impulse_series(track: &ImpulseTrack, column: &str, len: usize) -> Vec<f64> {
    let mut arrivals = vec![0.0; len];
    for imp in track.impulses.iter().filter(|i| i.column == column && i.row < len) {
        arrivals[imp.row] += imp.amplitude;
    }
    let mut out = Vec::with_capacity(len);
    let mut level = 0.0;
    for a in arrivals {
        level = track.decay * level + a;
        out.push(level);
    }
    out
}

/// Adds `sign` times the track to the frame; `sign = -1` strips it again.
pub fn apply_impulses(frame: &SeriesFrame, track: &ImpulseTrack, sign: f64) -> Result<SeriesFrame> {
    check_rate_decay(0.0, track.decay)?;
    for imp in &track.impulses {
        frame.column_index(&imp.column)?;
    }
    Ok(frame.map_columns(|name, values| {
        let noise = impulse_series(track, name, values.len());
        values.iter().zip(noise).map(|(v, n)| v + sign * n).collect()
    }))
}

/// CSV with columns `column,row,amplitude,decay`.
pub fn write_track_csv<W: Write>(track: &ImpulseTrack, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["column", "row", "amplitude", "decay"])?;
    let decay = format_float(track.decay);
    for imp in &track.impulses {
        w.write_record([imp.column.as_str(), &imp.row.to_string(), &format_float(imp.amplitude), &decay])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads a track written by [`write_track_csv`]. An empty track needs the
/// decay from elsewhere, so `default_decay` fills it in.
pub fn read_track_csv<R: Read>(reader: R, default_decay: f64) -> Result<ImpulseTrack> {
    let mut r = csv::Reader::from_reader(reader);
    let mut decay = None;
    let mut impulses = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let num = |idx: usize, name: &str| -> Result<f64> {
            rec.get(idx)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.into(),
                    message: "expected a number".into(),
                })
        };
        let step = rec.get(1).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| Error::Parse {
            row,
            column: "row".into(),
            message: "expected a row index".into(),
        })?;
        impulses.push(Impulse {
            column: rec.get(0).unwrap_or_default().to_string(),
            row: step,
            amplitude: num(2, "amplitude")?,
        });
        decay = Some(num(3, "decay")?);
    }
    Ok(ImpulseTrack {
        decay: decay.unwrap_or(default_decay),
        impulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l63(dt: f64, n_steps: usize) -> SystemSpec {
        SystemSpec {
            kind: SystemKind::lorenz63(),
            dt,
            n_steps,
            burn_in: 0,
            initial: InitialCondition::Default,
        }
    }

    #[test]
    fn lorenz63_stays_bounded() {
        let f = integrate(&l63(0.01, 100_000)).unwrap();
        assert_eq!(f.names(), &["x", "y", "z"]);
        assert_eq!(f.len(), 100_000);
        for c in 0..3 {
            assert!(f.column_at(c).iter().all(|v| v.abs() < 100.0));
        }
    }

    #[test]
    fn rho_zero_decays_to_origin() {
        let mut spec = l63(0.01, 2000);
        spec.kind = SystemKind::Lorenz63 {
            sigma: 10.0,
            rho: 0.0,
            beta: 8.0 / 3.0,
        };
        let f = integrate(&spec).unwrap();
        let last: Vec<f64> = (0..3).map(|c| f.column_at(c)[1999]).collect();
        assert!(last.iter().all(|v| v.abs() < 1e-6), "{last:?}");
    }

    #[test]
    fn fourth_order_convergence() {
        let end = |dt: f64, n: usize| -> Vec<f64> {
            let f = integrate(&l63(dt, n)).unwrap();
            (0..3).map(|c| f.column_at(c)[n - 1]).collect()
        };
        // Same end time, 1000 steps at the middle resolution.
        let coarse = end(0.004, 500);
        let mid = end(0.002, 1000);
        let fine = end(0.001, 2000);
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let ratio = dist(&coarse, &mid) / dist(&mid, &fine);
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn burn_in_shifts_the_trajectory() {
        let full = integrate(&l63(0.01, 30)).unwrap();
        let mut spec = l63(0.01, 10);
        spec.burn_in = 20;
        let tail = integrate(&spec).unwrap();
        assert_eq!(tail.column("x").unwrap(), &full.column("x").unwrap()[20..]);
    }

    #[test]
    fn lorenz96_is_chaotic() {
        let spec = |initial| SystemSpec {
            kind: SystemKind::lorenz96(8),
            dt: 0.01,
            n_steps: 3000,
            burn_in: 0,
            initial,
        };
        let base = integrate(&spec(InitialCondition::Default)).unwrap();
        let mut s0 = SystemKind::lorenz96(8).default_state();
        s0[3] += 1e-8;
        let nudged = integrate(&spec(InitialCondition::State(s0))).unwrap();
        let split = (0..3000).find(|&t| (base.column_at(0)[t] - nudged.column_at(0)[t]).abs() > 1e-2);
        assert!(split.is_some());
        assert_eq!(base.names()[7], "x7");
    }

    #[test]
    fn divergence_is_reported() {
        let spec = SystemSpec {
            kind: SystemKind::Lorenz96 {
                dimension: 5,
                forcing: 8.0,
            },
            dt: 5.0,
            n_steps: 1000,
            burn_in: 0,
            initial: InitialCondition::Default,
        };
        assert!(matches!(integrate(&spec), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_specs() {
        let mut s = l63(0.0, 10);
        assert!(integrate(&s).is_err());
        s.dt = 0.01;
        s.initial = InitialCondition::State(vec![1.0, 2.0]);
        assert!(integrate(&s).is_err());
        s.kind = SystemKind::lorenz96(3);
        assert!(integrate(&s).is_err());
    }

    #[test]
    fn seeded_initial_is_deterministic() {
        let mut s = l63(0.01, 50);
        s.initial = InitialCondition::Seeded(4);
        assert_eq!(integrate(&s).unwrap(), integrate(&s).unwrap());
        let mut t = s.clone();
        t.initial = InitialCondition::Seeded(5);
        assert_ne!(integrate(&s).unwrap(), integrate(&t).unwrap());
    }

    fn noise_spec(rate: f64) -> ImpulseSpec {
        ImpulseSpec {
            rate,
            magnitude: 2.0,
            relative_to_sd: false,
            decay: 0.5,
            columns: vec!["x".into()],
            seed: 1,
        }
    }

    #[test]
    fn zero_rate_leaves_frame() {
        let f = integrate(&l63(0.01, 200)).unwrap();
        let (g, track) = add_impulses(&f, &noise_spec(0.0)).unwrap();
        assert_eq!(f, g);
        assert!(track.impulses.is_empty());
    }

    #[test]
    fn single_impulse_is_geometric() {
        let f = SeriesFrame::new(vec![("x".into(), vec![0.0; 6])]).unwrap();
        let track = ImpulseTrack {
            decay: 0.5,
            impulses: vec![Impulse {
                column: "x".into(),
                row: 2,
                amplitude: 3.0,
            }],
        };
        let g = apply_impulses(&f, &track, 1.0).unwrap();
        assert_eq!(g.column("x").unwrap(), &[0.0, 0.0, 3.0, 1.5, 0.75, 0.375]);
    }

    #[test]
    fn poisson_count() {
        let f = SeriesFrame::new(vec![("x".into(), vec![0.0; 100_000])]).unwrap();
        let (_, track) = add_impulses(&f, &noise_spec(0.01)).unwrap();
        let n = track.impulses.len() as f64;
        assert!((n - 1000.0).abs() <= 4.0 * 1000f64.sqrt(), "{n}");
    }

    #[test]
    fn track_round_trip_and_removal() {
        let f = integrate(&l63(0.01, 500)).unwrap();
        let mut spec = noise_spec(0.05);
        spec.columns.clear();
        spec.relative_to_sd = true;
        let (noisy, track) = add_impulses(&f, &spec).unwrap();
        assert_ne!(noisy, f);
        let mut buf = Vec::new();
        write_track_csv(&track, &mut buf).unwrap();
        let back = read_track_csv(buf.as_slice(), 0.9).unwrap();
        assert_eq!(back, track);
        assert_eq!(apply_impulses(&f, &back, 1.0).unwrap(), noisy);
        let clean = apply_impulses(&noisy, &back, -1.0).unwrap();
        for c in 0..3 {
            for (a, b) in clean.column_at(c).iter().zip(f.column_at(c)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn spec_display() {
        let text = l63(0.01, 10).to_string();
        assert!(text.starts_with("system = lorenz63\nsigma = 10\n"));
        assert!(text.contains("n_steps = 10\n"));
    }
}
