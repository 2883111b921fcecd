//! Coordinate universes, delay-map sampling and regression design materialization.
//!
//! A delay map is a set of lagged measurements `(variable, lag)` together
//! with a target column predicted `lead` steps past the most recent
//! regressor. Two samplers are provided: independent random draws, where
//! maps may share coordinates, and random disjoint partitioning, where every
//! map within one partition uses coordinates no other map in that partition
//! touches.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::timeseries::SeriesFrame;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coordinate {
    pub variable: String,
    /// Steps back from the most recent available time; always >= 1.
    pub lag: usize,
}

impl Coordinate {
    pub fn new(variable: impl Into<String>, lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::invalid("coordinate lag must be >= 1"));
        }
        Ok(Coordinate {
            variable: variable.into(),
            lag,
        })
    }
}

/// What a delay map predicts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapTarget {
    pub target: String,
    pub lead: usize,
}

impl MapTarget {
    pub fn new(target: impl Into<String>, lead: usize) -> Result<Self> {
        if lead == 0 {
            return Err(Error::invalid("lead must be >= 1"));
        }
        Ok(MapTarget {
            target: target.into(),
            lead,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayMap {
    pub id: usize,
    /// Partition the map was cut from; `None` for independently sampled maps.
    pub partition: Option<usize>,
    pub coords: Vec<Coordinate>,
    pub target: String,
    pub lead: usize,
}

impl DelayMap {
    pub fn new(id: usize, coords: Vec<Coordinate>, target: &MapTarget) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &coords {
            if c.lag == 0 {
                return Err(Error::invalid("coordinate lag must be >= 1"));
            }
            if !seen.insert(c) {
                return Err(Error::invalid(format!(
                    "map {id} repeats coordinate ({}, {})",
                    c.variable, c.lag
                )));
            }
        }
        if target.lead == 0 {
            return Err(Error::invalid("lead must be >= 1"));
        }
        Ok(DelayMap {
            id,
            partition: None,
            coords,
            target: target.target.clone(),
            lead: target.lead,
        })
    }

    pub fn k(&self) -> usize {
        self.coords.len()
    }

    pub fn max_lag(&self) -> usize {
        self.coords.iter().map(|c| c.lag).max().unwrap_or(0)
    }

    /// First frame row whose target has a full regressor history.
    pub fn first_target_row(&self) -> usize {
        self.max_lag() + self.lead - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateUniverse {
    coords: Vec<Coordinate>,
}

impl CoordinateUniverse {
    pub fn coords(&self) -> &[Coordinate] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// All `(variable, lag)` pairs for lags `1..=max_lag`, variable-major.
pub fn build_universe(variables: &[String], max_lag: usize) -> Result<CoordinateUniverse> {
    if variables.is_empty() {
        return Err(Error::invalid("universe needs at least one variable"));
    }
    if max_lag == 0 {
        return Err(Error::invalid("max_lag must be >= 1"));
    }
    let mut seen = HashSet::new();
    for v in variables {
        if !seen.insert(v) {
            return Err(Error::DuplicateName(v.clone()));
        }
    }
    let coords = variables
        .iter()
        .flat_map(|v| {
            (1..=max_lag).map(move |lag| Coordinate {
                variable: v.clone(),
                lag,
            })
        })
        .collect();
    Ok(CoordinateUniverse { coords })
}

fn check_k(universe: &CoordinateUniverse, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("map size k must be >= 1"));
    }
    if k > universe.len() {
        return Err(Error::invalid(format!(
            "map size {k} exceeds universe size {}",
            universe.len()
        )));
    }
    Ok(())
}

/// `count` maps of `k` distinct coordinates each, drawn independently.
pub fn sample_random_maps(
    universe: &CoordinateUniverse,
    k: usize,
    count: usize,
    target: &MapTarget,
    seed: u64,
) -> Result<Vec<DelayMap>> {
    check_k(universe, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|id| {
            let picks = index::sample(&mut rng, universe.len(), k);
            let coords = picks.iter().map(|i| universe.coords[i].clone()).collect();
            DelayMap::new(id, coords, target)
        })
        .collect()
}

/// `partitions` independent shuffles of the universe, each cut into
/// `floor(|U| / k)` disjoint blocks. Leftover coordinates are dropped.
pub fn sample_disjoint_partitions(
    universe: &CoordinateUniverse,
    k: usize,
    partitions: usize,
    target: &MapTarget,
    seed: u64,
) -> Result<Vec<DelayMap>> {
    check_k(universe, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = universe.len() / k;
    let mut maps = Vec::with_capacity(per * partitions);
    let mut order: Vec<usize> = (0..universe.len()).collect();
    for p in 0..partitions {
        order.sort_unstable();
        order.shuffle(&mut rng);
        for block in order.chunks_exact(k) {
            let coords = block.iter().map(|&i| universe.coords[i].clone()).collect();
            let mut map = DelayMap::new(maps.len(), coords, target)?;
            map.partition = Some(p);
            maps.push(map);
        }
    }
    Ok(maps)
}

/// A regression design: one row per target time.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Step stamp of each row's target.
    pub times: Vec<usize>,
}

impl Design {
    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

struct ResolvedMap {
    target: usize,
    coords: Vec<(usize, usize)>,
}

fn resolve(frame: &SeriesFrame, map: &DelayMap) -> Result<ResolvedMap> {
    let target = frame.column_index(&map.target)?;
    let coords = map
        .coords
        .iter()
        .map(|c| Ok((frame.column_index(&c.variable)?, c.lag)))
        .collect::<Result<_>>()?;
    Ok(ResolvedMap { target, coords })
}

/// Design over every target row with full history.
pub fn materialize_design(frame: &SeriesFrame, map: &DelayMap) -> Result<Design> {
    let first = map.first_target_row();
    if first >= frame.len() {
        return Err(Error::insufficient(format!(
            "map {} needs {} rows of history, frame has {}",
            map.id,
            first + 1,
            frame.len()
        )));
    }
    materialize_range(frame, map, first..frame.len())
}

/// Design for targets at frame rows `rows`.
///
/// The regressor for coordinate `(v, lag)` and target row `s` is
/// `v[s - lead - (lag - 1)]`, so lag 1 is `lead` steps before the target.
pub fn materialize_range(frame: &SeriesFrame, map: &DelayMap, rows: Range<usize>) -> Result<Design> {
    let resolved = resolve(frame, map)?;
    let first = map.first_target_row();
    if rows.start < first {
        return Err(Error::insufficient(format!(
            "target row {} precedes the first row with full history ({first}) for map {}",
            rows.start, map.id
        )));
    }
    if rows.end > frame.len() || rows.is_empty() {
        return Err(Error::insufficient(format!(
            "target rows {rows:?} not inside frame of {} rows",
            frame.len()
        )));
    }
    let n = rows.len();
    let k = resolved.coords.len();
    let x = DMatrix::from_fn(n, k, |r, c| {
        let s = rows.start + r;
        let (col, lag) = resolved.coords[c];
        frame.column_at(col)[s - map.lead - (lag - 1)]
    });
    let target = frame.column_at(resolved.target);
    let y = rows.clone().map(|s| target[s]).collect();
    let times = rows.map(|s| frame.step(s)).collect();
    Ok(Design { x, y, times })
}

/// Writes one line per coordinate: `map_id,partition_id,variable,lag,target,lead`.
pub fn write_maps_csv<W: Write>(maps: &[DelayMap], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["map_id", "partition_id", "variable", "lag", "target", "lead"])?;
    for m in maps {
        let part = m.partition.map(|p| p.to_string()).unwrap_or_default();
        for c in &m.coords {
            w.write_record([
                m.id.to_string(),
                part.clone(),
                c.variable.clone(),
                c.lag.to_string(),
                m.target.clone(),
                m.lead.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_maps_csv<R: Read>(reader: R) -> Result<Vec<DelayMap>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut maps: Vec<DelayMap> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |idx: usize, name: &str| -> Result<String> {
            rec.get(idx).map(str::to_string).ok_or(Error::Parse {
                row,
                column: name.into(),
                message: "missing field".into(),
            })
        };
        let num = |idx: usize, name: &str| -> Result<usize> {
            field(idx, name)?.parse().map_err(|_| Error::Parse {
                row,
                column: name.into(),
                message: "not an integer".into(),
            })
        };
        let id = num(0, "map_id")?;
        let part = field(1, "partition_id")?;
        let partition = if part.is_empty() { None } else { Some(num(1, "partition_id")?) };
        let coord = Coordinate::new(field(2, "variable")?, num(3, "lag")?)?;
        let target = MapTarget::new(field(4, "target")?, num(5, "lead")?)?;
        match maps.last_mut() {
            Some(m) if m.id == id => m.coords.push(coord),
            _ => {
                let mut m = DelayMap::new(id, vec![coord], &target)?;
                m.partition = partition;
                maps.push(m);
            }
        }
    }
    for m in &maps {
        // Re-validate distinctness after grouping.
        DelayMap::new(m.id, m.coords.clone(), &MapTarget::new(m.target.clone(), m.lead)?)?;
    }
    Ok(maps)
}
