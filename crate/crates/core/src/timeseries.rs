//! Multivariate series loading, differencing and walk-forward windowing.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// A multivariate series on an integer step index.
///
/// Row `r` of the frame sits at step `start + r`. Differencing advances
/// `start` so that every value keeps its original time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    start: usize,
    dates: Option<Dates>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dates {
    name: String,
    values: Vec<NaiveDate>,
}

impl SeriesFrame {
    pub fn new(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("frame needs at least one column"));
        }
        let len = columns[0].1.len();
        if len == 0 {
            return Err(Error::insufficient("frame needs at least one row"));
        }
        let mut seen = HashSet::new();
        for (name, values) in &columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
            if values.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    found: values.len(),
                });
            }
        }
        let (names, columns) = columns.into_iter().unzip();
        Ok(SeriesFrame {
            names,
            columns,
            start: 0,
            dates: None,
        })
    }

    /// Attaches calendar dates; they must be strictly increasing and one per row.
    pub fn with_dates(mut self, name: impl Into<String>, dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: dates.len(),
            });
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "dates not strictly increasing at row {}",
                i + 2
            )));
        }
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.dates = Some(Dates { name, values: dates });
        Ok(self)
    }

    pub fn with_start(mut self, start: usize) -> Self {
        self.start = start;
        self
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_ref().map(|d| d.values.as_slice())
    }

    pub fn date_at(&self, row: usize) -> Option<NaiveDate> {
        self.dates.as_ref().map(|d| d.values[row])
    }

    /// Step stamp of a row.
    pub fn step(&self, row: usize) -> usize {
        self.start + row
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<SeriesFrame> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            cols.push((n.clone(), self.column(n)?.to_vec()));
        }
        let mut out = SeriesFrame::new(cols)?;
        out.start = self.start;
        out.dates = self.dates.clone();
        Ok(out)
    }

    /// Returns a copy with every column replaced by `f(name, values)`.
    pub fn map_columns<F>(&self, mut f: F) -> SeriesFrame
    where
        F: FnMut(&str, &[f64]) -> Vec<f64>,
    {
        let columns = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(n, c)| {
                let out = f(n, c);
                assert_eq!(out.len(), c.len(), "map_columns must preserve length");
                out
            })
            .collect();
        SeriesFrame {
            names: self.names.clone(),
            columns,
            start: self.start,
            dates: self.dates.clone(),
        }
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = Vec::new();
        if let Some(d) = &self.dates {
            header.push(&d.name);
        }
        header.extend(self.names.iter().map(String::as_str));
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for row in 0..self.len() {
            record.clear();
            if let Some(d) = &self.dates {
                record.push(d.values[row].format(DATE_FORMAT).to_string());
            }
            record.extend(self.columns.iter().map(|c| format_float(c[row])));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

pub fn load_csv(path: impl AsRef<Path>, date_column: Option<&str>) -> Result<SeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, date_column)
}

/// Parses a header-first CSV. Every non-date column must hold finite floats.
pub fn read_csv<R: Read>(reader: R, date_column: Option<&str>) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateName(h.clone()));
        }
    }
    let date_idx = match date_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))?,
        ),
        None => None,
    };
    let value_idx: Vec<usize> = (0..header.len()).filter(|&i| Some(i) != date_idx).collect();
    if value_idx.is_empty() {
        return Err(Error::invalid("csv has no value columns"));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_idx.len()];
    let mut dates = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != header.len() {
            return Err(Error::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        if let Some(di) = date_idx {
            let cell = &record[di];
            let d = NaiveDate::parse_from_str(cell, DATE_FORMAT).map_err(|e| Error::Parse {
                row,
                column: header[di].clone(),
                message: format!("bad date `{cell}`: {e}"),
            })?;
            dates.push(d);
        }
        for (slot, &ci) in value_idx.iter().enumerate() {
            let cell = &record[ci];
            if cell.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: header[ci].clone(),
                    message: "missing value".into(),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header[ci].clone(),
                message: format!("not a number: `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[ci].clone(),
                    message: format!("non-finite value `{cell}`"),
                });
            }
            columns[slot].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::insufficient("csv has a header but no rows"));
    }
    let cols = value_idx
        .iter()
        .map(|&i| header[i].clone())
        .zip(columns)
        .collect();
    let frame = SeriesFrame::new(cols)?;
    match date_idx {
        Some(di) => frame.with_dates(header[di].clone(), dates),
        None => Ok(frame),
    }
}

/// How levels are turned into changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Differencing {
    /// `v[t] - v[t-1]`
    #[default]
    Raw,
    /// `ln v[t] - ln v[t-1]`; levels must be positive.
    Log,
}

/// First difference of one column, stamped at the later time.
pub fn first_difference(frame: &SeriesFrame, column: &str) -> Result<SeriesFrame> {
    let single = frame.select(&[column.to_string()])?;
    difference_all(&single, Differencing::Raw)
}

/// Differences every column; the result has `T - 1` rows starting one step later.
pub fn difference_all(frame: &SeriesFrame, mode: Differencing) -> Result<SeriesFrame> {
    if frame.len() < 2 {
        return Err(Error::insufficient("differencing needs at least 2 rows"));
    }
    let mut cols = Vec::with_capacity(frame.n_columns());
    for (name, values) in frame.names.iter().zip(&frame.columns) {
        let d: Vec<f64> = match mode {
            Differencing::Raw => values.windows(2).map(|w| w[1] - w[0]).collect(),
            Differencing::Log => {
                if let Some(v) = values.iter().find(|v| **v <= 0.0) {
                    return Err(Error::invalid(format!(
                        "log differencing of `{name}` needs positive levels, found {v}"
                    )));
                }
                values.windows(2).map(|w| w[1].ln() - w[0].ln()).collect()
            }
        };
        cols.push((name.clone(), d));
    }
    let mut out = SeriesFrame::new(cols)?;
    out.start = frame.start + 1;
    out.dates = frame.dates.as_ref().map(|d| Dates {
        name: d.name.clone(),
        values: d.values[1..].to_vec(),
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub fit_len: usize,
    pub select_len: usize,
    pub test_len: usize,
    pub stride: usize,
}

impl WindowPlan {
    /// Plan whose stride equals the test length, so test ranges tile.
    pub fn tiled(fit_len: usize, select_len: usize, test_len: usize) -> Self {
        WindowPlan {
            fit_len,
            select_len,
            test_len,
            stride: test_len,
        }
    }

    pub fn span(&self) -> usize {
        self.fit_len + self.select_len + self.test_len
    }

    pub fn validate(&self, total: usize) -> Result<()> {
        if self.fit_len == 0 || self.select_len == 0 || self.test_len == 0 || self.stride == 0 {
            return Err(Error::invalid(format!("window lengths must be >= 1: {self:?}")));
        }
        // Smaller strides would make test ranges overlap.
        if self.stride < self.test_len {
            return Err(Error::invalid(format!(
                "stride {} shorter than test length {}",
                self.stride, self.test_len
            )));
        }
        if self.span() > total {
            return Err(Error::insufficient(format!(
                "window span {} exceeds series length {total}",
                self.span()
            )));
        }
        Ok(())
    }
}

/// Row ranges of one walk-forward window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub fit: Range<usize>,
    pub select: Range<usize>,
    pub test: Range<usize>,
}

impl Window {
    pub fn start(&self) -> usize {
        self.fit.start
    }
}

/// Windows advanced by `stride`; a trailing window that would not fit is dropped.
pub fn walk_forward_windows(total: usize, plan: &WindowPlan) -> Result<Vec<Window>> {
    plan.validate(total)?;
    let mut out = Vec::new();
    let mut start = 0;
    while start + plan.span() <= total {
        let fit_end = start + plan.fit_len;
        let sel_end = fit_end + plan.select_len;
        out.push(Window {
            fit: start..fit_end,
            select: fit_end..sel_end,
            test: sel_end..sel_end + plan.test_len,
        });
        start += plan.stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(v: &[f64]) -> SeriesFrame {
        SeriesFrame::new(vec![("v".into(), v.to_vec())]).unwrap()
    }

    #[test]
    fn three_row_csv_with_dates() {
        let csv = "date,djia\n2001-01-02,10.5\n2001-01-03,11\n2001-01-04,9.25\n";
        let f = read_csv(csv.as_bytes(), Some("date")).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.n_columns(), 1);
        assert_eq!(f.column("djia").unwrap(), &[10.5, 11.0, 9.25]);
        assert_eq!(f.date_at(2), NaiveDate::from_ymd_opt(2001, 1, 4));
    }

    #[test]
    fn duplicate_headers_rejected() {
        let csv = "a,a\n1,2\n";
        assert!(matches!(read_csv(csv.as_bytes(), None), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn ragged_and_non_numeric_rows_report_position() {
        let err = read_csv("a,b\n1,2\n3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { row: 3, .. }), "{err}");
        let err = read_csv("a,b\n1,2\n3,x\n".as_bytes(), None).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(read_csv("a\n1\n\n".as_bytes(), None).is_ok());
        assert!(matches!(
            read_csv("a,b\n1,\n".as_bytes(), None),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv", None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn non_increasing_dates_rejected() {
        let csv = "date,x\n2001-01-02,1\n2001-01-02,2\n";
        assert!(read_csv(csv.as_bytes(), Some("date")).is_err());
    }

    #[test]
    fn first_difference_examples() {
        let d = first_difference(&frame(&[1.0, 3.0, 6.0]), "v").unwrap();
        assert_eq!(d.column("v").unwrap(), &[2.0, 3.0]);
        assert_eq!(d.start(), 1);
        let d = first_difference(&frame(&[5.0, 5.0, 5.0]), "v").unwrap();
        assert_eq!(d.column("v").unwrap(), &[0.0, 0.0]);
        assert!(first_difference(&frame(&[1.0]), "v").is_err());
        assert!(matches!(
            first_difference(&frame(&[1.0, 2.0]), "w"),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn log_difference_needs_positive_levels() {
        let f = frame(&[1.0, std::f64::consts::E]);
        let d = difference_all(&f, Differencing::Log).unwrap();
        assert!((d.column("v").unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(difference_all(&frame(&[1.0, 0.0]), Differencing::Log).is_err());
    }

    #[test]
    fn windows_small_case() {
        let plan = WindowPlan {
            fit_len: 3,
            select_len: 2,
            test_len: 2,
            stride: 2,
        };
        let w = walk_forward_windows(10, &plan).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0], Window { fit: 0..3, select: 3..5, test: 5..7 });
        assert_eq!(w[1], Window { fit: 2..5, select: 5..7, test: 7..9 });
    }

    #[test]
    fn windows_exact_fit_and_errors() {
        let plan = WindowPlan::tiled(3, 2, 2);
        assert_eq!(walk_forward_windows(7, &plan).unwrap().len(), 1);
        assert!(walk_forward_windows(6, &plan).is_err());
        let overlapping = WindowPlan { stride: 1, ..plan };
        assert!(walk_forward_windows(20, &overlapping).is_err());
    }

    #[test]
    fn trading_day_windows_tile_post_training_era() {
        // 6y fit, 2y select, 2y test at 250 steps/year. One window spans
        // 2500 steps, so a 2000-step series cannot hold it.
        let plan = WindowPlan::tiled(1500, 500, 500);
        assert!(walk_forward_windows(2000, &plan).is_err());
        // 20 years: windows start every 500 steps up to 2500.
        let w = walk_forward_windows(5000, &plan).unwrap();
        assert_eq!(w.len(), 6);
        let tests: Vec<_> = w.iter().map(|w| w.test.clone()).collect();
        let expected: Vec<_> = (0..6).map(|i| 2000 + 500 * i..2500 + 500 * i).collect();
        assert_eq!(tests, expected);
    }

    proptest! {
        #[test]
        fn difference_inverts_by_cumsum(v in proptest::collection::vec(-1e3f64..1e3, 2..100)) {
            let d = first_difference(&frame(&v), "v").unwrap();
            let d = d.column("v").unwrap();
            prop_assert_eq!(d.len(), v.len() - 1);
            let mut acc = v[0];
            for (i, x) in d.iter().enumerate() {
                acc += x;
                prop_assert!((acc - v[i + 1]).abs() <= 1e-9 * (1.0 + v[i + 1].abs()));
            }
            let total: f64 = d.iter().sum();
            let end = v[v.len() - 1] - v[0];
            prop_assert!((total - end).abs() <= 1e-12 * v.iter().map(|x| x.abs()).sum::<f64>().max(1.0));
        }

        #[test]
        fn csv_round_trip_is_bit_exact(v in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..50)) {
            let f = frame(&v);
            let mut buf = Vec::new();
            f.to_csv_writer(&mut buf).unwrap();
            let back = read_csv(buf.as_slice(), None).unwrap();
            let got = back.column("v").unwrap();
            for (a, b) in got.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn every_test_step_in_exactly_one_window(
            fit in 1usize..20, sel in 1usize..20, test in 1usize..20, extra in 0usize..5, total in 1usize..300,
        ) {
            let plan = WindowPlan { fit_len: fit, select_len: sel, test_len: test, stride: test + extra };
            if let Ok(ws) = walk_forward_windows(total, &plan) {
                let mut hits = vec![0usize; total];
                for w in &ws {
                    prop_assert_eq!(w.fit.end, w.select.start);
                    prop_assert_eq!(w.select.end, w.test.start);
                    prop_assert!(w.test.end <= total);
                    for t in w.test.clone() { hits[t] += 1; }
                }
                prop_assert!(hits.iter().all(|&h| h <= 1));
                if extra == 0 {
                    let first = ws[0].test.start;
                    let last = ws.last().unwrap().test.end;
                    prop_assert!(hits[first..last].iter().all(|&h| h == 1));
                }
            }
        }
    }
}
