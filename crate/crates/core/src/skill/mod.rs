//! Binary skill matrices, the conditional permutation test on them, and
//! Benjamini-Hochberg screening of the resulting p-values.

mod kde;
mod permutation;

use std::io::{Read, Write};

pub use kde::{silverman_bandwidth, Kde};
pub use permutation::{conditional_test, ConditionalTestConfig, ConditionalTestResult, ReferenceMode};

use crate::error::{Error, Result};
use crate::timeseries::format_float;

/// Models by seasons, 1 where the model's forecast beat climatology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillMatrix {
    models: Vec<String>,
    seasons: Vec<String>,
    rows: Vec<Vec<u8>>,
}

impl SkillMatrix {
    pub fn new(models: Vec<String>, seasons: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if rows.len() != models.len() {
            return Err(Error::DimensionMismatch {
                expected: models.len(),
                found: rows.len(),
            });
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != seasons.len() {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: seasons.len(),
                    found: r.len(),
                });
            }
            if let Some(v) = r.iter().find(|v| **v > 1) {
                return Err(Error::invalid(format!("skill matrix entries must be 0 or 1, found {v}")));
            }
        }
        Ok(SkillMatrix { models, seasons, rows })
    }

    /// Labels models and seasons by their 0-based index.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let s = rows.first().map_or(0, Vec::len);
        let models = (0..rows.len()).map(|i| i.to_string()).collect();
        let seasons = (0..s).map(|j| j.to_string()).collect();
        SkillMatrix::new(models, seasons, rows)
    }

    pub fn n_models(&self) -> usize {
        self.rows.len()
    }

    pub fn n_seasons(&self) -> usize {
        self.seasons.len()
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn seasons(&self) -> &[String] {
        &self.seasons
    }

    pub fn get(&self, model: usize, season: usize) -> u8 {
        self.rows[model][season]
    }

    pub fn column(&self, season: usize) -> Vec<u8> {
        self.rows.iter().map(|r| r[season]).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.rows.iter().flatten().filter(|v| **v == 1).count()
    }

    /// Header `model,<season labels>`, then one 0/1 row per model.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("model").chain(self.seasons.iter().map(String::as_str)))?;
        for (label, row) in self.models.iter().zip(&self.rows) {
            w.write_record(std::iter::once(label.clone()).chain(row.iter().map(u8::to_string)))?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::invalid("skill matrix CSV needs a label column and at least one season"));
        }
        let seasons: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut models = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            if rec.len() != header.len() {
                return Err(Error::RaggedRow {
                    row,
                    expected: header.len(),
                    found: rec.len(),
                });
            }
            models.push(rec[0].to_string());
            let cells = rec
                .iter()
                .skip(1)
                .zip(&seasons)
                .map(|(cell, season)| match cell {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Parse {
                        row,
                        column: season.clone(),
                        message: format!("expected 0 or 1, found `{other}`"),
                    }),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(cells);
        }
        SkillMatrix::new(models, seasons, rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinarySkill {
    pub matrix: SkillMatrix,
    /// `(model, season)` cells whose ensemble sample had no spread.
    pub degenerate_cells: Vec<(usize, usize)>,
    pub historic_degenerate: bool,
}

/// Marks each (sequence, season) with 1 when the observed value is strictly
/// more likely under a kernel density of the ensemble members than under
/// one of the historic sample.
///
/// `members[i][j]` holds the member predictions of sequence `i` for season `j`.
pub fn binary_skill_matrix(members: &[Vec<Vec<f64>>], observed: &[f64], historic: &[f64]) -> Result<BinarySkill> {
    let climate = Kde::fit(historic)?;
    if climate.degenerate {
        log::warn!("historic sample has no spread; bandwidth floor applied");
    }
    let mut degenerate_cells = Vec::new();
    let mut rows = Vec::with_capacity(members.len());
    for (i, seq) in members.iter().enumerate() {
        if seq.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                expected: observed.len(),
                found: seq.len(),
            });
        }
        let mut row = Vec::with_capacity(seq.len());
        for (j, (ens, &obs)) in seq.iter().zip(observed).enumerate() {
            let k = Kde::fit(ens)?;
            if k.degenerate {
                degenerate_cells.push((i, j));
            }
            row.push(u8::from(k.density(obs) > climate.density(obs)));
        }
        rows.push(row);
    }
    if !degenerate_cells.is_empty() {
        log::warn!("{} ensemble samples had no spread; bandwidth floor applied", degenerate_cells.len());
    }
    Ok(BinarySkill {
        matrix: SkillMatrix::from_rows(rows)?,
        degenerate_cells,
        historic_degenerate: climate.degenerate,
    })
}

/// Benjamini-Hochberg step-up selection at level `q`; returns the selected
/// indices in ascending order.
pub fn fdr_select(p_values: &[f64], q: f64) -> Result<Vec<usize>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-values must lie in [0, 1], found {p}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cutoff = (1..=m)
        .rev()
        .find(|&rank| p_values[order[rank - 1]] <= rank as f64 / m as f64 * q);
    let mut selected: Vec<usize> = match cutoff {
        Some(rank) => order[..rank].to_vec(),
        None => Vec::new(),
    };
    selected.sort_unstable();
    Ok(selected)
}

/// One line of a test report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub statistic: f64,
    pub p_value: f64,
    pub top_k: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl ReportRow {
    pub fn from_result(label: impl Into<String>, r: &ConditionalTestResult) -> Self {
        ReportRow {
            label: label.into(),
            statistic: r.statistic,
            p_value: r.p_value,
            top_k: r.top_k,
            n_perm: r.n_perm,
            seed: r.seed,
        }
    }
}

/// CSV with columns `label,statistic,p_value,top_k,n_perm,seed`.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "statistic", "p_value", "top_k", "n_perm", "seed"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            format_float(r.statistic),
            format_float(r.p_value),
            r.top_k.to_string(),
            r.n_perm.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn separated_ensemble_scores_one() {
        let members = vec![vec![vec![0.9, 1.0, 1.1]]];
        let s = binary_skill_matrix(&members, &[1.0], &[10.0, 12.0, 14.0]).unwrap();
        assert_eq!(s.matrix.get(0, 0), 1);
    }

    #[test]
    fn identical_samples_score_zero() {
        let sample = vec![0.3, 1.7, 2.2, 4.0];
        let members = vec![vec![sample.clone(), sample.clone()]];
        let s = binary_skill_matrix(&members, &[1.0, 3.0], &sample).unwrap();
        assert_eq!(s.matrix.get(0, 0), 0);
        assert_eq!(s.matrix.get(0, 1), 0);
    }

    #[test]
    fn hand_kde_comparison() {
        // Ensemble {0, 1, 2}: sd 1, IQR 1; historic {0, 2, 6}: sd 3.06, IQR 3.
        let h_e = 0.9 * (1.0 / 1.34) * 3f64.powf(-0.2);
        let h_h = 0.9 * (3.0 / 1.34) * 3f64.powf(-0.2);
        let dens = |xs: &[f64], h: f64, x: f64| {
            xs.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() / (3.0 * h * (2.0 * PI).sqrt())
        };
        let ens = [0.0, 1.0, 2.0];
        let hist = [0.0, 2.0, 6.0];
        let obs = [1.0, 5.5, 3.0];
        let members = vec![vec![ens.to_vec(); 3]];
        let s = binary_skill_matrix(&members, &obs, &hist).unwrap();
        for (j, &o) in obs.iter().enumerate() {
            let want = u8::from(dens(&ens, h_e, o) > dens(&hist, h_h, o));
            assert_eq!(s.matrix.get(0, j), want, "season {j}");
        }
        assert_eq!(s.matrix.column(1), vec![0]);
        assert_eq!(s.matrix.column(0), vec![1]);
    }

    #[test]
    fn degenerate_ensembles_flagged() {
        let members = vec![vec![vec![2.0, 2.0]]];
        let s = binary_skill_matrix(&members, &[2.0], &[0.0, 1.0, 5.0]).unwrap();
        assert_eq!(s.degenerate_cells, vec![(0, 0)]);
        assert_eq!(s.matrix.get(0, 0), 1);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = SkillMatrix::new(
            vec!["a".into(), "b".into()],
            vec!["1990".into(), "1991".into(), "1992".into()],
            vec![vec![1, 0, 1], vec![0, 0, 1]],
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "model,1990,1991,1992\na,1,0,1\nb,0,0,1\n");
        assert_eq!(SkillMatrix::read_csv(buf.as_slice()).unwrap(), m);
        assert!(SkillMatrix::read_csv("model,s\nx,2\n".as_bytes()).is_err());
        assert!(SkillMatrix::from_rows(vec![vec![0, 3]]).is_err());
    }

    #[test]
    fn fdr_hand_cases() {
        assert_eq!(fdr_select(&[0.001, 0.02, 0.04, 0.2], 0.05).unwrap(), vec![0, 1]);
        assert!(fdr_select(&[1.0; 5], 0.05).unwrap().is_empty());
        assert_eq!(fdr_select(&[0.04], 0.05).unwrap(), vec![0]);
        // Step-up: rank 3 passes (0.03 <= 0.0375) though rank 2 alone fails.
        assert_eq!(fdr_select(&[0.03, 0.026, 0.5, 0.03], 0.05).unwrap(), vec![0, 1, 3]);
        assert!(fdr_select(&[0.5, 1.5], 0.05).is_err());
    }

    #[test]
    fn report_layout() {
        let rows = [ReportRow {
            label: "lag1".into(),
            statistic: 3.5,
            p_value: 0.002,
            top_k: 4,
            n_perm: 1000,
            seed: 7,
        }];
        let mut buf = Vec::new();
        write_report_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "label,statistic,p_value,top_k,n_perm,seed\nlag1,3.5,0.002,4,1000,7\n"
        );
    }

    proptest! {
        #[test]
        fn fdr_monotone_in_q(p in prop::collection::vec(0.0f64..=1.0, 0..30), q1 in 0.0f64..0.5, dq in 0.0f64..0.5) {
            let small = fdr_select(&p, q1).unwrap();
            let large = fdr_select(&p, q1 + dq).unwrap();
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}
