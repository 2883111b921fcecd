use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CliResult, Failure, RunLog};
use crate::backtest::{run_backtest, write_metrics_rows, BacktestConfig, METRICS_HEADER};
use crate::config::RunConfig;
use crate::embedding::write_maps_csv;
use crate::ensemble::write_pool_csv;
use crate::error::{Error, Result};
use crate::forecast::{compare_sampling, disjoint_map_count, summarize, walk_forward, ForecastConfig, Sampling};
use crate::regress::{write_models_csv, LinearModel};
use crate::skill::{conditional_test, fdr_select, write_report_csv, ReportRow, SkillMatrix};
use crate::synth::{add_impulses, integrate, write_track_csv};
use crate::timeseries::{difference_all, format_float, load_csv, SeriesFrame};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn first_line(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    Ok(line.trim().to_string())
}

/// Loads a data CSV. The date column is the configured one, or a column
/// named `date` when none is configured.
pub fn load_frame(cfg: &RunConfig, path: &Path) -> Result<SeriesFrame> {
    let date = match cfg.date_column() {
        Some(d) => Some(d),
        None => first_line(path)?
            .split(',')
            .any(|h| h.trim() == "date")
            .then(|| "date".to_string()),
    };
    load_csv(path, date.as_deref())
}

/// Keeps the forecast's variables and target, differencing if configured.
fn model_frame(frame: &SeriesFrame, fc: &ForecastConfig, cfg: &RunConfig) -> Result<(SeriesFrame, bool)> {
    let mut names = fc.variables.clone();
    if !names.contains(&fc.target) {
        names.push(fc.target.clone());
    }
    let selected = frame.select(&names)?;
    Ok(match cfg.differencing(false)? {
        Some(mode) => (difference_all(&selected, mode)?, true),
        None => (selected, false),
    })
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> CliResult<()> {
    let spec = cfg.system_spec().map_err(Failure::config)?;
    let impulses = cfg.impulse_spec().map_err(Failure::config)?;
    let clean = log.stage("integrate", || integrate(&spec))?;
    let mut meta = spec.to_string();
    let frame = match &impulses {
        Some(imp) => {
            let (noisy, track) = log.stage("impulses", || add_impulses(&clean, imp))?;
            write_with(&out.join("impulses.csv"), |w| write_track_csv(&track, w))?;
            meta.push_str(&format!(
                "impulse_rate = {}\nimpulse_magnitude = {}\nimpulse_relative = {}\nimpulse_decay = {}\nimpulse_columns = {}\nimpulse_seed = {}\nimpulse_count = {}\n",
                imp.rate,
                imp.magnitude,
                imp.relative_to_sd,
                imp.decay,
                imp.columns.join(","),
                imp.seed,
                track.impulses.len()
            ));
            log.note(format!("impulses {}", track.impulses.len()));
            noisy
        }
        None => clean,
    };
    frame.write_csv(out.join("trajectory.csv"))?;
    std::fs::write(out.join("trajectory.meta.txt"), meta).map_err(|e| Error::io(out.join("trajectory.meta.txt"), e))?;
    log.note(format!("rows {}", frame.len()));
    Ok(())
}

pub fn cmd_forecast(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> CliResult<()> {
    let raw = load_frame(cfg, data).map_err(Failure::data)?;
    let fc = cfg.forecast_config(raw.names()).map_err(Failure::config)?;
    let plan = cfg.plan().map_err(Failure::config)?;
    let seed = cfg.seed().map_err(Failure::config)?;
    let (frame, differenced) = model_frame(&raw, &fc, cfg).map_err(Failure::data)?;
    let runs = log.stage("forecast", || walk_forward(&frame, &plan, &fc, seed)).map_err(Failure::data)?;

    write_with(&out.join("predictions.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["window", "step", "date", "observed", "prediction"])?;
        for (i, run) in runs.iter().enumerate() {
            for (j, row) in run.test_rows.clone().enumerate() {
                c.write_record([
                    i.to_string(),
                    frame.step(row).to_string(),
                    frame.date_at(row).map(|d| d.to_string()).unwrap_or_default(),
                    format_float(run.observed[j]),
                    format_float(run.predictions[j]),
                ])?;
            }
        }
        c.flush().map_err(|e| Error::io("predictions.csv", e))
    })?;
    for (i, run) in runs.iter().enumerate() {
        let dir = out.join("windows").join(format!("w{i:03}"));
        mkdir(&dir)?;
        write_with(&dir.join("maps.csv"), |w| write_maps_csv(&run.maps, w))?;
        write_with(&dir.join("pool.csv"), |w| write_pool_csv(&run.pool, w))?;
        let models: Vec<LinearModel> = run.pool.entries().iter().map(|e| e.model.clone()).collect();
        write_with(&dir.join("models.csv"), |w| write_models_csv(&models, w))?;
    }
    let summary = summarize(&frame, &runs, &fc, differenced)?;
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    write_with(&out.join("summary.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["metric", "value"])?;
        c.write_record(["windows", &summary.windows.to_string()])?;
        c.write_record(["test_points", &summary.test_points.to_string()])?;
        c.write_record(["maps_per_window", &runs.first().map_or(0, |r| r.maps.len()).to_string()])?;
        c.write_record(["test_corr", &opt(summary.test_corr)])?;
        c.write_record(["mean_window_corr", &opt(summary.mean_window_corr)])?;
        c.write_record(["sign_accuracy", &format_float(summary.sign_accuracy)])?;
        c.flush().map_err(|e| Error::io("summary.csv", e))
    })?;
    log.note(format!(
        "windows {} test_corr {} sign_accuracy {}",
        summary.windows,
        opt(summary.test_corr),
        format_float(summary.sign_accuracy)
    ));
    Ok(())
}

fn write_backtest(dir: &Path, result: &crate::backtest::BacktestResult, bc: &BacktestConfig) -> Result<()> {
    mkdir(dir)?;
    for (p, ledger) in result.paths.iter().enumerate() {
        write_with(&dir.join(format!("ledger_path{p}.csv")), |w| ledger.write_csv(w))?;
    }
    write_with(&dir.join("ledger_average.csv"), |w| result.averaged.write_csv(w))?;
    write_with(&dir.join("metrics.csv"), |w| crate::backtest::write_metrics_csv(w, result, bc))
}

/// The grid of training splits, selection fractions, fitting methods and costs.
fn grid_configs(cfg: &RunConfig) -> Vec<(String, String, RunConfig)> {
    let mut out = Vec::new();
    for fit in ["3", "6"] {
        let select = if fit == "3" { "5" } else { "2" };
        for q in ["0.4", "0.8"] {
            for method in ["ols", "lars_cv"] {
                for cost in ["0", "3"] {
                    let mut c = cfg.clone();
                    for (k, v) in [
                        ("fit_years", fit),
                        ("select_years", select),
                        ("selection", "top_fraction"),
                        ("q", q),
                        ("fit_method", method),
                        ("cost_bp", cost),
                    ] {
                        c.set(k, v).expect("known key");
                    }
                    out.push((format!("fit{fit}_q{q}_{method}_cost{cost}"), method.to_string(), c));
                }
            }
        }
    }
    out
}

pub fn cmd_backtest(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> CliResult<()> {
    let levels = load_frame(cfg, data).map_err(Failure::data)?;
    if !cfg.grid().map_err(Failure::config)? {
        let bc = cfg.backtest_config(levels.names()).map_err(Failure::config)?;
        let result = log.stage("backtest", || run_backtest(&levels, &bc)).map_err(Failure::data)?;
        write_backtest(out, &result, &bc)?;
        log.note(format!("gain {}", format_float(result.overall.gain)));
        return Ok(());
    }
    let runs = grid_configs(cfg);
    let mut by_method: Vec<(String, csv::Writer<BufWriter<File>>)> = Vec::new();
    for method in ["ols", "lars_cv"] {
        let mut w = csv::Writer::from_writer(create(&out.join(format!("metrics_{method}.csv")))?);
        w.write_record(METRICS_HEADER).map_err(Error::from)?;
        by_method.push((method.to_string(), w));
    }
    for (name, method, c) in &runs {
        let bc = c.backtest_config(levels.names()).map_err(Failure::config)?;
        let result = log.stage(name, || run_backtest(&levels, &bc)).map_err(Failure::data)?;
        write_backtest(&out.join(name), &result, &bc)?;
        let w = &mut by_method.iter_mut().find(|(m, _)| m == method).expect("grid method").1;
        write_metrics_rows(w, &result, &bc)?;
    }
    for (method, mut w) in by_method {
        w.flush().map_err(|e| Error::io(format!("metrics_{method}.csv"), e))?;
    }
    Ok(())
}

/// Matrix files inside `path` (sorted by name), or `path` itself.
fn skill_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::insufficient(format!("no .csv files in {}", path.display())));
    }
    Ok(files)
}

fn read_p_values(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let p = rec.get(1).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| Error::Parse {
            row: i + 2,
            column: "p_value".into(),
            message: "expected a number".into(),
        })?;
        out.push((rec.get(0).unwrap_or_default().to_string(), p));
    }
    Ok(out)
}

/// Accepts skill matrices (`model,<seasons...>`) or p-value lists
/// (`label,p_value`); every p-value goes through one FDR screen.
pub fn cmd_skilltest(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> CliResult<()> {
    let test_cfg = cfg.skill_config().map_err(Failure::config)?;
    let q = cfg.fdr_q().map_err(Failure::config)?;
    let mut report = Vec::new();
    let mut p_values: Vec<(String, f64)> = Vec::new();
    for path in skill_inputs(data).map_err(Failure::data)? {
        let header = first_line(&path).map_err(Failure::data)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols == ["label", "p_value"] {
            p_values.extend(read_p_values(&path).map_err(Failure::data)?);
            continue;
        }
        let file = File::open(&path).map_err(|e| Failure::data(Error::io(&path, e)))?;
        let m = SkillMatrix::read_csv(file).map_err(Failure::data)?;
        let label = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let r = log
            .stage(&format!("test {label}"), || conditional_test(&m, &test_cfg))
            .map_err(Failure::data)?;
        p_values.push((label.clone(), r.p_value));
        report.push(ReportRow::from_result(label, &r));
    }
    write_with(&out.join("report.csv"), |w| write_report_csv(&report, w))?;
    let ps: Vec<f64> = p_values.iter().map(|(_, p)| *p).collect();
    let selected = fdr_select(&ps, q).map_err(Failure::data)?;
    write_with(&out.join("fdr.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["label", "p_value", "selected"])?;
        for (i, (label, p)) in p_values.iter().enumerate() {
            c.write_record([label.as_str(), &format_float(*p), if selected.contains(&i) { "1" } else { "0" }])?;
        }
        c.flush().map_err(|e| Error::io("fdr.csv", e))
    })?;
    log.note(format!("tests {} selected {}", p_values.len(), selected.len()));
    Ok(())
}

pub fn cmd_compare_sampling(cfg: &RunConfig, data: &Path, out: &Path, log: &mut RunLog) -> CliResult<()> {
    let raw = load_frame(cfg, data).map_err(Failure::data)?;
    let fc = cfg.forecast_config(raw.names()).map_err(Failure::config)?;
    let plan = cfg.plan().map_err(Failure::config)?;
    let seed = cfg.seed().map_err(Failure::config)?;
    let n_seeds = cfg.compare_seeds().map_err(Failure::config)? as u64;
    let partitions = match fc.sampling {
        Sampling::Disjoint { partitions } => partitions,
        Sampling::Random { .. } => {
            return Err(Failure::config(Error::Config(
                "compare-sampling draws partitions; set sampling = disjoint".into(),
            )))
        }
    };
    let requested: usize = cfg.raw("random_maps").parse().unwrap_or(0);
    let n_maps = disjoint_map_count(&fc, partitions);
    if requested != 0 && requested != n_maps {
        return Err(Failure::config(Error::Config(format!(
            "random_maps = {requested} but {partitions} partitions give {n_maps} maps; counts must match"
        ))));
    }
    let (frame, _) = model_frame(&raw, &fc, cfg).map_err(Failure::data)?;
    let pairs = log
        .stage("compare", || compare_sampling(&frame, &plan, &fc, partitions, seed..seed + n_seeds))
        .map_err(Failure::data)?;
    let wins = pairs.iter().filter(|p| p.disjoint_wins()).count();
    let mean = |f: fn(&crate::forecast::SamplingPair) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    write_with(&out.join("compare.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["seed", "n_maps", "disjoint_corr", "random_corr", "disjoint_win"])?;
        for p in &pairs {
            c.write_record([
                p.seed.to_string(),
                p.n_maps.to_string(),
                format_float(p.disjoint_corr),
                format_float(p.random_corr),
                u8::from(p.disjoint_wins()).to_string(),
            ])?;
        }
        c.write_record([
            "all".to_string(),
            n_maps.to_string(),
            format_float(mean(|p| p.disjoint_corr)),
            format_float(mean(|p| p.random_corr)),
            format_float(wins as f64 / pairs.len() as f64),
        ])?;
        c.flush().map_err(|e| Error::io("compare.csv", e))
    })?;
    log.note(format!("disjoint wins {wins} of {}", pairs.len()));
    Ok(())
}
