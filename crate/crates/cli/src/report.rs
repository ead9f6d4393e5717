//! Reports derived from finished studies: statistics, rate fits, sample
//! allocations and plots.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use henry_mlmc::grid::REPORT_COUNT;
use henry_mlmc::mlmc::{allocate_raw, fit_rates, ComplexityRegime};
use henry_mlmc::qoi::{first_passage, Crossing, QoiSeries};
use henry_mlmc::stats::{kde, quantiles};
use henry_mlmc::{LevelStats, MlmcPlan, RateFit};
use sha2::{Digest, Sha256};

use crate::config::{hex, Command};
use crate::study::{io_err, Ensemble, Study, StudyError};
use crate::svg::{Curve, Plot};

/// Settings of the `stats` report.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsOptions {
    pub probabilities: Vec<f64>,
    /// Report index of the density estimates.
    pub pdf_report: usize,
    pub grid_points: usize,
    /// Threshold and direction of a first-passage analysis.
    pub passage: Option<(f64, Crossing)>,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            probabilities: henry_mlmc::stats::DEFAULT_PROBABILITIES.to_vec(),
            pdf_report: REPORT_COUNT,
            grid_points: 256,
            passage: None,
        }
    }
}

fn ensemble_of(study: &mut Study) -> Result<Ensemble, StudyError> {
    if !matches!(study.config.command, Command::Mc | Command::Qmc) {
        return Err(StudyError::Input(format!("{} is not an mc or qmc study", study.dir.display())));
    }
    let e = study.cached_ensemble()?;
    if e.ok().count() < 2 {
        return Err(StudyError::Input("the ensemble has fewer than two successful samples".into()));
    }
    Ok(e)
}

/// Writes `quantiles.csv`, `pdf.csv`, `fields_mean_var.csv` (when field
/// moments were accumulated) and `passage.csv` (when requested).
pub fn write_stats(study: &mut Study, options: &StatsOptions) -> Result<Vec<PathBuf>, StudyError> {
    if !(1..=REPORT_COUNT).contains(&options.pdf_report) {
        return Err(StudyError::Input(format!("pdf report index must lie in 1..={REPORT_COUNT}")));
    }
    let ensemble = ensemble_of(study)?;
    let specs = study.config.qoi.clone();
    let mut written = Vec::new();

    let mut w = study.writer("quantiles.csv")?;
    w.write_record(["spec", "k", "p", "value"])?;
    for (s, spec) in specs.iter().enumerate() {
        for k in 1..=REPORT_COUNT {
            let q = quantiles(&ensemble.values(s, k), &options.probabilities)?;
            for (p, v) in options.probabilities.iter().zip(q) {
                w.write_record([spec.to_string(), k.to_string(), p.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(io_err(&study.dir))?;
    written.push(study.dir.join("quantiles.csv"));

    let mut w = study.writer("pdf.csv")?;
    w.write_record(["spec", "abscissa", "density"])?;
    for (s, spec) in specs.iter().enumerate() {
        let est = kde(&ensemble.values(s, options.pdf_report), options.grid_points)?;
        if est.spike {
            eprintln!("warning: {spec} is constant at report {}; pdf is a spike", options.pdf_report);
        }
        for (x, d) in est.grid.iter().zip(&est.density) {
            w.write_record([spec.to_string(), x.to_string(), d.to_string()])?;
        }
    }
    w.flush().map_err(io_err(&study.dir))?;
    written.push(study.dir.join("pdf.csv"));

    if let Some(fields) = &ensemble.fields {
        let grid = henry_mlmc::grid::GridLevel::new(ensemble.level, study.config.constants.t_end)?;
        let (mean, var) = fields.mean_and_variance()?;
        let mut w = study.writer("fields_mean_var.csv")?;
        w.write_record(["x", "y", "mean", "var"])?;
        for (i, x, y) in grid.centers() {
            w.write_record([x.to_string(), y.to_string(), mean[i].to_string(), var[i].to_string()])?;
        }
        w.flush().map_err(io_err(&study.dir))?;
        written.push(study.dir.join("fields_mean_var.csv"));
    }

    if let Some((threshold, direction)) = options.passage {
        let mut w = study.writer("passage.csv")?;
        w.write_record(["spec", "abscissa", "density", "none_probability"])?;
        for (s, spec) in specs.iter().enumerate() {
            let times: Vec<Option<f64>> = ensemble
                .ok()
                .map(|r| {
                    let series = QoiSeries { spec: *spec, level: ensemble.level, sample_index: r.key.sample_index, values: r.series(s).to_vec(), cost_s: r.cost_s };
                    first_passage(&series, threshold, direction).map(|k| study.config.constants.report_time(k))
                })
                .collect();
            let hit: Vec<f64> = times.iter().flatten().copied().collect();
            let none = (times.len() - hit.len()) as f64 / times.len() as f64;
            // densities integrate to the probability of crossing at all
            if let Ok(est) = kde(&hit, options.grid_points) {
                let mass = 1.0 - none;
                for (x, d) in est.grid.iter().zip(&est.density) {
                    w.write_record([spec.to_string(), x.to_string(), (d * mass).to_string(), none.to_string()])?;
                }
            } else {
                w.write_record([spec.to_string(), "NaN".into(), "NaN".into(), none.to_string()])?;
            }
        }
        w.flush().map_err(io_err(&study.dir))?;
        written.push(study.dir.join("passage.csv"));
    }
    Ok(written)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, StudyError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

fn column(headers: &csv::StringRecord, names: &[&str], path: &Path) -> Result<usize, StudyError> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim()))
        .ok_or_else(|| StudyError::Input(format!("{}: no column named {}", path.display(), names.join(" or "))))
}

fn number(record: &csv::StringRecord, i: usize, path: &Path) -> Result<f64, StudyError> {
    let field = record.get(i).unwrap_or("").trim();
    field.parse().map_err(|_| StudyError::Input(format!("{}: `{field}` is not a number", path.display())))
}

/// Per-level statistics grouped by `(spec, k)`, from `level_stats.csv`.
pub fn read_level_stats(path: &Path) -> Result<BTreeMap<(String, usize), Vec<LevelStats>>, StudyError> {
    let mut r = reader(path)?;
    let h = r.headers()?.clone();
    let (cs, ck, cl, cm) = (column(&h, &["spec"], path)?, column(&h, &["k"], path)?, column(&h, &["level"], path)?, column(&h, &["m"], path)?);
    let (cy, cv, cc) = (column(&h, &["mean_y"], path)?, column(&h, &["var_y"], path)?, column(&h, &["mean_cost"], path)?);
    let mut groups: BTreeMap<(String, usize), Vec<LevelStats>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let stats = LevelStats {
            level: number(&rec, cl, path)? as usize,
            m: number(&rec, cm, path)? as usize,
            mean_y: number(&rec, cy, path)?,
            var_y: number(&rec, cv, path)?,
            mean_cost: number(&rec, cc, path)?,
        };
        let key = (rec.get(cs).unwrap_or("").to_string(), number(&rec, ck, path)? as usize);
        groups.entry(key).or_default().push(stats);
    }
    for v in groups.values_mut() {
        v.sort_by_key(|s| s.level);
    }
    Ok(groups)
}

fn regime_text(fit: &RateFit) -> String {
    match fit.complexity().regime {
        ComplexityRegime::EpsMinus2 => "eps^-2".into(),
        ComplexityRegime::EpsMinus2LogSq => "eps^-2 log^2".into(),
        ComplexityRegime::EpsMinusExtra(e) => format!("eps^-{e:.3}"),
    }
}

/// A quantity of interest and report index, `(spec, k)`.
pub type ReportKey = (String, usize);

/// Fits the rates of every `(spec, k)` of an MLMC study into `rates.csv`.
/// Report times with fewer than three usable correction levels are skipped.
pub fn write_rates(study: &Study) -> Result<Vec<(ReportKey, RateFit)>, StudyError> {
    let groups = read_level_stats(&study.dir.join("level_stats.csv"))?;
    let mut fits = Vec::new();
    let mut last_error = None;
    for (key, stats) in groups {
        match fit_rates(&stats, 2) {
            Ok(f) => fits.push((key, f)),
            Err(e) => last_error = Some(e),
        }
    }
    if fits.is_empty() {
        return Err(match last_error {
            Some(e) => e.into(),
            None => StudyError::Input("level_stats.csv is empty".into()),
        });
    }
    let mut w = study.writer("rates.csv")?;
    w.write_record([
        "spec", "k", "alpha", "beta", "gamma", "cost_slope", "c1", "c2", "c3", "weak_rms", "strong_rms", "cost_rms", "regime",
        "precondition_met",
    ])?;
    for ((spec, k), f) in &fits {
        w.write_record([
            spec.clone(),
            k.to_string(),
            f.alpha.to_string(),
            f.beta.to_string(),
            f.gamma.to_string(),
            f.cost_slope.to_string(),
            f.c1.to_string(),
            f.c2.to_string(),
            f.c3.to_string(),
            f.weak.rms_residual.to_string(),
            f.strong.rms_residual.to_string(),
            f.work.rms_residual.to_string(),
            regime_text(f),
            f.complexity().precondition_met.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&study.dir))?;
    Ok(fits)
}

/// Allocation from a CSV of per-level variances and costs. Columns are
/// found by name: `V` or `var_y`, and `s`, `mean_cost` or `cost`; rows are
/// ordered by an optional `level` column.
pub fn allocate_from_file(path: &Path, eps2: f64) -> Result<MlmcPlan, StudyError> {
    let mut r = reader(path)?;
    let h = r.headers()?.clone();
    let cv = column(&h, &["V", "var_y"], path)?;
    let cs = column(&h, &["s", "mean_cost", "cost"], path)?;
    let cl = column(&h, &["level"], path).ok();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let level = match cl {
            Some(c) => number(&rec, c, path)? as usize,
            None => i,
        };
        rows.push((level, number(&rec, cv, path)?, number(&rec, cs, path)?));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(StudyError::Input(format!("{}: levels must be 0, 1, 2, ... without gaps", path.display())));
    }
    let v: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(allocate_raw(&v, &s, eps2)?)
}

/// Writes a plan as `level,m,V,s`, tagged with a hash of its inputs.
pub fn write_plan(plan: &MlmcPlan, inputs: &Path, out: &Path) -> Result<(), StudyError> {
    let mut bytes = Vec::new();
    fs::File::open(inputs).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(inputs))?;
    bytes.extend_from_slice(format!("eps2={}", plan.eps2).as_bytes());
    let hash = hex(&Sha256::digest(&bytes)[..8]);
    let mut text = format!("# config_hash={hash}\nlevel,m,V,s\n");
    for (l, m) in plan.m.iter().enumerate() {
        text.push_str(&format!("{l},{m},{},{}\n", plan.variance[l], plan.cost[l]));
    }
    fs::write(out, text).map_err(io_err(out))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn write_svg(dir: &Path, name: &str, plot: &Plot, written: &mut Vec<PathBuf>) -> Result<(), StudyError> {
    let Some(svg) = plot.render() else { return Ok(()) };
    let path = dir.join(name);
    fs::write(&path, svg).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

/// Draws the plots a study's CSV reports support.
///
/// Ensembles give one realization-and-quantile plot per quantity and a
/// density plot; MLMC studies give correction fans and error decay plots.
pub fn write_plots(study: &Study) -> Result<Vec<PathBuf>, StudyError> {
    let dir = &study.dir;
    let specs: Vec<String> = study.config.qoi.iter().map(|s| s.to_string()).collect();
    let time = |k: usize| study.config.constants.report_time(k);
    let mut written = Vec::new();
    match study.config.command {
        Command::Mc | Command::Qmc => {
            let series_path = dir.join("qoi_series.csv");
            let quant_path = dir.join("quantiles.csv");
            let mut realizations: BTreeMap<(String, u64), Vec<(f64, f64)>> = BTreeMap::new();
            let mut r = reader(&series_path)?;
            let h = r.headers()?.clone();
            let (cs, ci, ct, cv) = (
                column(&h, &["spec"], &series_path)?,
                column(&h, &["sample_index"], &series_path)?,
                column(&h, &["t_seconds"], &series_path)?,
                column(&h, &["value"], &series_path)?,
            );
            for rec in r.records() {
                let rec = rec?;
                let key = (rec.get(cs).unwrap_or("").to_string(), number(&rec, ci, &series_path)? as u64);
                realizations.entry(key).or_default().push((number(&rec, ct, &series_path)?, number(&rec, cv, &series_path)?));
            }
            if realizations.is_empty() {
                return Err(StudyError::Input(format!("{} holds no realizations", series_path.display())));
            }
            let mut bands: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
            let mut r = reader(&quant_path)?;
            let h = r.headers()?.clone();
            let (cs, ck, cp, cv) = (
                column(&h, &["spec"], &quant_path)?,
                column(&h, &["k"], &quant_path)?,
                column(&h, &["p"], &quant_path)?,
                column(&h, &["value"], &quant_path)?,
            );
            for rec in r.records() {
                let rec = rec?;
                let key = (rec.get(cs).unwrap_or("").to_string(), rec.get(cp).unwrap_or("").to_string());
                bands.entry(key).or_default().push((time(number(&rec, ck, &quant_path)? as usize), number(&rec, cv, &quant_path)?));
            }
            for (i, spec) in specs.iter().enumerate() {
                let mut plot = Plot::new(format!("{spec}: realizations and quantiles"), "t [s]", spec.as_str());
                for ((_, _), pts) in realizations.iter().filter(|((s, _), _)| s == spec) {
                    plot.curves.push(Curve::new(pts.clone(), "gray").thin(0.35));
                }
                for ((_, p), pts) in bands.iter().filter(|((s, _), _)| s == spec) {
                    plot.curves.push(Curve::new(pts.clone(), "#1f77b4").dashed().labeled(format!("p={p}")));
                }
                write_svg(dir, &format!("quantiles_{i}.svg"), &plot, &mut written)?;
            }
            let pdf_path = dir.join("pdf.csv");
            if pdf_path.exists() {
                let mut r = reader(&pdf_path)?;
                let h = r.headers()?.clone();
                let (cs, cx, cd) = (column(&h, &["spec"], &pdf_path)?, column(&h, &["abscissa"], &pdf_path)?, column(&h, &["density"], &pdf_path)?);
                let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
                for rec in r.records() {
                    let rec = rec?;
                    curves.entry(rec.get(cs).unwrap_or("").to_string()).or_default().push((number(&rec, cx, &pdf_path)?, number(&rec, cd, &pdf_path)?));
                }
                for (i, spec) in specs.iter().enumerate() {
                    if let Some(pts) = curves.get(spec) {
                        let mut plot = Plot::new(format!("{spec}: density"), spec.as_str(), "pdf");
                        plot.curves.push(Curve::new(pts.clone(), PALETTE[0]));
                        write_svg(dir, &format!("pdf_{i}.svg"), &plot, &mut written)?;
                    }
                }
            }
        }
        Command::Mlmc => {
            let corr_path = dir.join("corrections.csv");
            let mut fans: BTreeMap<(String, usize, u64), Vec<(f64, f64)>> = BTreeMap::new();
            let mut r = reader(&corr_path)?;
            let h = r.headers()?.clone();
            let (cl, ci, cs, ck, cv) = (
                column(&h, &["level"], &corr_path)?,
                column(&h, &["sample_index"], &corr_path)?,
                column(&h, &["spec"], &corr_path)?,
                column(&h, &["k"], &corr_path)?,
                column(&h, &["value"], &corr_path)?,
            );
            for rec in r.records() {
                let rec = rec?;
                let key = (rec.get(cs).unwrap_or("").to_string(), number(&rec, cl, &corr_path)? as usize, number(&rec, ci, &corr_path)? as u64);
                fans.entry(key).or_default().push((time(number(&rec, ck, &corr_path)? as usize), number(&rec, cv, &corr_path)?));
            }
            if fans.is_empty() {
                return Err(StudyError::Input(format!("{} holds no samples", corr_path.display())));
            }
            let groups = read_level_stats(&dir.join("level_stats.csv"))?;
            let max_level = study.config.max_level;
            for (i, spec) in specs.iter().enumerate() {
                let mut plot = Plot::new(format!("{spec}: level corrections"), "t [s]", "g_l - g_(l-1)");
                for ((_, level, _), pts) in fans.iter().filter(|((s, l, _), _)| s == spec && *l >= 1) {
                    plot.curves.push(Curve::new(pts.clone(), PALETTE[level % PALETTE.len()]).thin(0.5));
                }
                write_svg(dir, &format!("differences_{i}.svg"), &plot, &mut written)?;

                if let Some(stats) = groups.get(&(spec.clone(), REPORT_COUNT)) {
                    let mut plot = Plot::new(format!("{spec}: decay at the final time"), "level", "|mean Y_l|, V_l");
                    plot.log_y = true;
                    plot.x_ticks = Some((0..=max_level).map(|l| l as f64).collect());
                    let mean: Vec<(f64, f64)> = stats.iter().map(|s| (s.level as f64, s.mean_y.abs())).collect();
                    let var: Vec<(f64, f64)> = stats.iter().map(|s| (s.level as f64, s.var_y)).collect();
                    plot.curves.push(Curve::new(mean, PALETTE[0]).labeled("|mean Y|"));
                    plot.curves.push(Curve::new(var, PALETTE[1]).labeled("V"));
                    write_svg(dir, &format!("error_decay_{i}.svg"), &plot, &mut written)?;
                }
            }
        }
        other => return Err(StudyError::Input(format!("nothing to plot for a {} study", other.as_str()))),
    }
    if written.is_empty() {
        return Err(StudyError::Input("no plottable data".into()));
    }
    Ok(written)
}
