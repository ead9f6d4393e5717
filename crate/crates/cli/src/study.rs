//! Study execution on top of the sample cache and the worker pool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use henry_mlmc::fields::{FieldError, ScenarioFields};
use henry_mlmc::grid::{GridError, GridLevel, REPORT_COUNT};
use henry_mlmc::mlmc::{self, CorrectionSampler, MlmcError};
use henry_mlmc::qoi::QoiError;
use henry_mlmc::sampling::{derive_stream, draw_parameters, ensemble_member, ParameterVector, SamplerKind};
use henry_mlmc::solver::{integrate, solve_trajectory, HenryProblem, SolveError, SolverOptions};
use henry_mlmc::stats::StatsError;
use henry_mlmc::{CorrectionSample, FieldMoments, MlmcConfig, MlmcRun, MomentAccumulator};
use thiserror::Error;

use crate::cache::{CacheError, SampleCache, SampleKey, SampleRecord, SampleStatus};
use crate::config::{Command, ConfigError, StudyConfig};
use crate::pool::run_jobs;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Mlmc(#[from] MlmcError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Qoi(#[from] QoiError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("wall clock cap of {cap_s} s reached, {skipped} samples not started")]
    BudgetExceeded { cap_s: f64, skipped: usize },
    #[error("{dir} holds a different study (hash {found}, this one is {expected})")]
    StudyMismatch { dir: PathBuf, found: String, expected: String },
    #[error("{0}")]
    Input(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StudyError + '_ {
    move |source| StudyError::Io { path: path.to_path_buf(), source }
}

/// Name of the configuration file inside a study directory.
pub const STUDY_FILE: &str = "study.conf";

/// One single-level solve to perform.
#[derive(Debug, Clone, Copy)]
struct SolveTask {
    key: SampleKey,
    xi: ParameterVector,
    /// Report index whose mass fraction field is returned as well.
    field: Option<usize>,
}

/// Solves one scenario and extracts every QoI series.
fn solve_task(task: &SolveTask, config: &StudyConfig, options: SolverOptions) -> (SampleRecord, Option<Vec<f64>>) {
    let start = Instant::now();
    let width = config.qoi.len() * REPORT_COUNT;
    let failed = |start: Instant| SampleRecord {
        key: task.key,
        xi: task.xi.xi,
        status: SampleStatus::Failed,
        cost_s: start.elapsed().as_secs_f64(),
        work: 0.0,
        newton_iterations: 0,
        retries: 0,
        values: vec![f64::NAN; width],
    };
    let Ok(grid) = GridLevel::new(task.key.level, config.constants.t_end) else {
        return (failed(start), None);
    };
    let Ok((trajectory, cost)) = solve_trajectory(&task.xi, &grid, &config.constants, options) else {
        return (failed(start), None);
    };
    let mut values = Vec::with_capacity(width);
    for spec in &config.qoi {
        values.extend(spec.series(&trajectory, task.key.sample_index, cost.wall_seconds).values);
    }
    let record = SampleRecord {
        key: task.key,
        xi: task.xi.xi,
        status: SampleStatus::Ok,
        cost_s: cost.wall_seconds,
        work: cost.work,
        newton_iterations: cost.newton_iterations,
        retries: cost.retries,
        values,
    };
    let field = task.field.map(|k| trajectory.state(k).c.clone());
    (record, field)
}

/// Samples of a single-level ensemble in index order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub level: usize,
    pub records: Vec<SampleRecord>,
    /// Per-cell moments of `c` at the configured report time.
    pub fields: Option<FieldMoments>,
}

impl Ensemble {
    pub fn ok(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.is_ok())
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.ok().count()
    }

    /// Values of spec number `spec` at report `k` over the successful samples.
    pub fn values(&self, spec: usize, k: usize) -> Vec<f64> {
        self.ok().map(|r| r.series(spec)[k - 1]).collect()
    }
}

/// Fine and coarse solve of one correction sample.
#[derive(Debug, Clone)]
pub struct LevelPair {
    pub index: u64,
    pub fine: SampleRecord,
    /// `None` on level 0.
    pub coarse: Option<SampleRecord>,
}

impl LevelPair {
    pub fn is_ok(&self) -> bool {
        self.fine.is_ok() && self.coarse.as_ref().is_none_or(|c| c.is_ok())
    }

    /// `g_l - g_{l-1}` for every stored value.
    pub fn correction(&self) -> Option<Vec<f64>> {
        if !self.is_ok() {
            return None;
        }
        Some(match &self.coarse {
            Some(c) => self.fine.values.iter().zip(&c.values).map(|(f, c)| f - c).collect(),
            None => self.fine.values.clone(),
        })
    }

    pub fn work(&self) -> f64 {
        self.fine.work + self.coarse.as_ref().map_or(0.0, |c| c.work)
    }

    pub fn cost_s(&self) -> f64 {
        self.fine.cost_s + self.coarse.as_ref().map_or(0.0, |c| c.cost_s)
    }
}

/// An opened study directory.
pub struct Study {
    pub config: StudyConfig,
    pub dir: PathBuf,
    pub hash: String,
    cache: SampleCache,
    options: SolverOptions,
    deadline: Option<Instant>,
}

impl Study {
    /// Opens `config.output`, creating it if needed. A directory that already
    /// holds a study with another hash is refused.
    pub fn open(mut config: StudyConfig) -> Result<Self, StudyError> {
        config.validate()?;
        match config.command {
            Command::Mc => config.sampler = SamplerKind::PseudoRandom,
            Command::Qmc => config.sampler = SamplerKind::LowDiscrepancy,
            _ => {}
        }
        if config.command == Command::Mlmc && config.sampler != SamplerKind::PseudoRandom {
            return Err(StudyError::Input("mlmc needs independent levels and therefore the pseudo sampler".into()));
        }
        let dir = config.output.clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let hash = config.hash();
        let conf = dir.join(STUDY_FILE);
        if conf.exists() {
            let text = fs::read_to_string(&conf).map_err(io_err(&conf))?;
            let found = StudyConfig::parse(&text)?.hash();
            if found != hash {
                return Err(StudyError::StudyMismatch { dir, found, expected: hash });
            }
        }
        fs::write(&conf, config.to_text()).map_err(io_err(&conf))?;
        let cache = SampleCache::open(&dir.join("cache"), &config.qoi)?;
        let deadline = config.wall_clock_cap_s.map(|s| Instant::now() + Duration::from_secs_f64(s));
        Ok(Self { config, dir, hash, cache, options: SolverOptions::default(), deadline })
    }

    /// Opens an existing study directory for reporting.
    pub fn load(dir: &Path) -> Result<Self, StudyError> {
        let conf = dir.join(STUDY_FILE);
        let text = fs::read_to_string(&conf).map_err(io_err(&conf))?;
        let mut config = StudyConfig::parse(&text)?;
        config.output = dir.to_path_buf();
        Self::open(config)
    }

    /// CSV writer whose first line carries the configuration hash.
    pub fn writer(&self, name: &str) -> Result<csv::Writer<File>, StudyError> {
        let path = self.dir.join(name);
        let mut file = File::create(&path).map_err(io_err(&path))?;
        writeln!(file, "# config_hash={}", self.hash).map_err(io_err(&path))?;
        Ok(csv::Writer::from_writer(file))
    }

    fn sampler(&self) -> SamplerKind {
        self.config.sampler
    }

    fn run_tasks<T, F>(&mut self, jobs: &[T], solve: F, mut consume: impl FnMut(&mut SampleCache, usize, Vec<(SampleRecord, Option<Vec<f64>>)>) -> Result<(), StudyError>) -> Result<(), StudyError>
    where
        T: Sync,
        F: Fn(&T) -> Vec<(SampleRecord, Option<Vec<f64>>)> + Sync,
    {
        let cache = &mut self.cache;
        let outcome = run_jobs(jobs, self.config.workers, self.deadline, solve, |i, results| consume(cache, i, results))?;
        if outcome.skipped > 0 {
            return Err(StudyError::BudgetExceeded { cap_s: self.config.wall_clock_cap_s.unwrap_or(0.0), skipped: outcome.skipped });
        }
        Ok(())
    }

    fn moments_path(&self) -> Option<PathBuf> {
        let k = self.config.field_report?;
        Some(self.cache.dir().join(format!("moments_{}_{}_L{}_k{k}.csv", self.sampler(), self.config.stream_seed, self.config.level)))
    }

    fn load_moments(&self, cells: usize) -> Result<Option<(u64, FieldMoments)>, StudyError> {
        let Some(path) = self.moments_path().filter(|p| p.exists()) else {
            return Ok(None);
        };
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut lines = text.lines();
        let bad = |what: &str| StudyError::Input(format!("{}: {what}", path.display()));
        let covered: u64 = lines
            .next()
            .and_then(|l| l.strip_prefix("# samples="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| bad("missing sample count"))?;
        let mut acc = Vec::with_capacity(cells);
        for line in lines.skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let parse = || -> Option<(u64, f64, f64)> { Some((f.first()?.parse().ok()?, f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?)) };
            let (n, mean, m2) = parse().filter(|_| f.len() == 3).ok_or_else(|| bad("malformed row"))?;
            acc.push(MomentAccumulator::from_parts(n, mean, m2));
        }
        if acc.len() != cells {
            return Err(bad("cell count differs from the grid"));
        }
        Ok(Some((covered, FieldMoments::from_cells(self.config.level, acc))))
    }

    /// Runs (or completes from the cache) the `n` samples of an `mc` or
    /// `qmc` study and writes `qoi_series.csv`.
    pub fn run_ensemble(&mut self) -> Result<Ensemble, StudyError> {
        let (level, n, seed, sampler) = (self.config.level, self.config.n as u64, self.config.stream_seed, self.sampler());
        let grid = GridLevel::new(level, self.config.constants.t_end)?;
        let key = |i: u64| SampleKey { level, sampler, seed, sample_index: i };
        let (mut covered, mut moments) = match self.load_moments(grid.cells())? {
            Some((c, m)) if c <= n => (c, m),
            _ => (0, FieldMoments::new(level, grid.cells())),
        };
        let field_report = self.config.field_report;
        let mut tasks = Vec::new();
        for i in 0..n {
            let want_field = field_report.is_some() && i >= covered;
            if want_field || self.cache.get(&key(i))?.is_none() {
                let xi = ensemble_member(sampler, seed, i);
                tasks.push(SolveTask { key: key(i), xi, field: if want_field { field_report } else { None } });
            }
        }
        let (config, options) = (self.config.clone(), self.options);
        let mut pending: BTreeMap<u64, Option<Vec<f64>>> = BTreeMap::new();
        let moments_path = self.moments_path();
        let mut unsaved = 0;
        let result = self.run_tasks(
            &tasks,
            |t| vec![solve_task(t, &config, options)],
            |cache, _, results| {
                for (record, field) in results {
                    let i = record.key.sample_index;
                    if cache.get(&record.key)?.is_none() {
                        cache.insert(record)?;
                    }
                    if field_report.is_some() && i >= covered {
                        pending.insert(i, field);
                    }
                }
                while let Some(field) = pending.remove(&covered) {
                    if let Some(c) = field {
                        moments.push(level, &c)?;
                    }
                    covered += 1;
                    unsaved += 1;
                }
                if let Some(path) = moments_path.as_ref().filter(|_| unsaved >= 16) {
                    save_moments(path, covered, &moments)?;
                    unsaved = 0;
                }
                Ok(())
            },
        );
        if let Some(path) = moments_path.as_ref().filter(|_| unsaved > 0) {
            save_moments(path, covered, &moments)?;
        }
        result?;
        let ensemble = self.cached_ensemble()?;
        self.write_series(&ensemble)?;
        Ok(ensemble)
    }

    /// The ensemble of an `mc` or `qmc` study as stored in the cache,
    /// without solving anything.
    pub fn cached_ensemble(&mut self) -> Result<Ensemble, StudyError> {
        let (level, n, seed, sampler) = (self.config.level, self.config.n as u64, self.config.stream_seed, self.sampler());
        let mut records = Vec::with_capacity(n as usize);
        for i in 0..n {
            let key = SampleKey { level, sampler, seed, sample_index: i };
            let r = self.cache.get(&key)?.ok_or_else(|| StudyError::Input(format!("sample {i} is not in the cache; run the study first")))?;
            records.push(r.clone());
        }
        let cells = GridLevel::new(level, self.config.constants.t_end)?.cells();
        let fields = self.load_moments(cells)?.filter(|(c, m)| *c == n && m.count() >= 2).map(|(_, m)| m);
        Ok(Ensemble { level, records, fields })
    }

    fn write_series(&self, ensemble: &Ensemble) -> Result<(), StudyError> {
        let mut w = self.writer("qoi_series.csv")?;
        w.write_record(["level", "sample_index", "spec", "k", "t_seconds", "value", "cost_s"])?;
        for r in ensemble.ok() {
            for (s, spec) in self.config.qoi.iter().enumerate() {
                for (k, v) in (1..=REPORT_COUNT).zip(r.series(s)) {
                    w.write_record([
                        ensemble.level.to_string(),
                        r.key.sample_index.to_string(),
                        spec.to_string(),
                        k.to_string(),
                        self.config.constants.report_time(k).to_string(),
                        v.to_string(),
                        r.cost_s.to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(io_err(&self.dir))
    }

    /// Correction samples `indices` of `level`: shared parameters drawn from
    /// the level's own stream, solved on `level` and `level - 1`.
    pub fn level_pairs(&mut self, level: usize, indices: Range<u64>) -> Result<Vec<LevelPair>, StudyError> {
        let stream = derive_stream(self.config.stream_seed, level as u64);
        let sampler = SamplerKind::PseudoRandom;
        let key = |l: usize, i: u64| SampleKey { level: l, sampler, seed: stream, sample_index: i };
        let mut jobs: Vec<Vec<SolveTask>> = Vec::new();
        for i in indices.clone() {
            let xi = draw_parameters(sampler, stream, i);
            let mut job = Vec::new();
            let solves: &[usize] = if level == 0 { &[0] } else { &[level, level - 1] };
            for &l in solves {
                if self.cache.get(&key(l, i))?.is_none() {
                    job.push(SolveTask { key: key(l, i), xi, field: None });
                }
            }
            if !job.is_empty() {
                jobs.push(job);
            }
        }
        let (config, options) = (self.config.clone(), self.options);
        self.run_tasks(
            &jobs,
            |job| job.iter().map(|t| solve_task(t, &config, options)).collect(),
            |cache, _, results| {
                for (record, _) in results {
                    cache.insert(record)?;
                }
                Ok(())
            },
        )?;
        let mut pairs = Vec::with_capacity((indices.end - indices.start) as usize);
        for i in indices {
            let missing = || StudyError::Input(format!("sample {i} of level {level} missing after the run"));
            let fine = self.cache.get(&key(level, i))?.cloned().ok_or_else(missing)?;
            let coarse = if level > 0 { Some(self.cache.get(&key(level - 1, i))?.cloned().ok_or_else(missing)?) } else { None };
            pairs.push(LevelPair { index: i, fine, coarse });
        }
        Ok(pairs)
    }

    /// Pilot, allocation and top-up rounds, then the MLMC reports.
    pub fn run_mlmc(&mut self) -> Result<MlmcRun, StudyError> {
        let c = &self.config;
        let allocation: Vec<usize> = (0..c.qoi.len()).flat_map(|s| c.allocation_times.iter().map(move |k| s * REPORT_COUNT + k - 1)).collect();
        let mut mc = MlmcConfig::new(c.eps2, c.max_level, allocation);
        mc.m_pilot = c.m_pilot;
        mc.max_rounds = c.max_rounds;
        mc.wall_cap_seconds = c.wall_clock_cap_s;
        mc.parallelism = c.workers;
        let levels = c.max_level + 1;
        let mut sampler = PairSampler { study: self, used: vec![Vec::new(); levels] };
        let run = mlmc::run_mlmc(&mut sampler, &mc)?;
        let used = sampler.used;
        self.write_mlmc(&run, &used)?;
        Ok(run)
    }

    fn write_mlmc(&self, run: &MlmcRun, used: &[Vec<LevelPair>]) -> Result<(), StudyError> {
        let mut w = self.writer("plan.csv")?;
        w.write_record(["level", "m", "m_used", "V", "s", "wall_s"])?;
        for (l, pairs) in used.iter().enumerate() {
            let wall = pairs.iter().map(LevelPair::cost_s).sum::<f64>() / pairs.len().max(1) as f64;
            w.write_record([
                l.to_string(),
                run.plan.m[l].to_string(),
                run.stats[0][l].m.to_string(),
                run.plan.variance[l].to_string(),
                run.plan.cost[l].to_string(),
                wall.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(&self.dir))?;

        let mut w = self.writer("estimate.csv")?;
        w.write_record(["spec", "k", "t_seconds", "value", "variance", "bias_proxy", "mse_proxy"])?;
        let mut s = self.writer("level_stats.csv")?;
        s.write_record(["spec", "k", "level", "m", "mean_y", "var_y", "mean_cost"])?;
        for (o, (est, stats)) in run.estimates.iter().zip(&run.stats).enumerate() {
            let (spec, k) = (self.config.qoi[o / REPORT_COUNT].to_string(), o % REPORT_COUNT + 1);
            w.write_record([
                spec.clone(),
                k.to_string(),
                self.config.constants.report_time(k).to_string(),
                est.value.to_string(),
                est.statistical_variance.to_string(),
                est.bias_proxy.to_string(),
                est.mse_proxy.to_string(),
            ])?;
            for st in stats {
                s.write_record([
                    spec.clone(),
                    k.to_string(),
                    st.level.to_string(),
                    st.m.to_string(),
                    st.mean_y.to_string(),
                    st.var_y.to_string(),
                    st.mean_cost.to_string(),
                ])?;
            }
        }
        w.flush().map_err(io_err(&self.dir))?;
        s.flush().map_err(io_err(&self.dir))?;

        let mut w = self.writer("corrections.csv")?;
        w.write_record(["level", "sample_index", "spec", "k", "value"])?;
        for (l, pairs) in used.iter().enumerate() {
            for p in pairs {
                let Some(y) = p.correction() else { continue };
                for (o, v) in y.iter().enumerate() {
                    w.write_record([l.to_string(), p.index.to_string(), self.config.qoi[o / REPORT_COUNT].to_string(), (o % REPORT_COUNT + 1).to_string(), v.to_string()])?;
                }
            }
        }
        w.flush().map_err(io_err(&self.dir))
    }
}

/// Feeds cached or freshly solved level pairs to the MLMC engine.
struct PairSampler<'a> {
    study: &'a mut Study,
    used: Vec<Vec<LevelPair>>,
}

impl CorrectionSampler<f64> for PairSampler<'_> {
    type Error = StudyError;

    fn outputs(&self) -> usize {
        self.study.config.qoi.len() * REPORT_COUNT
    }

    fn evaluate(&mut self, level: usize, indices: Range<u64>) -> Result<Vec<CorrectionSample>, StudyError> {
        let pairs = self.study.level_pairs(level, indices)?;
        let samples = pairs
            .iter()
            .map(|p| CorrectionSample { index: p.index, values: p.correction(), cost: p.work(), wall_seconds: p.cost_s() })
            .collect();
        self.used[level].extend(pairs);
        Ok(samples)
    }
}

/// Solves the configured scenario and writes `x,y,c,p` at `snapshot_at`.
pub fn write_solution(config: &StudyConfig, out: &mut dyn Write) -> Result<(), StudyError> {
    config.validate()?;
    let xi = ParameterVector::fixed(config.xi).ok_or_else(|| StudyError::Input("xi outside [-1, 1]^3".into()))?;
    let grid = GridLevel::new(config.level, config.constants.t_end)?;
    let fields = ScenarioFields::realize(&xi, &grid)?;
    let (trajectory, cost) = integrate(HenryProblem::new(grid, fields, config.constants), SolverOptions::default())?;
    let state = trajectory.state(config.snapshot_at);
    let mut w = csv_to(out, &config.hash())?;
    w.write_record(["x", "y", "c", "p"])?;
    for (i, x, y) in grid.centers() {
        w.write_record([x.to_string(), y.to_string(), state.c[i].to_string(), state.p[i].to_string()])?;
    }
    w.flush().map_err(io_err(Path::new("output")))?;
    eprintln!(
        "level {} t = {} s: {} steps, {} newton iterations, {} retries, {:.2} s",
        grid.level, state.t, cost.steps, cost.newton_iterations, cost.retries, cost.wall_seconds
    );
    Ok(())
}

/// Writes the porosity and permeability fields `x,y,phi,K` of the scenario.
pub fn write_fields(config: &StudyConfig, out: &mut dyn Write) -> Result<(), StudyError> {
    config.validate()?;
    let xi = ParameterVector::fixed(config.xi).ok_or_else(|| StudyError::Input("xi outside [-1, 1]^3".into()))?;
    let grid = GridLevel::new(config.level, config.constants.t_end)?;
    let fields = ScenarioFields::realize(&xi, &grid)?;
    let mut w = csv_to(out, &config.hash())?;
    w.write_record(["x", "y", "phi", "K"])?;
    for (i, x, y) in grid.centers() {
        w.write_record([x.to_string(), y.to_string(), fields.porosity[i].to_string(), fields.permeability[i].to_string()])?;
    }
    w.flush().map_err(io_err(Path::new("output")))
}

/// Stores field moments covering samples `0..covered`.
fn save_moments(path: &Path, covered: u64, moments: &FieldMoments) -> Result<(), StudyError> {
    let mut text = format!("# samples={covered}\nn,mean,m2\n");
    for a in moments.cells() {
        let (n, mean, m2) = a.parts();
        text.push_str(&format!("{n},{mean},{m2}\n"));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn csv_to<'a>(out: &'a mut dyn Write, hash: &str) -> Result<csv::Writer<&'a mut dyn Write>, StudyError> {
    writeln!(out, "# config_hash={hash}").map_err(io_err(Path::new("output")))?;
    Ok(csv::Writer::from_writer(out))
}
