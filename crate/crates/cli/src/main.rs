use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use henry_mlmc::grid::REPORT_COUNT;
use henry_mlmc::qoi::Crossing;
use henry_mlmc_cli::config::{Command, StudyConfig};
use henry_mlmc_cli::report::{allocate_from_file, write_plan, write_plots, write_rates, write_stats, StatsOptions};
use henry_mlmc_cli::study::{write_fields, write_solution, Study};

/// Multilevel Monte Carlo studies of a Henry-type saltwater intrusion problem.
#[derive(Parser)]
#[command(name = "henry-mlmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Default)]
struct Common {
    /// Configuration file with `key = value` lines, applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall clock cap in seconds.
    #[arg(long)]
    wall_cap: Option<f64>,
    /// Further `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one scenario and print `x,y,c,p` at a report time.
    Solve {
        #[arg(long, allow_hyphen_values = true, default_value = "0,0,0")]
        xi: String,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long, default_value_t = REPORT_COUNT)]
        snapshot_at: usize,
        /// Output file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the porosity and permeability fields `x,y,phi,K` of a scenario.
    Fields {
        #[arg(long, allow_hyphen_values = true, default_value = "0,0,0")]
        xi: String,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plain Monte Carlo ensemble on one level.
    Mc(EnsembleArgs),
    /// Quasi Monte Carlo (Halton) ensemble on one level.
    Qmc(EnsembleArgs),
    /// Multilevel Monte Carlo estimate with pilot, allocation and top-up.
    Mlmc {
        #[arg(long)]
        eps2: Option<f64>,
        #[arg(long, alias = "levels")]
        max_level: Option<usize>,
        /// Comma separated list of `point:<x>:<y>`, `fwint`, `fieldmean`.
        #[arg(long, allow_hyphen_values = true)]
        qoi: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Optimal samples per level from measured variances and costs.
    Allocate {
        #[arg(long)]
        stats_file: PathBuf,
        #[arg(long)]
        eps2: f64,
        /// Also write the plan as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit weak, strong and cost rates of an MLMC study.
    Rates {
        #[arg(long)]
        study: PathBuf,
    },
    /// Quantiles, densities and mean/variance fields of an ensemble study.
    Stats {
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value = "0.025,0.25,0.5,0.75,0.975")]
        quantiles: String,
        /// Report index of the density estimates.
        #[arg(long, default_value_t = REPORT_COUNT)]
        pdf_report: usize,
        /// Also estimate first-passage times across this threshold.
        #[arg(long, allow_hyphen_values = true)]
        passage_threshold: Option<f64>,
        /// `above` or `below`.
        #[arg(long, default_value = "above")]
        passage_direction: String,
    },
    /// SVG plots of a study's reports.
    Plot {
        #[arg(long)]
        study: PathBuf,
    },
    /// Run the study described by a configuration file.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    level: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    qoi: Option<String>,
    #[command(flatten)]
    common: Common,
}

fn base_config(common: &Common) -> Result<StudyConfig> {
    let mut config = StudyConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    Ok(config)
}

fn apply_common(config: &mut StudyConfig, common: &Common) -> Result<()> {
    let mut set = |k: &str, v: String| config.set(k, &v).map_err(|e| anyhow::anyhow!("--{k}: {e}"));
    if let Some(o) = &common.out {
        set("output", o.display().to_string())?;
    }
    if let Some(w) = common.workers {
        set("workers", w.to_string())?;
    }
    if let Some(s) = common.seed {
        set("stream_seed", s.to_string())?;
    }
    if let Some(c) = common.wall_cap {
        set("wall_clock_cap_s", c.to_string())?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv}: expected KEY=VALUE"))?;
        config.set(k.trim(), v.trim()).map_err(|e| anyhow::anyhow!("--set {kv}: {e}"))?;
    }
    config.validate()?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn scenario(xi: &str, level: usize) -> Result<StudyConfig> {
    let mut config = StudyConfig::default();
    config.set("xi", xi).map_err(|e| anyhow::anyhow!("--xi: {e}"))?;
    config.level = level;
    Ok(config)
}

fn run_study(config: StudyConfig) -> Result<()> {
    match config.command {
        Command::Solve => {
            let mut out = output(None)?;
            write_solution(&config, &mut out)?;
            out.flush()?;
        }
        Command::Fields => {
            let mut out = output(None)?;
            write_fields(&config, &mut out)?;
            out.flush()?;
        }
        Command::Mc | Command::Qmc => {
            let mut study = Study::open(config)?;
            let ensemble = study.run_ensemble()?;
            println!("{} samples on level {}, {} failed", ensemble.records.len(), ensemble.level, ensemble.failures());
            for (s, spec) in study.config.qoi.iter().enumerate() {
                let v = ensemble.values(s, REPORT_COUNT);
                let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                println!("{spec}: mean at the final time {mean}");
            }
            println!("wrote {}", study.dir.join("qoi_series.csv").display());
        }
        Command::Mlmc => {
            let mut study = Study::open(config)?;
            let run = study.run_mlmc()?;
            let m: Vec<String> = run.plan.m.iter().map(|m| m.to_string()).collect();
            println!("m = {} after {} rounds, realized variance {:e}", m.join(","), run.rounds, run.realized_variance);
            for (s, spec) in study.config.qoi.iter().enumerate() {
                let e = &run.estimates[s * REPORT_COUNT + REPORT_COUNT - 1];
                println!("{spec}: final time estimate {} (variance {:e}, bias proxy {:e})", e.value, e.statistical_variance, e.bias_proxy);
            }
            println!("wrote plan.csv, estimate.csv, level_stats.csv, corrections.csv in {}", study.dir.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Solve { xi, level, snapshot_at, out } => {
            let mut config = scenario(&xi, level)?;
            config.command = Command::Solve;
            config.snapshot_at = snapshot_at;
            let mut w = output(out.as_deref())?;
            write_solution(&config, &mut w)?;
            w.flush()?;
        }
        Cmd::Fields { xi, level, out } => {
            let mut config = scenario(&xi, level)?;
            config.command = Command::Fields;
            let mut w = output(out.as_deref())?;
            write_fields(&config, &mut w)?;
            w.flush()?;
        }
        Cmd::Mc(args) => run_ensemble(args, Command::Mc)?,
        Cmd::Qmc(args) => run_ensemble(args, Command::Qmc)?,
        Cmd::Mlmc { eps2, max_level, qoi, common } => {
            let mut config = base_config(&common)?;
            config.command = Command::Mlmc;
            if let Some(e) = eps2 {
                config.eps2 = e;
            }
            if let Some(l) = max_level {
                config.max_level = l;
            }
            if let Some(q) = qoi {
                config.set("qoi", &q).map_err(|e| anyhow::anyhow!("--qoi: {e}"))?;
            }
            apply_common(&mut config, &common)?;
            run_study(config)?;
        }
        Cmd::Allocate { stats_file, eps2, out } => {
            let plan = allocate_from_file(&stats_file, eps2)?;
            let m: Vec<String> = plan.m.iter().map(|m| m.to_string()).collect();
            println!("m = {}", m.join(","));
            println!("predicted cost {} predicted variance {:e}", plan.predicted_cost, plan.predicted_variance());
            if let Some(out) = out {
                write_plan(&plan, &stats_file, &out)?;
            }
        }
        Cmd::Rates { study } => {
            let study = Study::load(&study)?;
            let fits = write_rates(&study)?;
            for ((spec, k), f) in fits.iter().filter(|((_, k), _)| *k == REPORT_COUNT) {
                println!("{spec} k={k}: alpha {:.3} beta {:.3} gamma {:.3} (cost slope {:.3})", f.alpha, f.beta, f.gamma, f.cost_slope);
            }
            println!("wrote {} fits to {}", fits.len(), study.dir.join("rates.csv").display());
        }
        Cmd::Stats { study, quantiles, pdf_report, passage_threshold, passage_direction } => {
            let mut study = Study::load(&study)?;
            let probabilities = quantiles
                .split(',')
                .map(|p| p.trim().parse::<f64>().with_context(|| format!("--quantiles: `{p}`")))
                .collect::<Result<Vec<_>>>()?;
            let direction = match passage_direction.as_str() {
                "above" => Crossing::Above,
                "below" => Crossing::Below,
                other => bail!("--passage-direction: `{other}` is neither above nor below"),
            };
            let options = StatsOptions { probabilities, pdf_report, passage: passage_threshold.map(|t| (t, direction)), ..Default::default() };
            for path in write_stats(&mut study, &options)? {
                println!("wrote {}", path.display());
            }
        }
        Cmd::Plot { study } => {
            let study = Study::load(&study)?;
            for path in write_plots(&study)? {
                println!("wrote {}", path.display());
            }
        }
        Cmd::Run { common } => {
            if common.config.is_none() {
                bail!("run needs --config");
            }
            let mut config = base_config(&common)?;
            apply_common(&mut config, &common)?;
            run_study(config)?;
        }
    }
    Ok(())
}

fn run_ensemble(args: EnsembleArgs, command: Command) -> Result<()> {
    let mut config = base_config(&args.common)?;
    config.command = command;
    if let Some(n) = args.n {
        config.n = n;
    }
    if let Some(l) = args.level {
        config.level = l;
    }
    if let Some(q) = args.qoi {
        config.set("qoi", &q).map_err(|e| anyhow::anyhow!("--qoi: {e}"))?;
    }
    apply_common(&mut config, &args.common)?;
    run_study(config)
}
