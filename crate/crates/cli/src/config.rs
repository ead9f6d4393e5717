//! Flat `key = value` study configuration.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use henry_mlmc::grid::{PhysicalConstants, MAX_LEVEL, REPORT_COUNT};
use henry_mlmc::qoi::QoiSpec;
use henry_mlmc::sampling::{SamplerKind, STOCHASTIC_DIM};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// What a study computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Fields,
    Mc,
    Qmc,
    Mlmc,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Fields => "fields",
            Command::Mc => "mc",
            Command::Qmc => "qmc",
            Command::Mlmc => "mlmc",
        }
    }
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solve" => Ok(Command::Solve),
            "fields" => Ok(Command::Fields),
            "mc" => Ok(Command::Mc),
            "qmc" => Ok(Command::Qmc),
            "mlmc" => Ok(Command::Mlmc),
            other => Err(format!("unknown command `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub command: Command,
    /// Grid level of single-level commands.
    pub level: usize,
    pub max_level: usize,
    pub n: usize,
    pub qoi: Vec<QoiSpec>,
    pub eps2: f64,
    pub sampler: SamplerKind,
    pub stream_seed: u64,
    pub m_pilot: usize,
    pub max_rounds: usize,
    /// Report indices whose variances drive the MLMC allocation.
    pub allocation_times: Vec<usize>,
    /// Report index of the accumulated mean and variance fields.
    pub field_report: Option<usize>,
    pub xi: [f64; STOCHASTIC_DIM],
    pub snapshot_at: usize,
    pub constants: PhysicalConstants,
    pub workers: usize,
    pub wall_clock_cap_s: Option<f64>,
    pub output: PathBuf,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            command: Command::Mlmc,
            level: 0,
            max_level: 2,
            n: 100,
            qoi: vec![QoiSpec::PointValue { x: 1.6, y: -0.95 }],
            eps2: 1e-5,
            sampler: SamplerKind::PseudoRandom,
            stream_seed: 1,
            m_pilot: 10,
            max_rounds: 3,
            allocation_times: vec![REPORT_COUNT],
            field_report: Some(REPORT_COUNT),
            xi: [0.0; STOCHASTIC_DIM],
            snapshot_at: REPORT_COUNT,
            constants: PhysicalConstants::default(),
            workers: 1,
            wall_clock_cap_s: None,
            output: PathBuf::from("study"),
        }
    }
}

/// Keys that do not change results and are left out of the hash.
const UNHASHED: [&str; 3] = ["workers", "wall_clock_cap_s", "output"];

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", s.trim())))
        .collect()
}

fn parse_one<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

fn optional<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse_one(value).map(Some)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl StudyConfig {
    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(ConfigError::Syntax { line, message: format!("duplicate key `{key}`") });
            }
            seen.push(key);
            self.set(key, value.trim()).map_err(|message| ConfigError::Syntax { line, message })?;
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "command" => self.command = parse_one(value)?,
            "level" => self.level = parse_one(value)?,
            "max_level" => self.max_level = parse_one(value)?,
            "n" => self.n = parse_one(value)?,
            "qoi" => self.qoi = parse_list(value)?,
            "eps2" => self.eps2 = parse_one(value)?,
            "sampler" => self.sampler = parse_one(value)?,
            "stream_seed" => self.stream_seed = parse_one(value)?,
            "m_pilot" => self.m_pilot = parse_one(value)?,
            "max_rounds" => self.max_rounds = parse_one(value)?,
            "allocation_times" => self.allocation_times = parse_list(value)?,
            "field_report" => self.field_report = optional(value)?,
            "xi" => {
                let v: Vec<f64> = parse_list(value)?;
                self.xi = v.try_into().map_err(|v: Vec<f64>| format!("xi needs {STOCHASTIC_DIM} components, got {}", v.len()))?;
            }
            "snapshot_at" => self.snapshot_at = parse_one(value)?,
            "diffusion" => self.constants.diffusion = parse_one(value)?,
            "gravity" => self.constants.gravity = parse_one(value)?,
            "rho_fresh" => self.constants.rho_fresh = parse_one(value)?,
            "rho_brine" => self.constants.rho_brine = parse_one(value)?,
            "viscosity" => self.constants.viscosity = parse_one(value)?,
            "t_end" => self.constants.t_end = parse_one(value)?,
            "workers" => self.workers = parse_one(value)?,
            "wall_clock_cap_s" => self.wall_clock_cap_s = optional(value)?,
            "output" => self.output = PathBuf::from(value),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.level > MAX_LEVEL || self.max_level > MAX_LEVEL {
            return bad(format!("levels above {MAX_LEVEL} are not supported"));
        }
        if matches!(self.command, Command::Mc | Command::Qmc) && self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if self.qoi.is_empty() {
            return bad("qoi list is empty".into());
        }
        if !(self.eps2 > 0.0 && self.eps2.is_finite()) {
            return bad(format!("eps2 must be positive, got {}", self.eps2));
        }
        if self.m_pilot < 2 {
            return bad("m_pilot must be at least 2".into());
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        let report = |k: usize| (1..=REPORT_COUNT).contains(&k);
        if self.allocation_times.is_empty() || !self.allocation_times.iter().all(|&k| report(k)) {
            return bad(format!("allocation_times must lie in 1..={REPORT_COUNT}"));
        }
        if self.field_report.is_some_and(|k| !report(k)) || self.snapshot_at > REPORT_COUNT {
            return bad(format!("report indices must lie in 0..={REPORT_COUNT}"));
        }
        if self.xi.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return bad("xi components must lie in [-1, 1]".into());
        }
        let c = &self.constants;
        if [c.diffusion, c.gravity, c.rho_fresh, c.rho_brine, c.viscosity, c.t_end].iter().any(|v| !v.is_finite()) {
            return bad("physical constants must be finite".into());
        }
        if !(c.viscosity > 0.0 && c.t_end > 0.0 && c.diffusion >= 0.0) {
            return bad("viscosity and t_end must be positive, diffusion non-negative".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.wall_clock_cap_s.is_some_and(|w| !(w > 0.0)) {
            return bad("wall_clock_cap_s must be positive".into());
        }
        Ok(())
    }

    /// Every key in a fixed order, as `(key, value)`.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.constants;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        vec![
            ("command", self.command.as_str().into()),
            ("level", self.level.to_string()),
            ("max_level", self.max_level.to_string()),
            ("n", self.n.to_string()),
            ("qoi", join(&self.qoi)),
            ("eps2", self.eps2.to_string()),
            ("sampler", self.sampler.to_string()),
            ("stream_seed", self.stream_seed.to_string()),
            ("m_pilot", self.m_pilot.to_string()),
            ("max_rounds", self.max_rounds.to_string()),
            ("allocation_times", join(&self.allocation_times)),
            ("field_report", opt(self.field_report.map(|k| k.to_string()))),
            ("xi", join(&self.xi)),
            ("snapshot_at", self.snapshot_at.to_string()),
            ("diffusion", c.diffusion.to_string()),
            ("gravity", c.gravity.to_string()),
            ("rho_fresh", c.rho_fresh.to_string()),
            ("rho_brine", c.rho_brine.to_string()),
            ("viscosity", c.viscosity.to_string()),
            ("t_end", c.t_end.to_string()),
            ("workers", self.workers.to_string()),
            ("wall_clock_cap_s", opt(self.wall_clock_cap_s.map(|w| w.to_string()))),
            ("output", self.output.display().to_string()),
        ]
    }

    /// Canonical text form; parsing it gives back the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hash of every setting that can change results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries().into_iter().filter(|(k, _)| !UNHASHED.contains(k)) {
            h.update(format!("{k}={v}\n"));
        }
        hex(&h.finalize()[..8])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let c = StudyConfig {
            qoi: vec!["fwint".parse().unwrap(), "point:1.35:-0.5".parse().unwrap()],
            field_report: None,
            wall_clock_cap_s: Some(60.0),
            xi: [0.5, -1.0, 0.25],
            ..Default::default()
        };
        let back = StudyConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn lists_tolerate_spaces() {
        let c = StudyConfig::parse("qoi = point:1.6:-0.95, fwint\nallocation_times = 24, 48 # two times").unwrap();
        assert_eq!(c.qoi.len(), 2);
        assert_eq!(c.allocation_times, vec![24, 48]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = StudyConfig::parse("# study\nlevel = 1\n\nmax_level = two\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 4, .. }), "{err}");
        let err = StudyConfig::parse("level = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = StudyConfig::parse("n = 3\nn = 4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = StudyConfig::parse("just words\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(StudyConfig::parse("eps2 = 0").is_err());
        assert!(StudyConfig::parse("max_level = 9").is_err());
        assert!(StudyConfig::parse("allocation_times = 0").is_err());
        assert!(StudyConfig::parse("xi = 0,0,2").is_err());
        assert!(StudyConfig::parse("workers = 0").is_err());
        assert!(StudyConfig::parse("qoi = point:3:0").is_err());
    }

    #[test]
    fn hash_ignores_scheduling_settings() {
        let a = StudyConfig::parse("workers = 1\noutput = a").unwrap();
        let b = StudyConfig::parse("workers = 8\noutput = b\nwall_clock_cap_s = 100").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = StudyConfig::parse("stream_seed = 2").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
