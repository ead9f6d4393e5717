//! Multilevel Monte Carlo estimation.
//!
//! The engine never touches the flow solver directly. It asks a
//! [`CorrectionSampler`] for batches of corrections `Y_l = g_l - g_{l-1}`
//! (plain `g_0` on level 0), keeps per-level moment accumulators, allocates
//! samples with [`allocate`] and assembles the telescoped estimate.

mod allocation;
mod rates;

use std::ops::Range;
use std::time::Instant;

use thiserror::Error;

use crate::num::Real;
use crate::stats::MomentAccumulator;

pub use allocation::{allocate, allocate_raw, MlmcPlan};
pub use rates::{complexity_regime, fit_line, fit_rates, Complexity, ComplexityRegime, LineFit, RateFit};

#[derive(Debug, Error)]
pub enum MlmcError {
    #[error("target variance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("inconsistent input sizes: {0}")]
    Shape(String),
    #[error("level {level}: invalid {what}")]
    InvalidStatistic { level: usize, what: String },
    #[error("rate fit of the {quantity} needs three usable correction levels, found {usable}")]
    TooFewLevels { quantity: &'static str, usable: usize },
    #[error("level {0} has no samples")]
    EmptyLevel(usize),
    #[error("pilot size must be at least 2, got {0}")]
    PilotTooSmall(usize),
    #[error("level {level}: {failed} of {attempted} samples failed")]
    TooManyFailures { level: usize, failed: usize, attempted: usize },
    #[error("predicted wall time {predicted_s:.0} s exceeds the cap of {cap_s:.0} s")]
    InfeasibleBudget { predicted_s: f64, cap_s: f64 },
    #[error("sampler failed")]
    Sampler(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// Moments of the corrections on one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats<T> {
    pub level: usize,
    pub m: usize,
    pub mean_y: T,
    /// Unbiased sample variance; zero when `m < 2`.
    pub var_y: T,
    /// Mean cost of one correction sample.
    pub mean_cost: T,
}

impl<T: Real> LevelStats<T> {
    pub fn from_accumulator(level: usize, acc: &MomentAccumulator<T>, mean_cost: T) -> Result<Self, MlmcError> {
        let mean_y = acc.mean().ok_or(MlmcError::EmptyLevel(level))?;
        Ok(Self { level, m: acc.count() as usize, mean_y, var_y: acc.variance().unwrap_or_else(T::zero), mean_cost })
    }

    pub fn from_samples(level: usize, values: &[T], costs: &[T]) -> Result<Self, MlmcError> {
        if costs.len() != values.len() {
            return Err(MlmcError::Shape(format!("{} values with {} costs", values.len(), costs.len())));
        }
        let acc: MomentAccumulator<T> = values.iter().copied().collect();
        let cost: MomentAccumulator<T> = costs.iter().copied().collect();
        Self::from_accumulator(level, &acc, cost.mean().unwrap_or_else(T::zero))
    }
}

/// Contribution of one level to a telescoped estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelTerm<T> {
    pub level: usize,
    pub m: usize,
    pub mean: T,
    pub variance: T,
}

/// Telescoped estimate of `E[g_L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcEstimate<T> {
    /// Sum of the per-level means, accumulated in level order.
    pub value: T,
    /// `sum V_l / m_l`.
    pub statistical_variance: T,
    /// `|mean Y_L|` of the finest correction; zero for a single level.
    pub bias_proxy: T,
    pub mse_proxy: T,
    pub levels: Vec<LevelTerm<T>>,
}

impl<T: Real> MlmcEstimate<T> {
    pub fn from_terms(levels: Vec<LevelTerm<T>>) -> Result<Self, MlmcError> {
        if levels.is_empty() {
            return Err(MlmcError::EmptyLevel(0));
        }
        if let Some(t) = levels.iter().find(|t| t.m == 0) {
            return Err(MlmcError::EmptyLevel(t.level));
        }
        let value = levels.iter().fold(T::zero(), |acc, t| acc + t.mean);
        let statistical_variance = levels.iter().map(|t| t.variance / T::from_count(t.m)).sum();
        let bias_proxy = if levels.len() > 1 { levels[levels.len() - 1].mean.abs() } else { T::zero() };
        Ok(Self { value, statistical_variance, bias_proxy, mse_proxy: statistical_variance + bias_proxy * bias_proxy, levels })
    }

    pub fn from_stats(stats: &[LevelStats<T>]) -> Result<Self, MlmcError> {
        Self::from_terms(stats.iter().map(|s| LevelTerm { level: s.level, m: s.m, mean: s.mean_y, variance: s.var_y }).collect())
    }

    /// Estimate using only levels `0..=max_level`.
    pub fn truncated(&self, max_level: usize) -> Result<Self, MlmcError> {
        Self::from_terms(self.levels.iter().copied().filter(|t| t.level <= max_level).collect())
    }
}

/// Telescoped estimate from independent per-level correction samples.
pub fn telescope<T: Real, S: AsRef<[T]>>(level_samples: &[S]) -> Result<MlmcEstimate<T>, MlmcError> {
    let terms = level_samples
        .iter()
        .enumerate()
        .map(|(level, s)| {
            let acc: MomentAccumulator<T> = s.as_ref().iter().copied().collect();
            let mean = acc.mean().ok_or(MlmcError::EmptyLevel(level))?;
            Ok(LevelTerm { level, m: acc.count() as usize, mean, variance: acc.variance().unwrap_or_else(T::zero) })
        })
        .collect::<Result<Vec<_>, MlmcError>>()?;
    MlmcEstimate::from_terms(terms)
}

/// One evaluated correction sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionSample<T> {
    pub index: u64,
    /// `Y_l` at every tracked report time; `None` if a solve failed.
    pub values: Option<Vec<T>>,
    /// Cost used for planning.
    pub cost: T,
    pub wall_seconds: f64,
}

/// Source of correction samples, e.g. a pool of flow solver workers.
pub trait CorrectionSampler<T: Real> {
    type Error: std::error::Error + Send + Sync + 'static;

    /// Number of values in every sample.
    fn outputs(&self) -> usize;

    /// Evaluates samples `indices` of correction level `level`.
    fn evaluate(&mut self, level: usize, indices: Range<u64>) -> Result<Vec<CorrectionSample<T>>, Self::Error>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmcConfig<T> {
    pub eps2: T,
    pub max_level: usize,
    pub m_pilot: usize,
    /// Output positions whose variances drive the allocation; the executed
    /// count per level is the maximum over them.
    pub allocation_outputs: Vec<usize>,
    pub max_rounds: usize,
    pub wall_cap_seconds: Option<f64>,
    /// Samples running at the same time, for the wall time prediction.
    pub parallelism: usize,
    /// Spatial dimension, for the cost rate.
    pub d: usize,
}

impl<T: Real> MlmcConfig<T> {
    pub fn new(eps2: T, max_level: usize, allocation_outputs: Vec<usize>) -> Self {
        Self { eps2, max_level, m_pilot: 10, allocation_outputs, max_rounds: 3, wall_cap_seconds: None, parallelism: 1, d: 2 }
    }
}

/// Accumulated samples of one level.
#[derive(Debug, Clone)]
struct LevelState<T> {
    moments: Vec<MomentAccumulator<T>>,
    cost: MomentAccumulator<T>,
    wall: f64,
    next_index: u64,
    failed: usize,
}

impl<T: Real> LevelState<T> {
    fn new(outputs: usize) -> Self {
        Self { moments: vec![MomentAccumulator::new(); outputs], cost: MomentAccumulator::new(), wall: 0.0, next_index: 0, failed: 0 }
    }

    fn successes(&self) -> usize {
        self.cost.count() as usize
    }

    fn stats(&self, level: usize, output: usize) -> Result<LevelStats<T>, MlmcError> {
        LevelStats::from_accumulator(level, &self.moments[output], self.cost.mean().unwrap_or_else(T::zero))
    }

    fn mean_wall(&self) -> f64 {
        self.wall / (self.successes() + self.failed).max(1) as f64
    }
}

/// Result of [`run_mlmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcRun<T> {
    pub plan: MlmcPlan<T>,
    /// One estimate per sample output.
    pub estimates: Vec<MlmcEstimate<T>>,
    /// `stats[output][level]`.
    pub stats: Vec<Vec<LevelStats<T>>>,
    pub rounds: usize,
    /// Realized `sum V_l / m_l`, maximized over the allocation outputs.
    pub realized_variance: T,
}

impl<T: Real> MlmcRun<T> {
    /// Rate fit at one output, if at least three correction levels exist.
    pub fn rates(&self, output: usize, d: usize) -> Result<RateFit<T>, MlmcError> {
        fit_rates(&self.stats[output], d)
    }
}

/// Pilot, allocate, top up and re-estimate, for at most `max_rounds`
/// allocation rounds.
pub fn run_mlmc<T: Real, S: CorrectionSampler<T>>(sampler: &mut S, config: &MlmcConfig<T>) -> Result<MlmcRun<T>, MlmcError> {
    if !(config.eps2 > T::zero()) || !config.eps2.is_finite() {
        return Err(MlmcError::InvalidTolerance(config.eps2.to_f64_lossy()));
    }
    if config.m_pilot < 2 {
        return Err(MlmcError::PilotTooSmall(config.m_pilot));
    }
    let outputs = sampler.outputs();
    if let Some(&bad) = config.allocation_outputs.iter().find(|&&o| o >= outputs) {
        return Err(MlmcError::Shape(format!("allocation output {bad} of {outputs}")));
    }
    let start = Instant::now();
    let mut levels: Vec<LevelState<T>> = (0..=config.max_level).map(|_| LevelState::new(outputs)).collect();
    for (l, state) in levels.iter_mut().enumerate() {
        fill(sampler, l, state, config.m_pilot)?;
    }
    let collect_stats = |levels: &[LevelState<T>], output: usize| -> Result<Vec<LevelStats<T>>, MlmcError> {
        levels.iter().enumerate().map(|(l, s)| s.stats(l, output)).collect()
    };
    let realized = |levels: &[LevelState<T>]| -> Result<T, MlmcError> {
        let mut worst = T::zero();
        for &o in &config.allocation_outputs {
            let v: T = collect_stats(levels, o)?.iter().map(|s| s.var_y / T::from_count(s.m)).sum();
            worst = worst.max(v);
        }
        Ok(worst)
    };

    let mut plan = None;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let mut round_plan: Option<MlmcPlan<T>> = None;
        for &o in &config.allocation_outputs {
            let p = allocate(&collect_stats(&levels, o)?, config.eps2)?;
            round_plan = Some(match round_plan {
                Some(q) => q.max_with(&p),
                None => p,
            });
        }
        let round_plan = match round_plan {
            Some(p) => p,
            None => break,
        };
        if let Some(cap) = config.wall_cap_seconds {
            let pending: f64 = levels
                .iter()
                .zip(&round_plan.m)
                .map(|(s, &m)| m.saturating_sub(s.successes()) as f64 * s.mean_wall())
                .sum();
            let predicted = start.elapsed().as_secs_f64() + pending / config.parallelism.max(1) as f64;
            if predicted > cap {
                return Err(MlmcError::InfeasibleBudget { predicted_s: predicted, cap_s: cap });
            }
        }
        for (l, (state, &m)) in levels.iter_mut().zip(&round_plan.m).enumerate() {
            fill(sampler, l, state, m)?;
        }
        plan = Some(round_plan);
        if realized(&levels)? <= config.eps2 {
            break;
        }
    }

    let stats: Vec<Vec<LevelStats<T>>> = (0..outputs).map(|o| collect_stats(&levels, o)).collect::<Result<_, _>>()?;
    let estimates = stats.iter().map(|s| MlmcEstimate::from_stats(s)).collect::<Result<_, _>>()?;
    let plan = match plan {
        Some(p) => p,
        None => allocate(&stats[0], config.eps2)?,
    };
    Ok(MlmcRun { plan, estimates, stats, rounds, realized_variance: realized(&levels)? })
}

/// Draws new samples on `level` until `target` of them succeeded.
fn fill<T: Real, S: CorrectionSampler<T>>(sampler: &mut S, level: usize, state: &mut LevelState<T>, target: usize) -> Result<(), MlmcError> {
    while state.successes() < target {
        let need = (target - state.successes()) as u64;
        let range = state.next_index..state.next_index + need;
        state.next_index = range.end;
        let mut batch = sampler.evaluate(level, range).map_err(|e| MlmcError::Sampler(Box::new(e)))?;
        batch.sort_by_key(|s| s.index);
        for sample in batch {
            state.wall += sample.wall_seconds;
            match sample.values {
                Some(values) if values.len() == state.moments.len() && values.iter().all(|v| v.is_finite()) => {
                    state.moments.iter_mut().zip(values).for_each(|(acc, v)| acc.push(v));
                    state.cost.push(sample.cost);
                }
                Some(values) if values.len() != state.moments.len() => {
                    return Err(MlmcError::Shape(format!("sample with {} values, expected {}", values.len(), state.moments.len())));
                }
                _ => state.failed += 1,
            }
        }
        let attempted = state.successes() + state.failed;
        if state.failed * 5 > attempted {
            return Err(MlmcError::TooManyFailures { level, failed: state.failed, attempted });
        }
    }
    Ok(())
}
