use crate::num::Real;

use super::{LevelStats, MlmcError};

/// Least-squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Root mean square of the residuals.
    pub rms_residual: T,
    pub points: usize,
}

pub fn fit_line<T: Real>(x: &[T], y: &[T]) -> LineFit<T> {
    let n = T::from_count(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let sxy: T = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let sxx: T = x.iter().map(|&a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: T = x.iter().zip(y).map(|(&a, &b)| (b - intercept - slope * a).powi(2)).sum();
    LineFit { slope, intercept, rms_residual: (ss / n).sqrt(), points: x.len() }
}

/// Observed weak, strong and cost rates of a level hierarchy.
///
/// The model is `|E[Y_l]| ~ c1 2^(-alpha l)`, `V_l ~ c2 2^(-beta l)` and
/// `s_l ~ c3 2^(d gamma l)`; `cost_slope` is the raw `d gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub cost_slope: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub d: usize,
    pub weak: LineFit<T>,
    pub strong: LineFit<T>,
    pub work: LineFit<T>,
}

fn log2_fit<T: Real>(stats: &[LevelStats<T>], quantity: &'static str, f: impl Fn(&LevelStats<T>) -> T) -> Result<LineFit<T>, MlmcError> {
    let (x, y): (Vec<T>, Vec<T>) = stats
        .iter()
        .filter(|s| s.level >= 1)
        .map(|s| (T::from_count(s.level), f(s)))
        .filter(|(_, v)| *v > T::zero() && v.is_finite())
        .map(|(l, v)| (l, v.log2()))
        .unzip();
    if x.len() < 3 {
        return Err(MlmcError::TooFewLevels { quantity, usable: x.len() });
    }
    Ok(fit_line(&x, &y))
}

/// Fits the rates on correction levels `l >= 1`. Levels with a zero mean,
/// variance or cost are left out of the respective fit.
pub fn fit_rates<T: Real>(stats: &[LevelStats<T>], d: usize) -> Result<RateFit<T>, MlmcError> {
    let weak = log2_fit(stats, "mean", |s| s.mean_y.abs())?;
    let strong = log2_fit(stats, "variance", |s| s.var_y)?;
    let work = log2_fit(stats, "cost", |s| s.mean_cost)?;
    let two = T::lit(2.0);
    Ok(RateFit {
        alpha: -weak.slope,
        beta: -strong.slope,
        gamma: work.slope / T::from_count(d),
        cost_slope: work.slope,
        c1: two.powf(weak.intercept),
        c2: two.powf(strong.intercept),
        c3: two.powf(work.intercept),
        d,
        weak,
        strong,
        work,
    })
}

/// Asymptotic cost of reaching accuracy `eps` with optimal allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComplexityRegime<T> {
    /// Variance decays faster than cost grows: `eps^-2`.
    EpsMinus2,
    /// Balanced: `eps^-2 (log eps)^2`.
    EpsMinus2LogSq,
    /// Cost dominates: `eps^-exponent` with `exponent = 2 + (d gamma - beta) / alpha`.
    EpsMinusExtra(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complexity<T> {
    pub regime: ComplexityRegime<T>,
    /// `alpha >= min(beta, d gamma) / 2`; the classification assumes it.
    pub precondition_met: bool,
}

pub fn complexity_regime<T: Real>(alpha: T, beta: T, gamma: T, d: usize) -> Complexity<T> {
    let dg = T::from_count(d) * gamma;
    let tie = T::lit(1e-9) * dg.abs().max(T::one());
    let regime = if (beta - dg).abs() <= tie {
        ComplexityRegime::EpsMinus2LogSq
    } else if beta > dg {
        ComplexityRegime::EpsMinus2
    } else {
        ComplexityRegime::EpsMinusExtra(T::lit(2.0) + (dg - beta) / alpha)
    };
    Complexity { regime, precondition_met: alpha >= T::lit(0.5) * beta.min(dg) }
}

impl<T: Real> RateFit<T> {
    pub fn complexity(&self) -> Complexity<T> {
        complexity_regime(self.alpha, self.beta, self.gamma, self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(levels: usize, mean: impl Fn(f64) -> f64, var: impl Fn(f64) -> f64, cost: impl Fn(f64) -> f64) -> Vec<LevelStats<f64>> {
        (0..levels)
            .map(|l| {
                let x = l as f64;
                LevelStats { level: l, m: 10, mean_y: mean(x), var_y: var(x), mean_cost: cost(x) }
            })
            .collect()
    }

    #[test]
    fn exact_log_linear_data() {
        let stats = synthetic(6, |l| 2f64.powf(-l), |l| 8.0 * 2f64.powf(-1.5 * l), |l| 0.5 * 2f64.powf(3.0 * l));
        let fit = fit_rates(&stats, 2).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        assert!((fit.beta - 1.5).abs() < 1e-12);
        assert!((fit.c2 - 8.0).abs() < 1e-10);
        assert!((fit.gamma - 1.5).abs() < 1e-12);
        assert!((fit.cost_slope - 3.0).abs() < 1e-12);
        assert!((fit.c3 - 0.5).abs() < 1e-12);
        assert!(fit.strong.rms_residual < 1e-12);
    }

    #[test]
    fn zero_levels_are_skipped_until_too_few_remain() {
        let mut stats = synthetic(5, |l| 2f64.powf(-l), |l| 2f64.powf(-2.0 * l), |l| 2f64.powf(3.0 * l));
        stats[2].mean_y = 0.0;
        let fit = fit_rates(&stats, 2).unwrap();
        assert_eq!(fit.weak.points, 3);
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        stats[3].mean_y = 0.0;
        assert!(matches!(fit_rates(&stats, 2), Err(MlmcError::TooFewLevels { quantity: "mean", usable: 2 })));
    }

    #[test]
    fn regimes() {
        assert_eq!(complexity_regime(1.0, 3.0, 1.0, 2).regime, ComplexityRegime::EpsMinus2);
        assert_eq!(complexity_regime(1.0, 2.0, 1.0, 2).regime, ComplexityRegime::EpsMinus2LogSq);
        assert_eq!(complexity_regime(1.0, 1.0, 1.0, 2).regime, ComplexityRegime::EpsMinusExtra(3.0));
        assert!(complexity_regime(1.0, 2.0, 1.0, 2).precondition_met);
        assert!(!complexity_regime(0.2, 2.0, 1.0, 2).precondition_met);
    }
}
