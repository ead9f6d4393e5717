//! Ensemble statistics: quantiles, kernel density estimates and mergeable
//! moment accumulators.

use thiserror::Error;

use crate::num::Real;

/// Probabilities of the default quantile bands.
pub const DEFAULT_PROBABILITIES: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("probability {0} is outside (0, 1)")]
    Probability(f64),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("field from level {got} pushed into an accumulator for level {expected}")]
    LevelMismatch { expected: usize, got: usize },
    #[error("field has {got} cells, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

fn sorted<T: Real>(values: &[T]) -> Result<Vec<T>, StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    Ok(v)
}

/// Quantile of already sorted data by linear interpolation between order
/// statistics at `h = (n - 1) p`.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    let h = T::from_count(n - 1) * p;
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - T::from_count(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Empirical quantiles of `values` at each probability in `probs`.
pub fn quantiles<T: Real>(values: &[T], probs: &[T]) -> Result<Vec<T>, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: values.len() });
    }
    if let Some(p) = probs.iter().find(|&&p| !(p > T::zero() && p < T::one())) {
        return Err(StatsError::Probability(p.to_f64_lossy()));
    }
    let s = sorted(values)?;
    Ok(probs.iter().map(|&p| quantile_sorted(&s, p)).collect())
}

/// Gaussian kernel density on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate<T> {
    pub grid: Vec<T>,
    pub density: Vec<T>,
    pub bandwidth: T,
    /// All samples were equal; the estimate is a unit-mass box of
    /// negligible width around that value.
    pub spike: bool,
}

impl<T: Real> DensityEstimate<T> {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> T {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| (x[1] - x[0]) * (d[0] + d[1]) * T::lit(0.5))
            .sum()
    }

    /// Indices of strict local maxima of the density.
    pub fn modes(&self) -> Vec<usize> {
        (1..self.density.len().saturating_sub(1))
            .filter(|&i| self.density[i] > self.density[i - 1] && self.density[i] > self.density[i + 1])
            .collect()
    }
}

/// Kernel density estimate with Silverman's bandwidth `1.06 sigma n^(-1/5)`,
/// evaluated at `grid_points` abscissae spanning `[min - 3 bw, max + 3 bw]`.
pub fn kde<T: Real>(values: &[T], grid_points: usize) -> Result<DensityEstimate<T>, StatsError> {
    if values.len() < 5 {
        return Err(StatsError::TooFew { need: 5, got: values.len() });
    }
    if grid_points < 2 {
        return Err(StatsError::TooFew { need: 2, got: grid_points });
    }
    let s = sorted(values)?;
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let mut acc = MomentAccumulator::new();
    s.iter().for_each(|&v| acc.push(v));
    let sigma = acc.variance().unwrap_or_else(T::zero).sqrt();
    let n = T::from_count(s.len());
    if sigma == T::zero() || hi == lo {
        let half = T::lit(0.5e-6) * lo.abs().max(T::one());
        let grid = vec![lo - half, lo + half];
        let width = grid[1] - grid[0];
        return Ok(DensityEstimate {
            grid,
            density: vec![T::one() / width; 2],
            bandwidth: T::zero(),
            spike: true,
        });
    }
    let bw = T::lit(1.06) * sigma * n.powf(T::lit(-0.2));
    let (a, b) = (lo - T::lit(3.0) * bw, hi + T::lit(3.0) * bw);
    let step = (b - a) / T::from_count(grid_points - 1);
    let norm = T::one() / (n * bw * (T::lit(2.0) * T::PI()).sqrt());
    let half = T::lit(0.5);
    let grid: Vec<T> = (0..grid_points).map(|i| a + step * T::from_count(i)).collect();
    let density = grid
        .iter()
        .map(|&x| {
            s.iter()
                .map(|&v| {
                    let u = (x - v) / bw;
                    (-half * u * u).exp()
                })
                .sum::<T>()
                * norm
        })
        .collect();
    Ok(DensityEstimate { grid, density, bandwidth: bw, spike: false })
}

/// Count, mean and sum of squared deviations of a stream of values.
///
/// Accumulators combine with [`MomentAccumulator::merge`], so partial results
/// from independent workers can be joined in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator<T> {
    n: u64,
    mean: T,
    m2: T,
}

impl<T: Real> MomentAccumulator<T> {
    pub fn new() -> Self {
        Self { n: 0, mean: T::zero(), m2: T::zero() }
    }

    pub fn push(&mut self, x: T) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::from_count(self.n as usize);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (T::from_count(self.n as usize), T::from_count(other.n as usize));
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean = self.mean + delta * nb / n;
        self.m2 = self.m2 + other.m2 + delta * delta * na * nb / n;
        self.n += other.n;
    }

    /// Rebuilds an accumulator from [`MomentAccumulator::parts`].
    pub fn from_parts(n: u64, mean: T, m2: T) -> Self {
        Self { n, mean, m2 }
    }

    /// Count, mean and sum of squared deviations.
    pub fn parts(&self) -> (u64, T, T) {
        (self.n, self.mean, self.m2)
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Option<T> {
        (self.n > 0).then_some(self.mean)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Option<T> {
        (self.n > 1).then(|| (self.m2 / T::from_count(self.n as usize - 1)).max(T::zero()))
    }
}

impl<T: Real> FromIterator<T> for MomentAccumulator<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut acc = Self::new();
        iter.into_iter().for_each(|x| acc.push(x));
        acc
    }
}

/// Per-cell moments of fields from one level.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMoments<T> {
    level: usize,
    cells: Vec<MomentAccumulator<T>>,
}

impl<T: Real> FieldMoments<T> {
    pub fn new(level: usize, cells: usize) -> Self {
        Self { level, cells: vec![MomentAccumulator::new(); cells] }
    }

    pub fn from_cells(level: usize, cells: Vec<MomentAccumulator<T>>) -> Self {
        Self { level, cells }
    }

    pub fn cells(&self) -> &[MomentAccumulator<T>] {
        &self.cells
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn count(&self) -> u64 {
        self.cells.first().map_or(0, |c| c.count())
    }

    pub fn push(&mut self, level: usize, field: &[T]) -> Result<(), StatsError> {
        if level != self.level {
            return Err(StatsError::LevelMismatch { expected: self.level, got: level });
        }
        if field.len() != self.cells.len() {
            return Err(StatsError::LengthMismatch { expected: self.cells.len(), got: field.len() });
        }
        self.cells.iter_mut().zip(field).for_each(|(a, &v)| a.push(v));
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<(), StatsError> {
        if other.level != self.level {
            return Err(StatsError::LevelMismatch { expected: self.level, got: other.level });
        }
        if other.cells.len() != self.cells.len() {
            return Err(StatsError::LengthMismatch { expected: self.cells.len(), got: other.cells.len() });
        }
        self.cells.iter_mut().zip(&other.cells).for_each(|(a, b)| a.merge(b));
        Ok(())
    }

    /// Mean and unbiased variance fields; needs two fields at least.
    pub fn mean_and_variance(&self) -> Result<(Vec<T>, Vec<T>), StatsError> {
        let n = self.count() as usize;
        if n < 2 {
            return Err(StatsError::TooFew { need: 2, got: n });
        }
        let mean = self.cells.iter().map(|a| a.mean().unwrap_or_else(T::zero)).collect();
        let var = self.cells.iter().map(|a| a.variance().unwrap_or_else(T::zero)).collect();
        Ok((mean, var))
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn median_of_one_to_hundred() {
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantiles(&data, &[0.5]).unwrap(), vec![50.5]);
        // h = 99 * 0.25 = 24.75 -> 25 + 0.75
        assert!((quantiles(&data, &[0.25]).unwrap()[0] - 25.75).abs() < 1e-12);
    }

    #[test]
    fn quantiles_of_constant_data() {
        let data = vec![0.42f32; 17];
        for q in quantiles(&data, &[0.025f32, 0.5, 0.975]).unwrap() {
            assert_eq!(q, 0.42);
        }
    }

    #[test]
    fn outer_quantiles_bracket_most_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>().powi(3)).collect();
        let q = quantiles(&data, &[0.025, 0.975]).unwrap();
        let inside = data.iter().filter(|&&v| v >= q[0] && v <= q[1]).count();
        assert!(inside >= 950, "{inside}");
    }

    #[test]
    fn quantile_errors() {
        assert!(quantiles(&[1.0], &[0.5]).is_err());
        assert!(quantiles(&[1.0, 2.0], &[0.0]).is_err());
        assert!(quantiles(&[1.0, 2.0], &[1.0]).is_err());
        assert!(quantiles(&[1.0, f64::NAN], &[0.5]).is_err());
    }

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        // Box-Muller
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
                (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
            })
            .collect()
    }

    #[test]
    fn kde_of_standard_normal() {
        let data = normal_sample(10_000, 11);
        let est = kde(&data, 801).unwrap();
        let at_zero = est
            .grid
            .iter()
            .zip(&est.density)
            .min_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap())
            .map(|(_, d)| *d)
            .unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((at_zero - exact).abs() < 0.15 * exact, "{at_zero}");
        assert!((est.integral() - 1.0).abs() < 0.01);
        assert!(est.density.iter().all(|&d| d >= 0.0));
        assert!((est.bandwidth - 1.06 * 10_000f64.powf(-0.2)).abs() < 0.05);
    }

    #[test]
    fn kde_finds_two_clusters() {
        let mut data: Vec<f64> = normal_sample(300, 2).iter().map(|v| v * 0.3 - 4.0).collect();
        data.extend(normal_sample(300, 3).iter().map(|v| v * 0.3 + 4.0));
        let est = kde(&data, 512).unwrap();
        assert_eq!(est.modes().len(), 2);
        assert!((est.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn kde_of_equal_values_is_a_spike() {
        let est = kde(&[3.0f32; 8], 100).unwrap();
        assert!(est.spike);
        assert!((est.integral() - 1.0).abs() < 1e-3);
        assert!(kde(&[1.0, 2.0], 10).is_err());
    }

    #[test]
    fn accumulator_matches_two_pass() {
        let data: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.25 + 1e3).collect();
        let acc: MomentAccumulator<f64> = data.iter().copied().collect();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (data.len() - 1) as f64;
        assert!((acc.mean().unwrap() - mean).abs() < 1e-12 * mean);
        assert!((acc.variance().unwrap() - var).abs() < 1e-10 * var);
        assert_eq!(MomentAccumulator::<f64>::new().mean(), None);
        assert_eq!([1.0].into_iter().collect::<MomentAccumulator<f64>>().variance(), None);
    }

    #[test]
    fn field_moments() {
        let mut m = FieldMoments::<f64>::new(1, 3);
        m.push(1, &[0.0, 0.5, 1.0]).unwrap();
        m.push(1, &[0.0, 0.5, 1.0]).unwrap();
        let (mean, var) = m.mean_and_variance().unwrap();
        assert_eq!(mean, vec![0.0, 0.5, 1.0]);
        assert!(var.iter().all(|&v| v == 0.0));
        assert!(m.push(2, &[0.0; 3]).is_err());
        assert!(m.push(1, &[0.0; 2]).is_err());
        assert!(FieldMoments::<f64>::new(0, 3).mean_and_variance().is_err());
    }
}
