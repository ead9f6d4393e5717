use crate::num::Real;

use super::{LevelStats, MlmcError};

/// Samples per level for a target statistical variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcPlan<T> {
    pub eps2: T,
    pub m: Vec<usize>,
    /// Optimal real-valued counts before rounding.
    pub m_real: Vec<T>,
    /// Variances and costs the plan was computed from.
    pub variance: Vec<T>,
    pub cost: Vec<T>,
    /// `sum m_l s_l`.
    pub predicted_cost: T,
}

impl<T: Real> MlmcPlan<T> {
    /// `sum V_l / m_l` of the rounded counts.
    pub fn predicted_variance(&self) -> T {
        self.variance.iter().zip(&self.m).map(|(&v, &m)| v / T::from_count(m)).sum()
    }

    /// Element-wise maximum of two plans over the same levels, used when one
    /// sample set has to serve several report times.
    pub fn max_with(&self, other: &Self) -> Self {
        let pick = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect::<Vec<_>>();
        let m: Vec<usize> = self.m.iter().zip(&other.m).map(|(&a, &b)| a.max(b)).collect();
        let cost = pick(&self.cost, &other.cost);
        let predicted_cost = m.iter().zip(&cost).map(|(&k, &s)| T::from_count(k) * s).sum();
        Self {
            eps2: self.eps2.min(other.eps2),
            m_real: pick(&self.m_real, &other.m_real),
            variance: pick(&self.variance, &other.variance),
            cost,
            m,
            predicted_cost,
        }
    }
}

/// Optimal sample counts `m_l = eps^-2 sqrt(V_l / s_l) sum_i sqrt(V_i s_i)`,
/// rounded up and floored at one.
pub fn allocate_raw<T: Real>(variance: &[T], cost: &[T], eps2: T) -> Result<MlmcPlan<T>, MlmcError> {
    if !(eps2 > T::zero()) || !eps2.is_finite() {
        return Err(MlmcError::InvalidTolerance(eps2.to_f64_lossy()));
    }
    if variance.is_empty() || variance.len() != cost.len() {
        return Err(MlmcError::Shape(format!("{} variances for {} costs", variance.len(), cost.len())));
    }
    if let Some((l, v)) = variance.iter().enumerate().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
        return Err(MlmcError::InvalidStatistic { level: l, what: format!("variance {v}") });
    }
    if let Some((l, s)) = cost.iter().enumerate().find(|(_, s)| !(**s > T::zero()) || !s.is_finite()) {
        return Err(MlmcError::InvalidStatistic { level: l, what: format!("cost {s}") });
    }
    let total: T = variance.iter().zip(cost).map(|(&v, &s)| (v * s).sqrt()).sum();
    let m_real: Vec<T> = variance.iter().zip(cost).map(|(&v, &s)| (v / s).sqrt() * total / eps2).collect();
    let m: Vec<usize> = m_real.iter().map(|r| r.ceil().to_usize().unwrap_or(usize::MAX).max(1)).collect();
    let predicted_cost = m.iter().zip(cost).map(|(&k, &s)| T::from_count(k) * s).sum();
    Ok(MlmcPlan { eps2, m, m_real, variance: variance.to_vec(), cost: cost.to_vec(), predicted_cost })
}

/// [`allocate_raw`] on measured level statistics.
pub fn allocate<T: Real>(stats: &[LevelStats<T>], eps2: T) -> Result<MlmcPlan<T>, MlmcError> {
    let v: Vec<T> = stats.iter().map(|s| s.var_y).collect();
    let c: Vec<T> = stats.iter().map(|s| s.mean_cost).collect();
    allocate_raw(&v, &c, eps2)
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: [f64; 6] = [1.156, 4.113, 20.382, 139.0, 993.0, 8053.0];
    const V: [f64; 6] = [1.4e-5, 0.2e-5, 0.5e-6, 0.1e-6, 0.5e-7, 1e-7];

    #[test]
    fn reproduces_reference_rows() {
        assert_eq!(allocate_raw(&V, &S, 5e-6).unwrap().m, vec![35, 7, 2, 1, 1, 1]);
        assert_eq!(allocate_raw(&V, &S, 1e-6).unwrap().m, vec![172, 35, 8, 2, 1, 1]);
        let fine = allocate_raw(&V, &S, 1e-7).unwrap().m;
        for (got, want) in fine.iter().zip([1714usize, 344, 78, 14, 4, 2]) {
            assert!(got.abs_diff(want) <= 2, "{fine:?}");
        }
    }

    #[test]
    fn two_level_ratio() {
        let p = allocate_raw(&[1.0f64, 1.0], &[1.0, 4.0], 0.01).unwrap();
        assert!((p.m_real[1] / p.m_real[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(allocate_raw(&[0.0, 0.0], &[1.0, 2.0], 1e-3).unwrap().m, vec![1, 1]);
        assert!(allocate_raw(&V, &S, 0.0).is_err());
        assert!(allocate_raw(&V, &S, -1.0).is_err());
        assert!(allocate_raw(&[1.0], &[0.0], 1.0).is_err());
        assert!(allocate_raw(&[-1.0], &[1.0], 1.0).is_err());
        assert!(allocate_raw(&[1.0, 2.0], &[1.0], 1.0).is_err());
        let huge = allocate_raw(&V, &S, 1.0).unwrap();
        assert!(huge.m.iter().all(|&m| m == 1));
    }

    #[test]
    fn single_precision_agrees() {
        let v: Vec<f32> = V.iter().map(|&x| x as f32).collect();
        let s: Vec<f32> = S.iter().map(|&x| x as f32).collect();
        assert_eq!(allocate_raw(&v, &s, 1e-6).unwrap().m, vec![172, 35, 8, 2, 1, 1]);
    }

    #[test]
    fn rounded_plan_meets_target() {
        for eps2 in [5e-6, 1e-6, 5e-7, 1e-7] {
            let p = allocate_raw(&V, &S, eps2).unwrap();
            assert!(p.predicted_variance() <= eps2 * (1.0 + 1e-12));
        }
    }
}
