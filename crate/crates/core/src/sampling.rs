//! Stochastic coordinates driving one scenario.
//!
//! Pseudo-random draws come from a counter-based ChaCha stream keyed by
//! `(stream_seed, sample_index)`, so any sample can be regenerated in any
//! order on any worker. Low-discrepancy draws are points of the Halton
//! sequence in bases 2, 3 and 5.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of stochastic dimensions.
pub const STOCHASTIC_DIM: usize = 3;

const HALTON_BASES: [u64; STOCHASTIC_DIM] = [2, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerKind {
    PseudoRandom,
    LowDiscrepancy,
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::PseudoRandom => "pseudo",
            SamplerKind::LowDiscrepancy => "halton",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pseudo" | "mc" | "pseudorandom" => Ok(SamplerKind::PseudoRandom),
            "halton" | "qmc" | "lowdiscrepancy" => Ok(SamplerKind::LowDiscrepancy),
            other => Err(format!("unknown sampler kind `{other}` (expected pseudo or halton)")),
        }
    }
}

/// A point `xi` of the parameter cube `[-1, 1]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterVector {
    pub xi: [f64; STOCHASTIC_DIM],
    pub sample_index: u64,
    pub sampler: SamplerKind,
}

impl ParameterVector {
    /// A fixed vector, e.g. the nominal scenario `xi = 0`.
    ///
    /// Returns `None` if a component lies outside `[-1, 1]` or is not finite.
    pub fn fixed(xi: [f64; STOCHASTIC_DIM]) -> Option<Self> {
        xi.iter().all(|v| (-1.0..=1.0).contains(v)).then_some(Self {
            xi,
            sample_index: 0,
            sampler: SamplerKind::PseudoRandom,
        })
    }

    pub fn nominal() -> Self {
        Self::fixed([0.0; STOCHASTIC_DIM]).unwrap()
    }

    pub fn xi1(&self) -> f64 {
        self.xi[0]
    }

    pub fn xi2(&self) -> f64 {
        self.xi[1]
    }

    pub fn xi3(&self) -> f64 {
        self.xi[2]
    }
}

/// Draws the parameter vector for one sample.
///
/// `stream_seed` is ignored for [`SamplerKind::LowDiscrepancy`].
pub fn draw_parameters(sampler: SamplerKind, stream_seed: u64, sample_index: u64) -> ParameterVector {
    let xi = match sampler {
        SamplerKind::PseudoRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
            rng.set_stream(sample_index);
            let mut xi = [0.0; STOCHASTIC_DIM];
            for v in &mut xi {
                *v = rng.gen_range(-1.0..=1.0);
            }
            xi
        }
        SamplerKind::LowDiscrepancy => {
            let mut xi = [0.0; STOCHASTIC_DIM];
            for (v, &base) in xi.iter_mut().zip(&HALTON_BASES) {
                *v = 2.0 * radical_inverse(sample_index, base) - 1.0;
            }
            xi
        }
    };
    ParameterVector { xi, sample_index, sampler }
}

/// Parameters of member `position` of an ensemble. Halton ensembles start
/// at sequence index 1, which skips the all-zeros corner point.
pub fn ensemble_member(sampler: SamplerKind, stream_seed: u64, position: u64) -> ParameterVector {
    match sampler {
        SamplerKind::PseudoRandom => draw_parameters(sampler, stream_seed, position),
        SamplerKind::LowDiscrepancy => draw_parameters(sampler, stream_seed, position + 1),
    }
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    debug_assert!(base >= 2);
    let inv_base = 1.0 / base as f64;
    let mut scale = inv_base;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * scale;
        index /= base;
        scale *= inv_base;
    }
    value
}

/// Derives an independent pseudo-random stream seed for a sub-study, e.g. one
/// MLMC correction level, from the study seed.
pub fn derive_stream(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Digit-reversal oracle: writes the base-b digits out as a string and
    /// reads them back behind the radix point.
    fn digit_reversal(index: u64, base: u64) -> f64 {
        let mut digits = Vec::new();
        let mut n = index;
        while n > 0 {
            digits.push(n % base);
            n /= base;
        }
        digits
            .iter()
            .enumerate()
            .map(|(k, &d)| d as f64 / (base as f64).powi(k as i32 + 1))
            .sum()
    }

    #[test]
    fn halton_ensembles_skip_the_origin() {
        let first = ensemble_member(SamplerKind::LowDiscrepancy, 0, 0);
        for (a, b) in first.xi.iter().zip([0.0, -1.0 / 3.0, -0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(ensemble_member(SamplerKind::PseudoRandom, 3, 4), draw_parameters(SamplerKind::PseudoRandom, 3, 4));
    }

    #[test]
    fn halton_first_points() {
        let p1 = draw_parameters(SamplerKind::LowDiscrepancy, 99, 1);
        assert_eq!(p1.xi[0], 0.0);
        let p2 = draw_parameters(SamplerKind::LowDiscrepancy, 7, 2);
        assert_eq!(p2.xi[0], -0.5);
        for index in 0..500 {
            for base in [2, 3, 5] {
                let a = radical_inverse(index, base);
                let b = digit_reversal(index, base);
                assert!((a - b).abs() < 1e-15, "index {index} base {base}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn halton_ignores_seed() {
        for k in 0..50 {
            let a = draw_parameters(SamplerKind::LowDiscrepancy, 1, k);
            let b = draw_parameters(SamplerKind::LowDiscrepancy, 12345, k);
            assert_eq!(a.xi, b.xi);
        }
    }

    #[test]
    fn pseudo_random_reproducible() {
        let a = draw_parameters(SamplerKind::PseudoRandom, 42, 17);
        let b = draw_parameters(SamplerKind::PseudoRandom, 42, 17);
        assert_eq!(a.xi.map(f64::to_bits), b.xi.map(f64::to_bits));
        let c = draw_parameters(SamplerKind::PseudoRandom, 42, 18);
        assert_ne!(a.xi, c.xi);
        let d = draw_parameters(SamplerKind::PseudoRandom, 43, 17);
        assert_ne!(a.xi, d.xi);
    }

    #[test]
    fn pseudo_random_uniform_moments() {
        let n = 100_000u64;
        let mut sum = [0.0; 3];
        let mut sum2 = [0.0; 3];
        for k in 0..n {
            let p = draw_parameters(SamplerKind::PseudoRandom, 2024, k);
            for d in 0..3 {
                assert!((-1.0..=1.0).contains(&p.xi[d]));
                sum[d] += p.xi[d];
                sum2[d] += p.xi[d] * p.xi[d];
            }
        }
        for d in 0..3 {
            let mean = sum[d] / n as f64;
            let var = sum2[d] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.01, "component {d} mean {mean}");
            assert!((var - 1.0 / 3.0).abs() < 0.01, "component {d} variance {var}");
        }
    }

    #[test]
    fn derived_streams_differ() {
        let s: Vec<u64> = (0..8).map(|l| derive_stream(1, l)).collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }

    #[test]
    fn fixed_rejects_out_of_cube() {
        assert!(ParameterVector::fixed([0.0, 1.5, 0.0]).is_none());
        assert!(ParameterVector::fixed([f64::NAN, 0.0, 0.0]).is_none());
        assert!(ParameterVector::fixed([-1.0, 1.0, 0.3]).is_some());
    }
}
