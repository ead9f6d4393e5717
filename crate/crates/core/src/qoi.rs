//! Quantities of interest extracted from trajectories.
//!
//! Every extractor works on cell-centered data at exact physical
//! coordinates, so values from different levels are directly comparable.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{GridLevel, DOMAIN_X, DOMAIN_Y, REPORT_COUNT};
use crate::solver::{State, Trajectory};

/// Mass fraction at or below which water counts as fresh.
pub const FRESHWATER_THRESHOLD: f64 = 0.012178;

/// Observation wells, three rows of four points from the bottom up.
pub const OBSERVATION_POINTS: [(f64, f64); 12] = [
    (1.10, -0.95),
    (1.35, -0.95),
    (1.60, -0.95),
    (1.85, -0.95),
    (1.10, -0.75),
    (1.35, -0.75),
    (1.60, -0.75),
    (1.85, -0.75),
    (1.10, -0.50),
    (1.35, -0.50),
    (1.60, -0.50),
    (1.85, -0.50),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QoiError {
    #[error("point ({0}, {1}) lies outside the domain")]
    OutsideDomain(f64, f64),
    #[error("cannot parse quantity of interest '{0}': expected point:<x>:<y>, fwint or fieldmean")]
    Parse(String),
    #[error("report index {0} is outside 1..=48")]
    ReportIndex(usize),
    #[error("series do not form a level pair: {0}")]
    Mismatch(String),
}

/// What is measured at each report time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QoiSpec {
    /// Mass fraction at a point.
    PointValue { x: f64, y: f64 },
    /// Area of the region with `c <= FRESHWATER_THRESHOLD`, m^2.
    FreshwaterIntegral,
    /// Domain average of the mass fraction.
    FullFieldMean,
}

impl QoiSpec {
    pub fn point(x: f64, y: f64) -> Result<Self, QoiError> {
        if !GridLevel::contains(x, y) || !x.is_finite() || !y.is_finite() {
            return Err(QoiError::OutsideDomain(x, y));
        }
        Ok(Self::PointValue { x, y })
    }

    /// Value of the quantity for one state.
    pub fn evaluate(&self, grid: &GridLevel, state: &State) -> f64 {
        match *self {
            Self::PointValue { x, y } => point_value(grid, &state.c, x, y),
            Self::FreshwaterIntegral => freshwater_integral(grid, &state.c),
            Self::FullFieldMean => field_mean(&state.c),
        }
    }

    /// Series over report times `1..=48`.
    pub fn series(&self, trajectory: &Trajectory, sample_index: u64, cost_s: f64) -> QoiSeries {
        let values = (1..=REPORT_COUNT).map(|k| self.evaluate(&trajectory.grid, trajectory.state(k))).collect();
        QoiSeries { spec: *self, level: trajectory.grid.level, sample_index, values, cost_s }
    }
}

impl fmt::Display for QoiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PointValue { x, y } => write!(f, "point:{x}:{y}"),
            Self::FreshwaterIntegral => f.write_str("fwint"),
            Self::FullFieldMean => f.write_str("fieldmean"),
        }
    }
}

impl FromStr for QoiSpec {
    type Err = QoiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || QoiError::Parse(s.to_string());
        match s.trim() {
            "fwint" => Ok(Self::FreshwaterIntegral),
            "fieldmean" => Ok(Self::FullFieldMean),
            other => {
                let rest = other.strip_prefix("point:").ok_or_else(bad)?;
                let (x, y) = rest.split_once(':').ok_or_else(bad)?;
                let x: f64 = x.trim().parse().map_err(|_| bad())?;
                let y: f64 = y.trim().parse().map_err(|_| bad())?;
                Self::point(x, y)
            }
        }
    }
}

/// QoI values at report times `1..=48` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiSeries {
    pub spec: QoiSpec,
    pub level: usize,
    pub sample_index: u64,
    /// `values[k - 1]` belongs to report time `k`.
    pub values: Vec<f64>,
    pub cost_s: f64,
}

impl QoiSeries {
    /// Value at report index `k` in `1..=48`.
    pub fn at(&self, k: usize) -> Result<f64, QoiError> {
        if k == 0 || k > self.values.len() {
            return Err(QoiError::ReportIndex(k));
        }
        Ok(self.values[k - 1])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 1.0 {
        return b;
    }
    a + t * (b - a)
}

/// Position of `x` in cell-center coordinates, clamped to the outermost
/// centers; returns the lower cell and the interpolation weight.
fn locate(x: f64, origin: f64, h: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let mut s = ((x - origin) / h - 0.5).clamp(0.0, (n - 1) as f64);
    // snap round-off so that cell centers return the cell value exactly
    if (s - s.round()).abs() < 1e-9 {
        s = s.round();
    }
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

/// Bilinear interpolation of the cell-centered field `c` at `(x, y)`.
pub fn point_value(grid: &GridLevel, c: &[f64], x: f64, y: f64) -> f64 {
    let (ix, fx) = locate(x, DOMAIN_X.0, grid.hx, grid.nx);
    let (iy, fy) = locate(y, DOMAIN_Y.0, grid.hy, grid.ny);
    let at = |i: usize, j: usize| c[grid.index(i.min(grid.nx - 1), j.min(grid.ny - 1))];
    let bottom = lerp(at(ix, iy), at(ix + 1, iy), fx);
    let top = lerp(at(ix, iy + 1), at(ix + 1, iy + 1), fx);
    lerp(bottom, top, fy)
}

/// Midpoint-rule area of the fresh water region.
pub fn freshwater_integral(grid: &GridLevel, c: &[f64]) -> f64 {
    let fresh = c.iter().filter(|&&v| v <= FRESHWATER_THRESHOLD).count();
    fresh as f64 * grid.cell_volume()
}

/// Cell average of `c`. On a uniform grid this equals the domain average.
pub fn field_mean(c: &[f64]) -> f64 {
    // running form keeps constant fields exact
    c.iter().enumerate().fold(0.0, |m, (i, &v)| m + (v - m) / (i + 1) as f64)
}

/// Direction of a threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Below,
    Above,
}

/// Earliest report index whose value is strictly beyond `threshold`.
pub fn first_passage(series: &QoiSeries, threshold: f64, direction: Crossing) -> Option<usize> {
    series
        .values
        .iter()
        .position(|&v| match direction {
            Crossing::Below => v < threshold,
            Crossing::Above => v > threshold,
        })
        .map(|i| i + 1)
}

/// Correction `fine - coarse` of one coupled sample.
pub fn level_difference(fine: &QoiSeries, coarse: &QoiSeries) -> Result<QoiSeries, QoiError> {
    if fine.spec != coarse.spec {
        return Err(QoiError::Mismatch(format!("specs {} and {}", fine.spec, coarse.spec)));
    }
    if fine.sample_index != coarse.sample_index {
        return Err(QoiError::Mismatch(format!("samples {} and {}", fine.sample_index, coarse.sample_index)));
    }
    if fine.level != coarse.level + 1 {
        return Err(QoiError::Mismatch(format!("levels {} and {}", fine.level, coarse.level)));
    }
    if fine.values.len() != coarse.values.len() {
        return Err(QoiError::Mismatch("series lengths differ".into()));
    }
    Ok(QoiSeries {
        spec: fine.spec,
        level: fine.level,
        sample_index: fine.sample_index,
        values: fine.values.iter().zip(&coarse.values).map(|(f, c)| f - c).collect(),
        cost_s: fine.cost_s + coarse.cost_s,
    })
}
