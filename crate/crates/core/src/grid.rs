//! Space-time grid hierarchy on the aquifer `[0, 2] x [-1, 0]`.

use thiserror::Error;

pub const DOMAIN_X: (f64, f64) = (0.0, 2.0);
pub const DOMAIN_Y: (f64, f64) = (-1.0, 0.0);

/// Cells of the level-0 grid along x and y.
pub const BASE_NX: usize = 32;
pub const BASE_NY: usize = 16;
/// Time steps on level 0.
pub const BASE_STEPS: usize = 188;
/// Highest supported level.
pub const MAX_LEVEL: usize = 5;
/// Number of report times after the initial state.
pub const REPORT_COUNT: usize = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("level {0} exceeds the supported maximum {MAX_LEVEL}")]
    LevelTooFine(usize),
}

/// Fluid and medium constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Molecular diffusion, m^2/s.
    pub diffusion: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
    /// Fresh water density, kg/m^3.
    pub rho_fresh: f64,
    /// Brine density, kg/m^3.
    pub rho_brine: f64,
    /// Dynamic viscosity, kg/(m s).
    pub viscosity: f64,
    /// Simulated time span, s.
    pub t_end: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            diffusion: 18.8571e-6,
            gravity: 9.8,
            rho_fresh: 1000.0,
            rho_brine: 1024.99,
            viscosity: 1e-3,
            t_end: 6016.0,
        }
    }
}

impl PhysicalConstants {
    /// Density of the liquid at mass fraction `c`.
    #[inline]
    pub fn density(&self, c: f64) -> f64 {
        self.rho_fresh + (self.rho_brine - self.rho_fresh) * c
    }

    #[inline]
    pub fn density_slope(&self) -> f64 {
        self.rho_brine - self.rho_fresh
    }

    /// Physical time of report index `k` (0 is the initial state).
    pub fn report_time(&self, k: usize) -> f64 {
        self.t_end * k as f64 / REPORT_COUNT as f64
    }
}

/// One level of the coupled spatial/temporal hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLevel {
    pub level: usize,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub steps: usize,
    pub tau: f64,
}

impl GridLevel {
    pub fn new(level: usize, t_end: f64) -> Result<Self, GridError> {
        if level > MAX_LEVEL {
            return Err(GridError::LevelTooFine(level));
        }
        let refine = 1usize << level;
        let nx = BASE_NX * refine;
        let ny = BASE_NY * refine;
        let steps = BASE_STEPS * refine;
        Ok(Self {
            level,
            nx,
            ny,
            hx: (DOMAIN_X.1 - DOMAIN_X.0) / nx as f64,
            hy: (DOMAIN_Y.1 - DOMAIN_Y.0) / ny as f64,
            steps,
            tau: t_end / steps as f64,
        })
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Two unknowns per cell: pressure and mass fraction.
    pub fn n_dof(&self) -> usize {
        2 * self.cells()
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx * self.hy
    }

    /// Linear cell index; y runs fastest.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            DOMAIN_X.0 + (ix as f64 + 0.5) * self.hx,
            DOMAIN_Y.0 + (iy as f64 + 0.5) * self.hy,
        )
    }

    /// Iterator over `(index, x, y)` for every cell.
    pub fn centers(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.nx).flat_map(move |ix| {
            (0..self.ny).map(move |iy| {
                let (x, y) = self.cell_center(ix, iy);
                (self.index(ix, iy), x, y)
            })
        })
    }

    pub fn contains(x: f64, y: f64) -> bool {
        (DOMAIN_X.0..=DOMAIN_X.1).contains(&x) && (DOMAIN_Y.0..=DOMAIN_Y.1).contains(&y)
    }
}

/// Levels `0..=max_level`, each refining the previous one by two in every
/// direction and in time.
pub fn build_hierarchy(max_level: usize, t_end: f64) -> Result<Vec<GridLevel>, GridError> {
    if max_level > MAX_LEVEL {
        return Err(GridError::LevelTooFine(max_level));
    }
    (0..=max_level).map(|l| GridLevel::new(l, t_end)).collect()
}
