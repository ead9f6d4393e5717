//! Random porosity, derived permeability and recharge for one scenario.

use std::f64::consts::PI;

use thiserror::Error;

use crate::grid::GridLevel;
use crate::sampling::ParameterVector;

/// Mean porosity of the medium.
pub const MEAN_POROSITY: f64 = 0.35;
/// Permeability at the mean porosity, m^2.
pub const MEAN_PERMEABILITY: f64 = 1.020408e-9;
/// Nominal recharge magnitude, kg/(m^2 s).
pub const NOMINAL_RECHARGE: f64 = 6.6e-2;
/// Interface between the lower and upper layer.
pub const LAYER_INTERFACE_Y: f64 = -0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("porosity {phi} at ({x}, {y}) is outside (0, 1)")]
    PorosityOutOfRange { phi: f64, x: f64, y: f64 },
    #[error("kozeny-carman law needs 0 < phi < 1, got {0}")]
    Domain(f64),
}

/// Scaling constant of the Kozeny-Carman law, chosen so that the mean
/// porosity maps onto the nominal permeability.
pub fn kozeny_carman_scale() -> f64 {
    MEAN_PERMEABILITY * (1.0 - MEAN_POROSITY * MEAN_POROSITY) / MEAN_POROSITY.powi(3)
}

/// Permeability `K(phi) = k_kc phi^3 / (1 - phi^2)` in m^2.
pub fn kozeny_carman(phi: f64) -> Result<f64, FieldError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(FieldError::Domain(phi));
    }
    Ok(kozeny_carman_scale() * phi.powi(3) / (1.0 - phi * phi))
}

/// Two-layer porosity model evaluated at a point.
pub fn porosity_at(xi: &ParameterVector, x: f64, y: f64) -> f64 {
    let (xi1, xi2) = (xi.xi1(), xi.xi2());
    let layer = if y < LAYER_INTERFACE_Y { 1.0 + 0.2 * xi1 } else { 1.0 - 0.2 * xi1 };
    let perturbation = xi2 * (PI * x / 2.0).cos() + xi2 * (2.0 * PI * y).sin() + xi1 * (2.0 * PI * x).cos();
    MEAN_POROSITY * (1.0 + 0.15 * perturbation) * layer
}

/// Porosity at every cell center of `grid`.
pub fn porosity_field(xi: &ParameterVector, grid: &GridLevel) -> Result<Vec<f64>, FieldError> {
    let mut phi = vec![0.0; grid.cells()];
    for (i, x, y) in grid.centers() {
        let v = porosity_at(xi, x, y);
        if !(v > 0.0 && v < 1.0) {
            return Err(FieldError::PorosityOutOfRange { phi: v, x, y });
        }
        phi[i] = v;
    }
    Ok(phi)
}

/// Recharge flux in the sign convention of the boundary condition
/// `rho q . e_x = q_in` (negative values mean fresh water enters).
pub fn recharge_flux(xi3: f64) -> f64 {
    -NOMINAL_RECHARGE * (1.0 + 0.5 * xi3)
}

/// Medium properties and forcing realized on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFields {
    pub porosity: Vec<f64>,
    pub permeability: Vec<f64>,
    /// kg/(m^2 s), see [`recharge_flux`].
    pub recharge: f64,
    pub source: ParameterVector,
}

impl ScenarioFields {
    pub fn realize(xi: &ParameterVector, grid: &GridLevel) -> Result<Self, FieldError> {
        let porosity = porosity_field(xi, grid)?;
        let permeability = porosity.iter().map(|&p| kozeny_carman(p)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            porosity,
            permeability,
            recharge: recharge_flux(xi.xi3()),
            source: *xi,
        })
    }

    /// Homogeneous medium, used for degenerate and manufactured checks.
    pub fn uniform(grid: &GridLevel, porosity: f64, recharge: f64) -> Result<Self, FieldError> {
        let k = kozeny_carman(porosity)?;
        Ok(Self {
            porosity: vec![porosity; grid.cells()],
            permeability: vec![k; grid.cells()],
            recharge,
            source: ParameterVector::nominal(),
        })
    }
}
