//! Residual and analytic Jacobian of the implicit Euler step.
//!
//! Unknowns are interleaved per cell as `[p, c]`; the two equations of a cell
//! are total liquid mass and salt mass. Both are divided by `rho0 |V| / tau`
//! so residuals read as volume fractions per step.

use crate::linalg::{Block, BlockStencil, Slot};

use super::HenryProblem;

/// Fluxes leaving the first cell of a face, with derivatives with respect to
/// `[p_P, c_P, p_N, c_N]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FaceFlux {
    /// Volumetric flux `q . n A`, m^2/s (per unit depth).
    pub volume: f64,
    /// Liquid mass flux, kg/s.
    pub mass: f64,
    /// Salt mass flux, kg/s.
    pub salt: f64,
    pub d_mass: [f64; 4],
    pub d_salt: [f64; 4],
}

/// Geometry and medium coefficients of one face.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FaceCoefficients {
    /// `A K_f / (mu delta)`.
    pub transmissibility: f64,
    /// `phi_f D A / delta`.
    pub diffusivity: f64,
    /// `g delta` for faces with a vertical normal, otherwise zero.
    pub gravity_drop: f64,
}

/// Two-point flux from cell P to cell N (or a Dirichlet boundary state N).
#[inline]
pub(crate) fn face_flux(problem: &HenryProblem, coef: &FaceCoefficients, p_p: f64, c_p: f64, p_n: f64, c_n: f64) -> FaceFlux {
    let k = &problem.constants;
    let drho = 0.5 * k.density_slope();
    let c_f = 0.5 * (c_p + c_n);
    let rho_f = k.density(c_f);
    let t = coef.transmissibility;
    let q = -t * (p_n - p_p + rho_f * coef.gravity_drop);
    let dq_dc = -t * coef.gravity_drop * drho;

    let mass = rho_f * q;
    let d_mass = [rho_f * t, drho * q + rho_f * dq_dc, -rho_f * t, drho * q + rho_f * dq_dc];

    let upwind_p = q >= 0.0;
    let c_up = if upwind_p { c_p } else { c_n };
    let grad = c_n - c_p;
    let dc = coef.diffusivity;
    let salt = mass * c_up - rho_f * dc * grad;
    let d_salt = [
        d_mass[0] * c_up,
        d_mass[1] * c_up + if upwind_p { mass } else { 0.0 } - drho * dc * grad + rho_f * dc,
        d_mass[2] * c_up,
        d_mass[3] * c_up + if upwind_p { 0.0 } else { mass } - drho * dc * grad - rho_f * dc,
    ];
    FaceFlux { volume: q, mass, salt, d_mass, d_salt }
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Coefficients of the face between cell `i` and its east (`vertical == false`)
/// or north (`vertical == true`) neighbor `j`.
#[inline]
pub(crate) fn interior_coefficients(problem: &HenryProblem, i: usize, j: usize, vertical: bool) -> FaceCoefficients {
    let g = &problem.grid;
    let f = &problem.fields;
    let (area, delta) = if vertical { (g.hx, g.hy) } else { (g.hy, g.hx) };
    let k_f = harmonic(f.permeability[i], f.permeability[j]);
    let phi_f = harmonic(f.porosity[i], f.porosity[j]);
    FaceCoefficients {
        transmissibility: area * k_f / (problem.constants.viscosity * delta),
        diffusivity: phi_f * problem.constants.diffusion * area / delta,
        gravity_drop: if vertical { problem.constants.gravity * delta } else { 0.0 },
    }
}

/// Coefficients of the half-cell face between cell `i` and the left or right
/// boundary.
#[inline]
pub(crate) fn boundary_coefficients(problem: &HenryProblem, i: usize) -> FaceCoefficients {
    let g = &problem.grid;
    let f = &problem.fields;
    let delta = 0.5 * g.hx;
    FaceCoefficients {
        transmissibility: g.hy * f.permeability[i] / (problem.constants.viscosity * delta),
        diffusivity: f.porosity[i] * problem.constants.diffusion * g.hy / delta,
        gravity_drop: 0.0,
    }
}

/// Flux leaving cell `i` (in the first column) through the recharge boundary.
#[inline]
pub(crate) fn recharge_face_flux(problem: &HenryProblem, i: usize, c_p: f64) -> FaceFlux {
    let k = &problem.constants;
    let g = &problem.grid;
    let coef = boundary_coefficients(problem, i);
    let c_l = problem.recharge_concentration;
    let drho = 0.5 * k.density_slope();
    let rho_f = k.density(0.5 * (c_p + c_l));
    // recharge < 0 is inflow; mass leaving the cell is recharge * face length
    let mass = problem.fields.recharge * g.hy;
    let outflow = mass >= 0.0;
    let c_up = if outflow { c_p } else { c_l };
    let grad = c_l - c_p;
    let dc = coef.diffusivity;
    let salt = mass * c_up - rho_f * dc * grad;
    let d_salt_dc = if outflow { mass } else { 0.0 } - drho * dc * grad + rho_f * dc;
    FaceFlux {
        volume: mass / rho_f,
        mass,
        salt,
        d_mass: [0.0; 4],
        d_salt: [0.0, d_salt_dc, 0.0, 0.0],
    }
}

/// Flux leaving cell `i` (in the last column) through the seaside boundary.
#[inline]
pub(crate) fn seaside_face_flux(problem: &HenryProblem, i: usize, y: f64, p_p: f64, c_p: f64) -> FaceFlux {
    let coef = boundary_coefficients(problem, i);
    let c_b = problem.seaside_concentration;
    let p_b = problem.seaside_pressure(y);
    face_flux(problem, &coef, p_p, c_p, p_b, c_b)
}

/// Evaluates the scaled residual at `u` and, if requested, the Jacobian.
///
/// `old_storage` holds `(phi rho, phi rho c)` per cell at the previous time.
pub(crate) fn assemble(
    problem: &HenryProblem,
    old_storage: &[[f64; 2]],
    tau: f64,
    u: &[f64],
    residual: &mut [f64],
    mut jac: Option<&mut BlockStencil>,
) {
    let g = &problem.grid;
    let k = &problem.constants;
    let (nx, ny) = (g.nx, g.ny);
    let vol = g.cell_volume();
    let scale = tau / (k.rho_fresh * vol);
    let rate = vol / tau;
    let drho = k.density_slope();

    residual.iter_mut().for_each(|r| *r = 0.0);
    if let Some(j) = jac.as_deref_mut() {
        j.clear();
    }

    // accumulation
    for i in 0..g.cells() {
        let c = u[2 * i + 1];
        let phi = problem.fields.porosity[i];
        let rho = k.density(c);
        residual[2 * i] += rate * (phi * rho - old_storage[i][0]);
        residual[2 * i + 1] += rate * (phi * rho * c - old_storage[i][1]);
        if let Some(j) = jac.as_deref_mut() {
            j.add(i, Slot::Center, [0.0, rate * phi * drho, 0.0, rate * phi * (rho + drho * c)]);
        }
    }

    // interior faces
    for ix in 0..nx {
        for iy in 0..ny {
            let i = g.index(ix, iy);
            if ix + 1 < nx {
                let n = i + ny;
                let coef = interior_coefficients(problem, i, n, false);
                let f = face_flux(problem, &coef, u[2 * i], u[2 * i + 1], u[2 * n], u[2 * n + 1]);
                scatter(residual, jac.as_deref_mut(), i, n, Slot::East, Slot::West, &f);
            }
            if iy + 1 < ny {
                let n = i + 1;
                let coef = interior_coefficients(problem, i, n, true);
                let f = face_flux(problem, &coef, u[2 * i], u[2 * i + 1], u[2 * n], u[2 * n + 1]);
                scatter(residual, jac.as_deref_mut(), i, n, Slot::North, Slot::South, &f);
            }
        }
    }

    // left and right boundaries
    for iy in 0..ny {
        let i = g.index(0, iy);
        let f = recharge_face_flux(problem, i, u[2 * i + 1]);
        scatter_boundary(residual, jac.as_deref_mut(), i, &f);

        let i = g.index(nx - 1, iy);
        let (_, y) = g.cell_center(nx - 1, iy);
        let f = seaside_face_flux(problem, i, y, u[2 * i], u[2 * i + 1]);
        scatter_boundary(residual, jac.as_deref_mut(), i, &f);
    }

    residual.iter_mut().for_each(|r| *r *= scale);
    if let Some(j) = jac {
        for cell in &mut j.blocks {
            for b in cell.iter_mut() {
                for v in b.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}

#[inline]
fn scatter(residual: &mut [f64], jac: Option<&mut BlockStencil>, i: usize, n: usize, slot_in: Slot, slot_back: Slot, f: &FaceFlux) {
    residual[2 * i] += f.mass;
    residual[2 * i + 1] += f.salt;
    residual[2 * n] -= f.mass;
    residual[2 * n + 1] -= f.salt;
    if let Some(j) = jac {
        let own: Block = [f.d_mass[0], f.d_mass[1], f.d_salt[0], f.d_salt[1]];
        let other: Block = [f.d_mass[2], f.d_mass[3], f.d_salt[2], f.d_salt[3]];
        j.add(i, Slot::Center, own);
        j.add(i, slot_in, other);
        j.add(n, Slot::Center, other.map(|v| -v));
        j.add(n, slot_back, own.map(|v| -v));
    }
}

#[inline]
fn scatter_boundary(residual: &mut [f64], jac: Option<&mut BlockStencil>, i: usize, f: &FaceFlux) {
    residual[2 * i] += f.mass;
    residual[2 * i + 1] += f.salt;
    if let Some(j) = jac {
        j.add(i, Slot::Center, [f.d_mass[0], f.d_mass[1], f.d_salt[0], f.d_salt[1]]);
    }
}
