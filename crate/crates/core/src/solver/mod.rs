//! Transient solver for density-driven flow on one grid level.
//!
//! Cell-centered finite volumes with two-point fluxes, full upwinding of the
//! advective salt flux and implicit Euler in time. Each step solves the fully
//! coupled nonlinear system for `(p, c)` with Newton's method.

mod assembly;

use std::time::Instant;

use thiserror::Error;

use crate::fields::{FieldError, ScenarioFields};
use crate::grid::{GridError, GridLevel, PhysicalConstants, REPORT_COUNT};
use crate::linalg::{
    BlockStencil, DirectSolver, KrylovOptions, LinearSolveError, LinearSolver, LinearSolverKind, MultigridSolver,
};
use crate::sampling::ParameterVector;

use assembly::{assemble, interior_coefficients, face_flux, recharge_face_flux, seaside_face_flux};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("newton iteration did not converge at t = {time} s after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { time: f64, iterations: usize, residual: f64 },
    #[error("linear solve failed at t = {time} s: {source}")]
    LinearSolveFailure { time: f64, source: LinearSolveError },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One deterministic flow problem: grid, medium, forcing and constants.
#[derive(Debug, Clone)]
pub struct HenryProblem {
    pub grid: GridLevel,
    pub fields: ScenarioFields,
    pub constants: PhysicalConstants,
    /// Mass fraction imposed on the seaside (right) boundary.
    pub seaside_concentration: f64,
    /// Mass fraction of the recharge water on the left boundary.
    pub recharge_concentration: f64,
}

impl HenryProblem {
    pub fn new(grid: GridLevel, fields: ScenarioFields, constants: PhysicalConstants) -> Self {
        Self { grid, fields, constants, seaside_concentration: 1.0, recharge_concentration: 0.0 }
    }

    /// Hydrostatic seaside pressure for the imposed seaside mass fraction.
    pub fn seaside_pressure(&self, y: f64) -> f64 {
        -self.constants.density(self.seaside_concentration) * self.constants.gravity * y
    }
}

/// Discrete state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Mass fraction per cell.
    pub c: Vec<f64>,
    /// Pressure per cell, Pa.
    pub p: Vec<f64>,
    /// Time, s.
    pub t: f64,
}

impl State {
    fn pack(&self) -> Vec<f64> {
        let mut u = vec![0.0; 2 * self.c.len()];
        for i in 0..self.c.len() {
            u[2 * i] = self.p[i];
            u[2 * i + 1] = self.c[i];
        }
        u
    }

    fn unpack(u: &[f64], t: f64) -> Self {
        let n = u.len() / 2;
        Self { p: (0..n).map(|i| u[2 * i]).collect(), c: (0..n).map(|i| u[2 * i + 1]).collect(), t }
    }

    /// `(1 - w) self + w other`, field by field.
    pub fn lerp(&self, other: &State, w: f64) -> State {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect();
        State { c: mix(&self.c, &other.c), p: mix(&self.p, &other.p), t: (1.0 - w) * self.t + w * other.t }
    }
}

/// Normal Darcy velocities on all faces, m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocities {
    /// Faces normal to x, `(nx + 1) * ny`, index `ix * ny + iy` for the face
    /// left of column `ix`; positive in +x.
    pub x_faces: Vec<f64>,
    /// Faces normal to y, `nx * (ny + 1)`, index `ix * (ny + 1) + iy` for the
    /// face below row `iy`; positive in +y.
    pub y_faces: Vec<f64>,
}

impl FaceVelocities {
    pub fn max_abs(&self) -> f64 {
        self.x_faces.iter().chain(&self.y_faces).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude over faces not on the domain boundary.
    pub fn max_abs_interior(&self, grid: &GridLevel) -> f64 {
        let (nx, ny) = (grid.nx, grid.ny);
        let mut m: f64 = 0.0;
        for ix in 1..nx {
            for iy in 0..ny {
                m = m.max(self.x_faces[ix * ny + iy].abs());
            }
        }
        for ix in 0..nx {
            for iy in 1..ny {
                m = m.max(self.y_faces[ix * (ny + 1) + iy].abs());
            }
        }
        m
    }
}

/// Face-normal Darcy velocities of `state`.
pub fn darcy_velocity(problem: &HenryProblem, state: &State) -> FaceVelocities {
    let g = &problem.grid;
    let (nx, ny) = (g.nx, g.ny);
    let mut x_faces = vec![0.0; (nx + 1) * ny];
    let mut y_faces = vec![0.0; nx * (ny + 1)];
    for ix in 0..nx {
        for iy in 0..ny {
            let i = g.index(ix, iy);
            if ix + 1 < nx {
                let n = i + ny;
                let coef = interior_coefficients(problem, i, n, false);
                let f = face_flux(problem, &coef, state.p[i], state.c[i], state.p[n], state.c[n]);
                x_faces[(ix + 1) * ny + iy] = f.volume / g.hy;
            }
            if iy + 1 < ny {
                let n = i + 1;
                let coef = interior_coefficients(problem, i, n, true);
                let f = face_flux(problem, &coef, state.p[i], state.c[i], state.p[n], state.c[n]);
                y_faces[ix * (ny + 1) + iy + 1] = f.volume / g.hx;
            }
        }
    }
    for iy in 0..ny {
        let i = g.index(0, iy);
        // outward flux through the left face points in -x
        x_faces[iy] = -recharge_face_flux(problem, i, state.c[i]).volume / g.hy;
        let i = g.index(nx - 1, iy);
        let (_, y) = g.cell_center(nx - 1, iy);
        x_faces[nx * ny + iy] = seaside_face_flux(problem, i, y, state.p[i], state.c[i]).volume / g.hy;
    }
    FaceVelocities { x_faces, y_faces }
}

/// Total salt mass `sum phi rho c |V|` per unit depth, kg.
pub fn salt_mass(problem: &HenryProblem, state: &State) -> f64 {
    let vol = problem.grid.cell_volume();
    state
        .c
        .iter()
        .zip(&problem.fields.porosity)
        .map(|(&c, &phi)| phi * problem.constants.density(c) * c * vol)
        .sum()
}

/// Net salt mass flux leaving the domain through its boundary, kg/s.
pub fn boundary_salt_outflow(problem: &HenryProblem, state: &State) -> f64 {
    let g = &problem.grid;
    (0..g.ny)
        .map(|iy| {
            let l = g.index(0, iy);
            let r = g.index(g.nx - 1, iy);
            let (_, y) = g.cell_center(g.nx - 1, iy);
            recharge_face_flux(problem, l, state.c[l]).salt + seaside_face_flux(problem, r, y, state.p[r], state.c[r]).salt
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Newton stops when the max-norm residual falls below this fraction of
    /// the residual at the start of the step...
    pub newton_rel_tol: f64,
    /// ...or below this absolute value (scaled units)...
    pub newton_abs_tol: f64,
    /// ...or once an update changes no mass fraction by more than this and
    /// no pressure by more than this fraction of the largest pressure. The
    /// residual of fine levels levels off at round-off above the tolerances.
    pub newton_step_tol: f64,
    pub max_newton: usize,
    pub linear: LinearSolverKind,
    pub krylov: KrylovOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_rel_tol: 1e-8,
            newton_abs_tol: 1e-12,
            newton_step_tol: 1e-10,
            max_newton: 20,
            linear: LinearSolverKind::Multigrid,
            krylov: KrylovOptions { rel_tol: 1e-6, max_iterations: 200 },
        }
    }
}

/// Diagnostics of one (possibly subdivided) time step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    /// Deterministic multiply-add estimate of the step.
    pub work: f64,
    /// The step was recomputed as two half steps.
    pub retried: bool,
    pub final_residual: f64,
}

/// Stepper bound to one problem; owns its work buffers.
pub struct HenrySolver {
    problem: HenryProblem,
    options: SolverOptions,
    jac: BlockStencil,
    multigrid: MultigridSolver,
    residual: Vec<f64>,
    delta: Vec<f64>,
    rhs: Vec<f64>,
}

impl HenrySolver {
    pub fn new(problem: HenryProblem, options: SolverOptions) -> Self {
        let g = problem.grid;
        let n = g.n_dof();
        Self {
            jac: BlockStencil::zeros(g.nx, g.ny),
            multigrid: MultigridSolver::new(options.krylov),
            residual: vec![0.0; n],
            delta: vec![0.0; n],
            rhs: vec![0.0; n],
            problem,
            options,
        }
    }

    pub fn problem(&self) -> &HenryProblem {
        &self.problem
    }

    /// Fresh water everywhere with the stationary pressure of that state.
    pub fn initial_state(&mut self) -> Result<State, SolveError> {
        let g = self.problem.grid;
        let c0 = self.problem.recharge_concentration;
        let mut state = State { c: vec![c0; g.cells()], p: vec![0.0; g.cells()], t: 0.0 };
        for (i, _, y) in g.centers() {
            state.p[i] = self.problem.seaside_pressure(y);
        }
        // Only the pressure rows matter at fixed c; one Newton step on the
        // stationary mass balance (linear in p) with c pinned.
        let storage = self.storage(&state);
        let mut u = state.pack();
        assemble(&self.problem, &storage, g.tau, &u, &mut self.residual, Some(&mut self.jac));
        let r0 = max_abs(&self.residual);
        if r0 > self.options.newton_abs_tol {
            for i in 0..g.cells() {
                // decouple c: identity rows for the salt equation
                let blocks = &mut self.jac.blocks[i];
                blocks[0][1] = 0.0;
                blocks[0][2] = 0.0;
                blocks[0][3] = 1.0;
                for b in blocks.iter_mut().skip(1) {
                    b[1] = 0.0;
                    b[2] = 0.0;
                    b[3] = 0.0;
                }
                self.residual[2 * i + 1] = 0.0;
            }
            let loose = self.options.krylov;
            self.multigrid.set_options(KrylovOptions { rel_tol: 1e-12, ..loose });
            let solved = self.solve_linear(0.0);
            self.multigrid.set_options(loose);
            solved?;
            for (ui, d) in u.iter_mut().zip(&self.delta) {
                *ui += d;
            }
            state = State::unpack(&u, 0.0);
            for v in &mut state.c {
                *v = c0;
            }
        }
        Ok(state)
    }

    fn storage(&self, state: &State) -> Vec<[f64; 2]> {
        let k = &self.problem.constants;
        state
            .c
            .iter()
            .zip(&self.problem.fields.porosity)
            .map(|(&c, &phi)| {
                let rho = k.density(c);
                [phi * rho, phi * rho * c]
            })
            .collect()
    }

    fn solve_linear(&mut self, time: f64) -> Result<crate::linalg::LinearStats, SolveError> {
        for (b, r) in self.rhs.iter_mut().zip(&self.residual) {
            *b = -r;
        }
        self.delta.iter_mut().for_each(|d| *d = 0.0);
        let result = match self.options.linear {
            LinearSolverKind::Direct => DirectSolver.solve(&self.jac, &self.rhs, &mut self.delta),
            LinearSolverKind::Multigrid => self.multigrid.solve(&self.jac, &self.rhs, &mut self.delta),
        };
        result.map_err(|source| SolveError::LinearSolveFailure { time, source })
    }

    /// One implicit Euler step by Newton's method; iterations and work are
    /// added to `report` whether or not the step converges.
    fn newton(&mut self, state: &State, tau: f64, report: &mut StepReport) -> Result<State, SolveError> {
        let storage = self.storage(state);
        let mut u = state.pack();
        let t_new = state.t + tau;
        let p_scale = state.p.iter().fold(1.0f64, |m, p| m.max(p.abs()));
        let mut r0 = 0.0;
        let mut iterations = 0;
        for it in 0..=self.options.max_newton {
            assemble(&self.problem, &storage, tau, &u, &mut self.residual, Some(&mut self.jac));
            report.work += (self.residual.len() * 20) as f64;
            let r = max_abs(&self.residual);
            if !r.is_finite() {
                break;
            }
            if it == 0 {
                r0 = r;
            }
            report.final_residual = r;
            if r <= self.options.newton_abs_tol || (it > 0 && r <= self.options.newton_rel_tol * r0) {
                return Ok(State::unpack(&u, t_new));
            }
            if it == self.options.max_newton {
                break;
            }
            let stats = self.solve_linear(t_new)?;
            report.newton_iterations += 1;
            report.linear_iterations += stats.iterations;
            report.work += stats.work;
            iterations += 1;
            let (mut dp, mut dc) = (0.0f64, 0.0f64);
            for (ui, d) in u.chunks_exact_mut(2).zip(self.delta.chunks_exact(2)) {
                ui[0] += d[0];
                ui[1] += d[1];
                dp = dp.max(d[0].abs());
                dc = dc.max(d[1].abs());
            }
            if it > 0 && dc <= self.options.newton_step_tol && dp <= self.options.newton_step_tol * p_scale {
                return Ok(State::unpack(&u, t_new));
            }
        }
        Err(SolveError::NonConvergence { time: t_new, iterations, residual: report.final_residual })
    }

    /// Advances `state` by `tau`. A step whose Newton iteration fails is
    /// retried once as two half steps; the report includes the failed try.
    pub fn advance(&mut self, state: &State, tau: f64) -> Result<(State, StepReport), SolveError> {
        let mut report = StepReport::default();
        match self.newton(state, tau, &mut report) {
            Ok(next) => Ok((next, report)),
            Err(SolveError::NonConvergence { .. }) | Err(SolveError::LinearSolveFailure { .. }) => {
                report.retried = true;
                let mid = self.newton(state, 0.5 * tau, &mut report)?;
                let mut end = self.newton(&mid, 0.5 * tau, &mut report)?;
                end.t = state.t + tau;
                Ok((end, report))
            }
            Err(e) => Err(e),
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}

/// States at the report times `t_k = k T / 48`, `k = 0..=48`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: GridLevel,
    pub fields: ScenarioFields,
    pub constants: PhysicalConstants,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn state(&self, k: usize) -> &State {
        &self.states[k]
    }
}

/// Cost and solver diagnostics of one trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostRecord {
    pub wall_seconds: f64,
    pub steps: usize,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub work: f64,
    pub retries: usize,
    pub max_newton_per_step: usize,
}

/// Integrates `problem` over `[0, T]` and records the report states.
///
/// Report times generally fall between time steps; the state there is the
/// linear interpolation of the bracketing step states.
pub fn integrate(problem: HenryProblem, options: SolverOptions) -> Result<(Trajectory, CostRecord), SolveError> {
    integrate_with(problem, options, |_, _, _| {})
}

/// As [`integrate`], calling `on_step(old, new, report)` after every step.
pub fn integrate_with<F>(problem: HenryProblem, options: SolverOptions, mut on_step: F) -> Result<(Trajectory, CostRecord), SolveError>
where
    F: FnMut(&State, &State, &StepReport),
{
    let start = Instant::now();
    let grid = problem.grid;
    let mut solver = HenrySolver::new(problem, options);
    let mut cost = CostRecord { steps: grid.steps, ..Default::default() };
    let mut state = solver.initial_state()?;
    let mut states = Vec::with_capacity(REPORT_COUNT + 1);
    states.push(state.clone());
    let mut next_report = 1;
    for n in 1..=grid.steps {
        let (mut new, report) = solver.advance(&state, grid.tau)?;
        new.t = n as f64 * grid.tau;
        on_step(&state, &new, &report);
        cost.newton_iterations += report.newton_iterations;
        cost.linear_iterations += report.linear_iterations;
        cost.work += report.work;
        cost.retries += report.retried as usize;
        cost.max_newton_per_step = cost.max_newton_per_step.max(report.newton_iterations);
        // report k lies in (t_{n-1}, t_n] iff (n-1) * 48 < k * steps <= n * 48
        while next_report <= REPORT_COUNT && next_report * grid.steps <= n * REPORT_COUNT {
            let offset = (next_report * grid.steps) as f64 - ((n - 1) * REPORT_COUNT) as f64;
            let w = offset / REPORT_COUNT as f64;
            let mut s = if w == 1.0 { new.clone() } else { state.lerp(&new, w) };
            s.t = solver.problem().constants.report_time(next_report);
            states.push(s);
            next_report += 1;
        }
        state = new;
    }
    cost.wall_seconds = start.elapsed().as_secs_f64();
    let problem = solver.problem;
    Ok((Trajectory { grid, fields: problem.fields, constants: problem.constants, states }, cost))
}

/// Realizes the scenario of `xi` on `grid` and integrates it.
pub fn solve_trajectory(
    xi: &ParameterVector,
    grid: &GridLevel,
    constants: &PhysicalConstants,
    options: SolverOptions,
) -> Result<(Trajectory, CostRecord), SolveError> {
    let fields = ScenarioFields::realize(xi, grid)?;
    integrate(HenryProblem::new(*grid, fields, *constants), options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ScenarioFields;

    fn uniform_problem(level: usize, seaside: f64, recharge: f64) -> HenryProblem {
        let grid = GridLevel::new(level, 6016.0).unwrap();
        let fields = ScenarioFields::uniform(&grid, 0.35, recharge).unwrap();
        let mut p = HenryProblem::new(grid, fields, PhysicalConstants::default());
        p.seaside_concentration = seaside;
        p
    }

    #[test]
    fn hydrostatic_states_have_no_interior_flow() {
        for (c, rho) in [(0.0, 1000.0), (1.0, 1024.99)] {
            let problem = uniform_problem(0, c, 0.0);
            let g = problem.grid;
            let mut state = State { c: vec![c; g.cells()], p: vec![0.0; g.cells()], t: 0.0 };
            for (i, _, y) in g.centers() {
                state.p[i] = -rho * 9.8 * y;
            }
            let v = darcy_velocity(&problem, &state);
            assert!(v.max_abs_interior(&g) < 1e-15, "c = {c}: {}", v.max_abs_interior(&g));
        }
    }

    #[test]
    fn linear_pressure_gives_uniform_horizontal_flux() {
        // mu = 1, zero densities: q = -K dp/dx on every vertical face
        let grid = GridLevel::new(0, 6016.0).unwrap();
        let fields = ScenarioFields::uniform(&grid, 0.35, 0.0).unwrap();
        let k = fields.permeability[0];
        let constants = PhysicalConstants { viscosity: 1.0, rho_fresh: 0.0, rho_brine: 0.0, ..Default::default() };
        let problem = HenryProblem::new(grid, fields, constants);
        let slope = 3.5;
        let mut state = State { c: vec![0.0; grid.cells()], p: vec![0.0; grid.cells()], t: 0.0 };
        for (i, x, _) in grid.centers() {
            state.p[i] = slope * x;
        }
        let v = darcy_velocity(&problem, &state);
        for ix in 1..grid.nx {
            for iy in 0..grid.ny {
                let q = v.x_faces[ix * grid.ny + iy];
                assert!((q + k * slope).abs() < 1e-12 * k * slope);
            }
        }
        assert!(v.y_faces.iter().all(|q| q.abs() < 1e-20));
    }

    #[test]
    fn unforced_problem_stays_at_rest() {
        let problem = uniform_problem(0, 0.0, 0.0);
        let mut solver = HenrySolver::new(problem, SolverOptions::default());
        let mut state = solver.initial_state().unwrap();
        for _ in 0..5 {
            let (next, report) = solver.advance(&state, 32.0).unwrap();
            assert_eq!(report.newton_iterations, 0);
            state = next;
        }
        assert!(state.c.iter().all(|&c| c == 0.0));
        assert!(darcy_velocity(solver.problem(), &state).max_abs() < 1e-12);
    }

    #[test]
    fn direct_and_multigrid_steps_agree() {
        let grid = GridLevel::new(0, 6016.0).unwrap();
        let xi = ParameterVector::fixed([0.3, -0.2, 0.5]).unwrap();
        let fields = ScenarioFields::realize(&xi, &grid).unwrap();
        let problem = HenryProblem::new(grid, fields, PhysicalConstants::default());
        let mut a = HenrySolver::new(problem.clone(), SolverOptions { linear: LinearSolverKind::Direct, ..Default::default() });
        let mut b = HenrySolver::new(problem, SolverOptions::default());
        let mut sa = a.initial_state().unwrap();
        let mut sb = b.initial_state().unwrap();
        for _ in 0..10 {
            sa = a.advance(&sa, grid.tau).unwrap().0;
            sb = b.advance(&sb, grid.tau).unwrap().0;
        }
        for (x, y) in sa.c.iter().zip(&sb.c) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn step_conserves_salt() {
        let grid = GridLevel::new(0, 6016.0).unwrap();
        let fields = ScenarioFields::realize(&ParameterVector::nominal(), &grid).unwrap();
        let problem = HenryProblem::new(grid, fields, PhysicalConstants::default());
        let mut solver = HenrySolver::new(problem.clone(), SolverOptions::default());
        let mut state = solver.initial_state().unwrap();
        for _ in 0..20 {
            let (next, _) = solver.advance(&state, grid.tau).unwrap();
            let change = salt_mass(&problem, &next) - salt_mass(&problem, &state);
            let outflow = grid.tau * boundary_salt_outflow(&problem, &next);
            let scale = salt_mass(&problem, &next).max(outflow.abs());
            assert!((change + outflow).abs() <= 1e-8 * scale, "{change} vs {outflow}");
            state = next;
        }
    }
}
