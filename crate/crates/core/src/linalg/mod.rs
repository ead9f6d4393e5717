//! Sparse linear algebra for the coupled two-unknown-per-cell systems.
//!
//! Jacobians of the flow system live on a structured grid as 5-point stencils
//! of 2x2 blocks ([`BlockStencil`]). The solvers behind [`LinearSolver`] are a
//! banded LU factorization and BiCGStab preconditioned by an aggregation
//! multigrid V-cycle that keeps every coarse operator a 5-point block stencil.

mod banded;
mod krylov;
mod multigrid;

pub use banded::BandedLu;
pub use krylov::{BiCgStab, KrylovOptions};
pub use multigrid::Multigrid;

use thiserror::Error;

/// Row-major 2x2 block `[a00, a01, a10, a11]`.
pub type Block = [f64; 4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("singular pivot at row {0}")]
    Singular(usize),
    #[error("krylov solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("non-finite value encountered in linear solve")]
    NonFinite,
}

/// Work done by one linear solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearStats {
    pub iterations: usize,
    /// Multiply-add count estimate, used as a deterministic cost measure.
    pub work: f64,
}

/// Neighbor slots of the 5-point stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Center = 0,
    West = 1,
    East = 2,
    South = 3,
    North = 4,
}

/// Block 5-point stencil on an `nx x ny` grid, cell index `ix * ny + iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStencil {
    pub nx: usize,
    pub ny: usize,
    /// `blocks[i][slot]` couples the equations of cell `i` to the unknowns of
    /// the neighbor in `slot`.
    pub blocks: Vec<[Block; 5]>,
}

impl BlockStencil {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self { nx, ny, blocks: vec![[[0.0; 4]; 5]; nx * ny] }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn dim(&self) -> usize {
        2 * self.cells()
    }

    #[inline]
    pub fn add(&mut self, cell: usize, slot: Slot, block: Block) {
        let b = &mut self.blocks[cell][slot as usize];
        for k in 0..4 {
            b[k] += block[k];
        }
    }

    pub fn clear(&mut self) {
        for b in &mut self.blocks {
            *b = [[0.0; 4]; 5];
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let col = 2 * ny;
        for ix in 0..nx {
            let base = ix * ny;
            let blocks = &self.blocks[base..base + ny];
            let xc = &x[ix * col..(ix + 1) * col];
            let xw = (ix > 0).then(|| &x[(ix - 1) * col..ix * col]);
            let xe = (ix + 1 < nx).then(|| &x[(ix + 1) * col..(ix + 2) * col]);
            let yc = &mut y[ix * col..(ix + 1) * col];
            for iy in 0..ny {
                let b = &blocks[iy];
                let mut acc = mul(&b[0], xc, iy);
                if let Some(xw) = xw {
                    acc = add2(acc, mul(&b[1], xw, iy));
                }
                if let Some(xe) = xe {
                    acc = add2(acc, mul(&b[2], xe, iy));
                }
                if iy > 0 {
                    acc = add2(acc, mul(&b[3], xc, iy - 1));
                }
                if iy + 1 < ny {
                    acc = add2(acc, mul(&b[4], xc, iy + 1));
                }
                yc[2 * iy] = acc[0];
                yc[2 * iy + 1] = acc[1];
            }
        }
    }

    /// `r = b - A x`.
    pub fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        self.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    }

    /// Nonzero count, counting full 2x2 blocks for every existing neighbor.
    pub fn nnz(&self) -> usize {
        let (nx, ny) = (self.nx, self.ny);
        let links = nx * ny + 2 * (nx - 1) * ny + 2 * nx * (ny - 1);
        4 * links
    }

    /// Half bandwidth of the interleaved unknown ordering.
    pub fn bandwidth(&self) -> usize {
        2 * self.ny + 1
    }

    /// Dense entry `(row, col)`; for tests and the banded factorization.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let (ci, ei) = (row / 2, row % 2);
        let (cj, ej) = (col / 2, col % 2);
        let slot = if ci == cj {
            Slot::Center
        } else if cj + self.ny == ci {
            Slot::West
        } else if ci + self.ny == cj {
            Slot::East
        } else if cj + 1 == ci && ci % self.ny != 0 {
            Slot::South
        } else if ci + 1 == cj && cj % self.ny != 0 {
            Slot::North
        } else {
            return 0.0;
        };
        self.blocks[ci][slot as usize][2 * ei + ej]
    }
}

#[inline]
fn mul(b: &Block, x: &[f64], j: usize) -> [f64; 2] {
    let (u, v) = (x[2 * j], x[2 * j + 1]);
    [b[0] * u + b[1] * v, b[2] * u + b[3] * v]
}

#[inline]
fn add2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub(crate) fn invert_block(b: &Block) -> Option<Block> {
    let det = b[0] * b[3] - b[1] * b[2];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let inv = 1.0 / det;
    Some([b[3] * inv, -b[1] * inv, -b[2] * inv, b[0] * inv])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A solver for `A x = b` with a block stencil matrix.
pub trait LinearSolver {
    /// Solves in place; `x` holds the initial guess on entry.
    fn solve(&mut self, a: &BlockStencil, b: &[f64], x: &mut [f64]) -> Result<LinearStats, LinearSolveError>;
}

/// Which linear solver the Newton iteration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolverKind {
    /// Banded LU with partial pivoting.
    Direct,
    /// BiCGStab with a multigrid V-cycle, falling back to banded LU when the
    /// iteration stalls.
    Multigrid,
}

/// Multigrid-preconditioned BiCGStab with a direct fallback. The multigrid
/// hierarchy and Krylov vectors are reused across solves of equal size.
#[derive(Debug, Clone, Default)]
pub struct MultigridSolver {
    krylov: BiCgStab,
    mg: Option<Multigrid>,
    x0: Vec<f64>,
}

impl MultigridSolver {
    pub fn new(options: KrylovOptions) -> Self {
        Self { krylov: BiCgStab::new(options), mg: None, x0: Vec::new() }
    }

    pub fn options(&self) -> KrylovOptions {
        self.krylov.options
    }

    pub fn set_options(&mut self, options: KrylovOptions) {
        self.krylov.options = options;
    }
}

impl LinearSolver for MultigridSolver {
    fn solve(&mut self, a: &BlockStencil, b: &[f64], x: &mut [f64]) -> Result<LinearStats, LinearSolveError> {
        self.x0.clear();
        self.x0.extend_from_slice(x);
        let mg = match &mut self.mg {
            Some(mg) => {
                mg.rebuild(a)?;
                mg
            }
            slot => slot.insert(Multigrid::build(a)?),
        };
        let setup = mg.setup_work();
        match self.krylov.solve(a, mg, b, x) {
            Ok(mut stats) => {
                stats.work += setup;
                Ok(stats)
            }
            Err(LinearSolveError::NotConverged { .. }) | Err(LinearSolveError::NonFinite) => {
                x.copy_from_slice(&self.x0);
                let mut stats = DirectSolver.solve(a, b, x)?;
                stats.work += setup;
                Ok(stats)
            }
            Err(e) => Err(e),
        }
    }
}

/// Banded LU factorization of the full system.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectSolver;

impl LinearSolver for DirectSolver {
    fn solve(&mut self, a: &BlockStencil, b: &[f64], x: &mut [f64]) -> Result<LinearStats, LinearSolveError> {
        let lu = BandedLu::factor(a)?;
        x.copy_from_slice(b);
        lu.solve_in_place(x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        Ok(LinearStats { iterations: 1, work: lu.work() })
    }
}
