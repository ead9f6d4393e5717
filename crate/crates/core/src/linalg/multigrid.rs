use super::{invert_block, Block, BlockStencil, LinearSolveError, Slot};
use super::banded::BandedLu;

/// Coarsest grids are solved directly once they have at most this many cells.
const COARSEST_CELLS: usize = 64;

/// Scaling of the prolongated coarse correction. Piecewise-constant
/// aggregation makes the Galerkin operator about twice too stiff on a
/// cell-centered grid, so the raw correction is too short.
const COARSE_WEIGHT: f64 = 2.0;

/// Aggregation multigrid on the structured grid.
///
/// Each coarse cell aggregates 2x2 fine cells; with piecewise-constant
/// prolongation and summing restriction the Galerkin operator of a 5-point
/// block stencil is again a 5-point block stencil. Smoothing is point-block
/// Gauss-Seidel, forward before and backward after the coarse correction.
///
/// The fine operator is not stored; it is passed to [`Multigrid::apply`] and
/// must be the matrix the hierarchy was last built from.
#[derive(Debug, Clone)]
pub struct Multigrid {
    fine: (usize, usize),
    /// Galerkin operators of levels `1..`; the last one is factored.
    coarse: Vec<BlockStencil>,
    /// Inverted diagonal blocks of every smoothed level.
    diag_inv: Vec<Vec<Block>>,
    coarsest: Option<BandedLu>,
    rhs: Vec<Vec<f64>>,
    sol: Vec<Vec<f64>>,
    res: Vec<Vec<f64>>,
}

impl Multigrid {
    pub fn build(a: &BlockStencil) -> Result<Self, LinearSolveError> {
        let mut shapes = vec![(a.nx, a.ny)];
        loop {
            let (nx, ny) = *shapes.last().unwrap();
            if nx * ny <= COARSEST_CELLS || nx % 2 != 0 || ny % 2 != 0 || ny < 4 {
                break;
            }
            shapes.push((nx / 2, ny / 2));
        }
        let smoothed = shapes.len() - 1;
        let dim = |&(nx, ny): &(usize, usize)| 2 * nx * ny;
        let mut mg = Self {
            fine: (a.nx, a.ny),
            coarse: shapes[1..].iter().map(|&(nx, ny)| BlockStencil::zeros(nx, ny)).collect(),
            diag_inv: shapes[..smoothed].iter().map(|&(nx, ny)| vec![[0.0; 4]; nx * ny]).collect(),
            coarsest: None,
            rhs: shapes.iter().map(|s| vec![0.0; dim(s)]).collect(),
            sol: shapes.iter().map(|s| vec![0.0; dim(s)]).collect(),
            res: shapes.iter().map(|s| vec![0.0; dim(s)]).collect(),
        };
        mg.rebuild(a)?;
        Ok(mg)
    }

    /// Recomputes the hierarchy for a new matrix of the same shape.
    pub fn rebuild(&mut self, a: &BlockStencil) -> Result<(), LinearSolveError> {
        if (a.nx, a.ny) != self.fine {
            *self = Self::build(a)?;
            return Ok(());
        }
        for d in 0..self.diag_inv.len() {
            let (done, rest) = self.coarse.split_at_mut(d);
            let op = if d == 0 { a } else { &done[d - 1] };
            diagonal_inverses(op, &mut self.diag_inv[d])?;
            galerkin_coarsen(op, &mut rest[0]);
        }
        self.coarsest = Some(BandedLu::factor(self.coarse.last().unwrap_or(a))?);
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.coarse.len() + 1
    }

    /// Multiply-add estimate of building the hierarchy.
    pub fn setup_work(&self) -> f64 {
        let (nx, ny) = self.fine;
        let fine = 4.0 * 5.0 * (nx * ny) as f64;
        fine + self.coarse.iter().map(|c| c.nnz() as f64).sum::<f64>() + self.coarsest_lu().work()
    }

    /// Multiply-add estimate of one V-cycle.
    pub fn cycle_work(&self) -> f64 {
        let (nx, ny) = self.fine;
        // two sweeps and one residual per smoothed level
        let fine = 3.0 * 4.0 * 5.0 * (nx * ny) as f64;
        let smoothed = self.coarse.iter().take(self.diag_inv.len().saturating_sub(1));
        fine + smoothed.map(|c| 3.0 * c.nnz() as f64).sum::<f64>() + self.coarsest_lu().solve_work()
    }

    fn coarsest_lu(&self) -> &BandedLu {
        self.coarsest.as_ref().expect("hierarchy is built on construction")
    }

    /// One V-cycle applied to `b` with zero initial guess.
    pub fn apply(&mut self, a: &BlockStencil, b: &[f64], x: &mut [f64]) {
        let smoothed = self.diag_inv.len();
        if smoothed == 0 {
            x.copy_from_slice(b);
            self.coarsest_lu().solve_in_place(x);
            return;
        }
        x.iter_mut().for_each(|v| *v = 0.0);
        for d in 0..smoothed {
            let op = if d == 0 { a } else { &self.coarse[d - 1] };
            let (rhs_lo, rhs_hi) = self.rhs.split_at_mut(d + 1);
            let (b_d, x_d): (&[f64], &mut [f64]) = if d == 0 { (b, &mut *x) } else { (&rhs_lo[d], &mut self.sol[d]) };
            if d > 0 {
                x_d.iter_mut().for_each(|v| *v = 0.0);
            }
            gauss_seidel(op, &self.diag_inv[d], b_d, x_d, false);
            op.residual(b_d, x_d, &mut self.res[d]);
            restrict(&self.res[d], op.ny, op.nx / 2, op.ny / 2, &mut rhs_hi[0]);
        }
        let bottom = &mut self.sol[smoothed];
        bottom.copy_from_slice(&self.rhs[smoothed]);
        self.coarsest.as_ref().expect("hierarchy is built on construction").solve_in_place(bottom);
        for d in (0..smoothed).rev() {
            let op = if d == 0 { a } else { &self.coarse[d - 1] };
            let (sol_lo, sol_hi) = self.sol.split_at_mut(d + 1);
            let x_d: &mut [f64] = if d == 0 { &mut *x } else { &mut sol_lo[d] };
            let b_d: &[f64] = if d == 0 { b } else { &self.rhs[d] };
            prolong_add(&sol_hi[0], COARSE_WEIGHT, op.ny, op.nx / 2, op.ny / 2, x_d);
            gauss_seidel(op, &self.diag_inv[d], b_d, x_d, true);
        }
    }
}

fn diagonal_inverses(a: &BlockStencil, out: &mut [Block]) -> Result<(), LinearSolveError> {
    for (i, (b, o)) in a.blocks.iter().zip(out.iter_mut()).enumerate() {
        *o = invert_block(&b[Slot::Center as usize]).ok_or(LinearSolveError::Singular(2 * i))?;
    }
    Ok(())
}

fn galerkin_coarsen(a: &BlockStencil, c: &mut BlockStencil) {
    let (nx, ny) = (a.nx, a.ny);
    let cny = ny / 2;
    c.clear();
    for ix in 0..nx {
        for iy in 0..ny {
            let i = ix * ny + iy;
            let ci = (ix / 2) * cny + iy / 2;
            let b = &a.blocks[i];
            c.add(ci, Slot::Center, b[Slot::Center as usize]);
            if ix > 0 {
                let slot = if ix % 2 == 0 { Slot::West } else { Slot::Center };
                c.add(ci, slot, b[Slot::West as usize]);
            }
            if ix + 1 < nx {
                let slot = if ix % 2 == 1 { Slot::East } else { Slot::Center };
                c.add(ci, slot, b[Slot::East as usize]);
            }
            if iy > 0 {
                let slot = if iy % 2 == 0 { Slot::South } else { Slot::Center };
                c.add(ci, slot, b[Slot::South as usize]);
            }
            if iy + 1 < ny {
                let slot = if iy % 2 == 1 { Slot::North } else { Slot::Center };
                c.add(ci, slot, b[Slot::North as usize]);
            }
        }
    }
}

fn restrict(r: &[f64], ny: usize, cnx: usize, cny: usize, rc: &mut [f64]) {
    rc.iter_mut().for_each(|v| *v = 0.0);
    for cx in 0..cnx {
        for cy in 0..cny {
            let ci = cx * cny + cy;
            for dx in 0..2 {
                for dy in 0..2 {
                    let i = (2 * cx + dx) * ny + 2 * cy + dy;
                    rc[2 * ci] += r[2 * i];
                    rc[2 * ci + 1] += r[2 * i + 1];
                }
            }
        }
    }
}

fn prolong_add(xc: &[f64], weight: f64, ny: usize, cnx: usize, cny: usize, x: &mut [f64]) {
    for cx in 0..cnx {
        for cy in 0..cny {
            let ci = cx * cny + cy;
            let (u, v) = (weight * xc[2 * ci], weight * xc[2 * ci + 1]);
            for dx in 0..2 {
                for dy in 0..2 {
                    let i = (2 * cx + dx) * ny + 2 * cy + dy;
                    x[2 * i] += u;
                    x[2 * i + 1] += v;
                }
            }
        }
    }
}

/// One point-block Gauss-Seidel sweep in lexicographic (or reversed) order.
fn gauss_seidel(a: &BlockStencil, diag_inv: &[Block], b: &[f64], x: &mut [f64], reverse: bool) {
    let (nx, ny) = (a.nx, a.ny);
    let mut visit = |ix: usize, iy: usize| {
        let i = ix * ny + iy;
        let blk = &a.blocks[i];
        let mut r0 = b[2 * i];
        let mut r1 = b[2 * i + 1];
        let mut sub = |m: &Block, j: usize| {
            let (u, v) = (x[2 * j], x[2 * j + 1]);
            r0 -= m[0] * u + m[1] * v;
            r1 -= m[2] * u + m[3] * v;
        };
        if ix > 0 {
            sub(&blk[1], i - ny);
        }
        if ix + 1 < nx {
            sub(&blk[2], i + ny);
        }
        if iy > 0 {
            sub(&blk[3], i - 1);
        }
        if iy + 1 < ny {
            sub(&blk[4], i + 1);
        }
        let d = &diag_inv[i];
        x[2 * i] = d[0] * r0 + d[1] * r1;
        x[2 * i + 1] = d[2] * r0 + d[3] * r1;
    };
    if reverse {
        for ix in (0..nx).rev() {
            for iy in (0..ny).rev() {
                visit(ix, iy);
            }
        }
    } else {
        for ix in 0..nx {
            for iy in 0..ny {
                visit(ix, iy);
            }
        }
    }
}
