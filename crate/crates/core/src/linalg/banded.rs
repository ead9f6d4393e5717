use super::{BlockStencil, LinearSolveError};

/// LU factorization with partial pivoting of a banded matrix.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl`
/// super-diagonals absorb fill from row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &BlockStencil) -> Result<Self, LinearSolveError> {
        let n = a.dim();
        let kl = a.bandwidth().min(n.saturating_sub(1));
        let ku = kl;
        let width = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, ku, width, data: vec![0.0; n * width], pivots: vec![0; n] };
        for row in 0..n {
            let lo = row.saturating_sub(kl);
            let hi = (row + ku).min(n - 1);
            for col in lo..=hi {
                let v = a.entry(row, col);
                if v != 0.0 {
                    *lu.at_mut(row, col) = v;
                }
            }
        }
        lu.decompose()?;
        Ok(lu)
    }

    #[inline]
    fn pos(&self, row: usize, col: usize) -> usize {
        row * self.width + (col + self.kl - row)
    }

    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.data[self.pos(row, col)]
    }

    #[inline]
    fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        let p = self.pos(row, col);
        &mut self.data[p]
    }

    fn decompose(&mut self) -> Result<(), LinearSolveError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(LinearSolveError::Singular(k));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.pos(k, j), self.pos(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for i in k + 1..=last_row {
                let l = self.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at_mut(i, k) = l;
                let (rk, ri) = (k * self.width, i * self.width);
                for j in k + 1..=last_col {
                    let v = self.data[rk + (j + kl - k)];
                    self.data[ri + (j + kl - i)] -= l * v;
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.at(i, k) * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.at(k, j) * x[j];
            }
            x[k] = s / self.at(k, k);
        }
    }

    /// Multiply-add estimate of factorization plus one solve.
    pub fn work(&self) -> f64 {
        let n = self.n as f64;
        let (kl, ku) = (self.kl as f64, self.ku as f64);
        n * kl * (kl + ku) + self.solve_work()
    }

    /// Multiply-add estimate of one forward and back substitution.
    pub fn solve_work(&self) -> f64 {
        2.0 * self.n as f64 * (2 * self.kl + self.ku) as f64
    }
}
