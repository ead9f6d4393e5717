use super::{dot, norm2, BlockStencil, LinearSolveError, LinearStats, Multigrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    /// Stop once `|b - A x| <= rel_tol * |b - A x0|`.
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-9, max_iterations: 200 }
    }
}

/// Right-preconditioned BiCGStab. Work vectors are kept between solves.
#[derive(Debug, Clone, Default)]
pub struct BiCgStab {
    pub options: KrylovOptions,
    work: Vec<Vec<f64>>,
}

impl BiCgStab {
    pub fn new(options: KrylovOptions) -> Self {
        Self { options, work: Vec::new() }
    }

    pub fn solve(&mut self, a: &BlockStencil, m: &mut Multigrid, b: &[f64], x: &mut [f64]) -> Result<LinearStats, LinearSolveError> {
        let n = b.len();
        if self.work.first().is_none_or(|w| w.len() != n) {
            self.work = vec![vec![0.0; n]; 8];
        }
        let [r, r_hat, p, v, p_hat, s, s_hat, t] = &mut self.work[..] else { unreachable!() };
        a.residual(b, x, r);
        let r0_norm = norm2(r);
        let per_iter = 2.0 * a.nnz() as f64 + 2.0 * m.cycle_work() + 12.0 * n as f64;
        let mut stats = LinearStats { iterations: 0, work: a.nnz() as f64 };
        if r0_norm == 0.0 {
            return Ok(stats);
        }
        if !r0_norm.is_finite() {
            return Err(LinearSolveError::NonFinite);
        }
        let target = self.options.rel_tol * r0_norm;
        r_hat.copy_from_slice(r);
        p.iter_mut().chain(v.iter_mut()).for_each(|e| *e = 0.0);
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut res = r0_norm;

        while stats.iterations < self.options.max_iterations {
            stats.iterations += 1;
            stats.work += per_iter;
            let rho_new = dot(r_hat, r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for k in 0..n {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
            }
            m.apply(a, p, p_hat);
            a.apply(p_hat, v);
            let denom = dot(r_hat, v);
            if denom == 0.0 {
                break;
            }
            alpha = rho / denom;
            for k in 0..n {
                s[k] = r[k] - alpha * v[k];
            }
            let s_norm = norm2(s);
            if s_norm <= target {
                for k in 0..n {
                    x[k] += alpha * p_hat[k];
                }
                return Ok(stats);
            }
            m.apply(a, s, s_hat);
            a.apply(s_hat, t);
            let tt = dot(t, t);
            omega = if tt > 0.0 { dot(t, s) / tt } else { 0.0 };
            for k in 0..n {
                x[k] += alpha * p_hat[k] + omega * s_hat[k];
                r[k] = s[k] - omega * t[k];
            }
            res = norm2(r);
            if !res.is_finite() {
                return Err(LinearSolveError::NonFinite);
            }
            if res <= target {
                return Ok(stats);
            }
        }
        Err(LinearSolveError::NotConverged { iterations: stats.iterations, residual: res / r0_norm })
    }
}
