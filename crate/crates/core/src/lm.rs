//! Damped Gauss-Newton (Levenberg-Marquardt) on normal equations.

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    /// Sum of squared residuals; `f64::INFINITY` outside the domain.
    fn cost(&self, x: &DVector<f64>) -> f64;

    /// `(cost, J^T J, J^T r)` at `x`.
    fn normal_equations(&self, x: &DVector<f64>) -> (f64, DMatrix<f64>, DVector<f64>);

    /// Map an iterate back onto the feasible set.
    fn project(&self, _x: &mut DVector<f64>) {}
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step is below `xtol * (|x| + xtol)`.
    pub xtol: f64,
    /// Stop once an undamped-ish accepted step lowers the cost by at most
    /// `ftol * cost`.
    pub ftol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            ftol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub trace: Vec<f64>,
    /// `J^T J` at the returned point.
    pub jtj: DMatrix<f64>,
}

pub(crate) fn minimize(problem: &impl LeastSquares, x0: DVector<f64>, cfg: LmConfig) -> LmOutcome {
    let mut x = x0;
    problem.project(&mut x);
    let (mut cost, mut jtj, mut jtr) = problem.normal_equations(&x);
    let mut trace = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let n = x.len();
        let max_diag = (0..n).map(|k| jtj[(k, k)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12 * max_diag);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let mut candidate = &x + &step;
            problem.project(&mut candidate);
            let new_cost = problem.cost(&candidate);
            if new_cost.is_finite() && new_cost <= cost {
                let moved = (&candidate - &x).norm();
                let small = moved <= cfg.xtol * (x.norm() + cfg.xtol);
                let flat = cost - new_cost <= cfg.ftol * cost && lambda <= 1.0;
                x = candidate;
                (cost, jtj, jtr) = problem.normal_equations(&x);
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                converged = small || flat || cost == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at any damping: a (possibly
            // constrained) minimum within machine precision
            converged = true;
        }
    }
    LmOutcome {
        x,
        cost,
        iterations,
        converged,
        trace,
        jtj,
    }
}

/// Adapter for small problems given as explicit residuals and Jacobian.
pub(crate) struct Residuals<F, P = fn(&mut DVector<f64>)> {
    pub eval: F,
    pub project: Option<P>,
}

impl<F, P> LeastSquares for Residuals<F, P>
where
    F: Fn(&DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>,
    P: Fn(&mut DVector<f64>),
{
    fn cost(&self, x: &DVector<f64>) -> f64 {
        match (self.eval)(x) {
            Some((r, _)) => r.norm_squared(),
            None => f64::INFINITY,
        }
    }

    fn normal_equations(&self, x: &DVector<f64>) -> (f64, DMatrix<f64>, DVector<f64>) {
        match (self.eval)(x) {
            Some((r, j)) => (r.norm_squared(), j.transpose() * &j, j.transpose() * r),
            None => {
                let n = x.len();
                (f64::INFINITY, DMatrix::zeros(n, n), DVector::zeros(n))
            }
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        if let Some(p) = &self.project {
            p(x)
        }
    }
}

/// Reciprocal condition number of a symmetric positive semidefinite matrix.
pub(crate) fn rcond(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        0.0
    } else {
        (min / max).max(0.0)
    }
}
