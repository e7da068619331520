//! Dense Levenberg-Marquardt for small nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop once `|Δcost| / cost` of an accepted step drops below this.
    pub relative_cost_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_cost_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Half the sum of squared residuals at the starting point.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A residual vector as a function of a parameter vector.
pub trait LeastSquaresProblem {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    /// Defaults to central differences.
    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64> {
        numeric_jacobian(|p| self.residuals(p), params)
    }
}

pub fn numeric_jacobian<F>(f: F, params: &DVector<f64>) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(params).len();
    let n = params.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut p = params.clone();
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        let plus = f(&p);
        p[j] = params[j] - h;
        let minus = f(&p);
        p[j] = params[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    jac
}

fn cost(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes `½‖r(p)‖²`. Only steps that lower the cost are accepted, so the
/// returned cost never exceeds the initial one.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: DVector<f64>,
    options: &LmOptions,
) -> LmReport {
    let mut params = initial;
    let mut residuals = problem.residuals(&params);
    let initial_cost = cost(&residuals);
    let mut current = initial_cost;
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    if !current.is_finite() {
        return LmReport {
            params,
            initial_cost,
            final_cost: current,
            iterations,
            converged,
        };
    }

    while iterations < options.max_iterations {
        iterations += 1;
        if current == 0.0 {
            converged = true;
            break;
        }
        let jac = problem.jacobian(&params);
        let jtj = jac.transpose() * &jac;
        let gradient = jac.transpose() * &residuals;
        if gradient.amax() == 0.0 {
            converged = true;
            break;
        }

        let mut accepted = false;
        // increase damping until a step reduces the cost
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&gradient))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &params + &step;
            let candidate_residuals = problem.residuals(&candidate);
            let candidate_cost = cost(&candidate_residuals);
            if candidate_cost.is_finite() && candidate_cost < current {
                let relative_change = (current - candidate_cost) / current;
                params = candidate;
                residuals = candidate_residuals;
                current = candidate_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if relative_change < options.relative_cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    LmReport {
        params,
        initial_cost,
        final_cost: current,
        iterations,
        converged,
    }
}
