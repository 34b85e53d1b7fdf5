//! Least-squares machinery behind the uncertainty estimators: a linear
//! solver for polynomial fits and a small box-constrained
//! Levenberg-Marquardt loop for the nonlinear forms, driven from multiple
//! starting points by the caller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solve `min ||X beta - y||` via SVD.
pub(crate) fn linear_least_squares(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    let svd = design.clone().svd(true, true);
    let eps = svd.singular_values.max() * 1e-13;
    let beta = svd
        .solve(y, eps)
        .map_err(|e| Error::DegeneratePoints(format!("singular design matrix: {e}")))?;
    Ok(beta.iter().copied().collect())
}

/// A residual model for [`levenberg_marquardt`]: fills residuals `r_i` and
/// the Jacobian `J[i][k] = d r_i / d p_k` at the given parameters.
pub(crate) trait ResidualModel {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn eval(&self, params: &[f64], residuals: &mut [f64], jacobian: &mut DMatrix<f64>);
    /// Clamp parameters into their feasible box.
    fn project(&self, params: &mut [f64]);
}

pub(crate) struct LmOutcome {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_ITERATIONS: usize = 200;
const COST_TOLERANCE: f64 = 1e-10;

/// Damped Gauss-Newton with box projection. Converges when the residual
/// sum of squares changes by less than `COST_TOLERANCE` (relative).
pub(crate) fn levenberg_marquardt(model: &impl ResidualModel, start: &[f64]) -> LmOutcome {
    let n = model.len();
    let p = model.dim();
    let mut params = start.to_vec();
    model.project(&mut params);

    let mut residuals = vec![0.0; n];
    let mut jacobian = DMatrix::zeros(n, p);
    model.eval(&params, &mut residuals, &mut jacobian);
    let mut cost: f64 = residuals.iter().map(|r| r * r).sum();
    if !cost.is_finite() {
        return LmOutcome {
            params,
            cost: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }

    let mut lambda = 1e-3;
    let mut trial = vec![0.0; p];
    let mut trial_residuals = vec![0.0; n];
    let mut trial_jacobian = DMatrix::zeros(n, p);

    for iteration in 1..=MAX_ITERATIONS {
        let jt = jacobian.transpose();
        let jtj = &jt * &jacobian;
        let r = DVector::from_column_slice(&residuals);
        let gradient = &jt * &r;

        let mut improved = false;
        // Try increasingly damped steps until one reduces the cost.
        for _ in 0..24 {
            let mut lhs = jtj.clone();
            for k in 0..p {
                lhs[(k, k)] += lambda * (jtj[(k, k)].abs().max(1e-12));
            }
            let step = match lhs.clone().cholesky() {
                Some(chol) => chol.solve(&gradient),
                None => match lhs.lu().solve(&gradient) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            for k in 0..p {
                trial[k] = params[k] - step[k];
            }
            model.project(&mut trial);
            model.eval(&trial, &mut trial_residuals, &mut trial_jacobian);
            let trial_cost: f64 = trial_residuals.iter().map(|r| r * r).sum();
            if trial_cost.is_finite() && trial_cost < cost {
                let relative_drop = (cost - trial_cost) / cost.max(1e-300);
                params.copy_from_slice(&trial);
                residuals.copy_from_slice(&trial_residuals);
                jacobian.copy_from(&trial_jacobian);
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if relative_drop < COST_TOLERANCE {
                    return LmOutcome {
                        params,
                        cost,
                        iterations: iteration,
                        converged: true,
                    };
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No damped step reduces the cost: local minimum reached.
            return LmOutcome {
                params,
                cost,
                iterations: iteration,
                converged: true,
            };
        }
    }

    LmOutcome {
        params,
        cost,
        iterations: MAX_ITERATIONS,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Exponential<'a> {
        x: &'a [f64],
        y: &'a [f64],
    }

    impl ResidualModel for Exponential<'_> {
        fn dim(&self) -> usize {
            2
        }
        fn len(&self) -> usize {
            self.x.len()
        }
        fn eval(&self, params: &[f64], residuals: &mut [f64], jacobian: &mut DMatrix<f64>) {
            let (a, k) = (params[0], params[1]);
            for (i, (&x, &y)) in self.x.iter().zip(self.y).enumerate() {
                let e = (k * x).exp();
                residuals[i] = a * e - y;
                jacobian[(i, 0)] = e;
                jacobian[(i, 1)] = a * x * e;
            }
        }
        fn project(&self, _params: &mut [f64]) {}
    }

    #[test]
    fn recovers_exponential_parameters() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| 2.5 * (0.7 * x).exp()).collect();
        let model = Exponential { x: &x, y: &y };
        let out = levenberg_marquardt(&model, &[1.0, 0.1]);
        assert!(out.converged);
        assert_relative_eq!(out.params[0], 2.5, epsilon = 1e-8);
        assert_relative_eq!(out.params[1], 0.7, epsilon = 1e-8);
    }

    #[test]
    fn linear_solver_recovers_quadratic() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let design = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(j as i32));
        let y = DVector::from_iterator(xs.len(), xs.iter().map(|&x| 0.1 + 0.2 * x + 0.3 * x * x));
        let beta = linear_least_squares(&design, &y).unwrap();
        assert_relative_eq!(beta[0], 0.1, epsilon = 1e-12);
        assert_relative_eq!(beta[1], 0.2, epsilon = 1e-12);
        assert_relative_eq!(beta[2], 0.3, epsilon = 1e-12);
    }
}
