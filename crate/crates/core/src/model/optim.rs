use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Converged when the largest gradient component is below this.
    pub grad_tol: f64,
    /// A stalled line search is accepted as converged below this gradient.
    pub stall_grad_tol: f64,
    /// Longest step (Euclidean norm) tried per iteration.
    pub max_step: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, stall_grad_tol: 1e-3, max_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Quasi-Newton minimization with an inverse-Hessian BFGS update and
/// backtracking Armijo line search. `objective` returns value and gradient;
/// errors and non-finite values during the line search shorten the step.
pub fn minimize_bfgs<F>(mut objective: F, x0: &[f64], config: &BfgsConfig) -> Result<BfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g0) = objective(x.as_slice())?;
    if !f.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the starting point"));
    }
    let mut g = DVector::from_vec(g0);
    let mut evaluations = 1;
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for iteration in 0..config.max_iter {
        if g.amax() <= config.grad_tol {
            return Ok(outcome(x, f, g, iteration, evaluations, true));
        }
        let mut dir = -(&h_inv * &g);
        if g.dot(&dir) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let norm = dir.norm();
        if norm > config.max_step {
            dir *= config.max_step / norm;
        }
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial = &x + &dir * t;
            evaluations += 1;
            if let Ok((ft, gt)) = objective(trial.as_slice()) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + 1e-4 * t * slope {
                    next = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = next else {
            let converged = g.amax() <= config.stall_grad_tol;
            return Ok(outcome(x, f, g, iteration, evaluations, converged));
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iteration == 0 {
                // scale the initial inverse Hessian to the observed curvature
                h_inv = DMatrix::identity(n, n) * (sy / y.norm_squared());
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let rel_change = (f - f_new).abs() / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        if rel_change < 1e-15 && g.amax() <= config.stall_grad_tol {
            return Ok(outcome(x, f, g, iteration + 1, evaluations, true));
        }
    }
    let converged = g.amax() <= config.grad_tol;
    Ok(outcome(x, f, g, config.max_iter, evaluations, converged))
}

fn outcome(x: DVector<f64>, value: f64, grad: DVector<f64>, iterations: usize, evaluations: usize, converged: bool) -> BfgsOutcome {
    BfgsOutcome { x: x.as_slice().to_vec(), value, grad: grad.as_slice().to_vec(), iterations, evaluations, converged }
}
