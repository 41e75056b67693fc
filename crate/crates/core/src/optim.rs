//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Deterministic: no randomness, and the same inputs give bit-identical
//! iterates.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    /// Stop once an iteration improves the objective by less than this
    /// fraction of its magnitude.
    pub rel_f_tol: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            memory: 10,
            grad_tol: 1e-8,
            rel_f_tol: 1e-15,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective`, which returns the value and writes the gradient
/// into its second argument.
pub fn minimize<F>(mut objective: F, x0: &[f64], options: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut evaluations = 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::OptimizationDiverged);
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.memory);
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; options.memory];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iter {
        let gnorm = libm::sqrt(dot(&g, &g));
        if gnorm <= options.grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion.
        dir.copy_from_slice(&g);
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[i] = a;
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * yv;
            }
        }
        let gamma = history
            .back()
            .map(|(s, y, _)| dot(s, y) / dot(y, y))
            .unwrap_or(1.0 / gnorm.max(1.0));
        for d in dir.iter_mut() {
            *d *= gamma;
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[i] - b) * sv;
            }
        }
        for d in dir.iter_mut() {
            *d = -*d;
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // Not a descent direction; restart from steepest descent.
            history.clear();
            for (d, gv) in dir.iter_mut().zip(&g) {
                *d = -gv / gnorm.max(1.0);
            }
            slope = dot(&g, &dir);
        }

        let step = line_search(
            &mut objective,
            &x,
            f,
            slope,
            &dir,
            &mut x_new,
            &mut g_new,
            options.max_line_search,
            &mut evaluations,
        );
        let Some(f_new) = step else {
            if history.is_empty() {
                break;
            }
            history.clear();
            iterations += 1;
            continue;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if history.len() == options.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let improvement = f - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        if improvement <= options.rel_f_tol * libm::fabs(f).max(1e-300) {
            converged = libm::sqrt(dot(&g, &g)) <= options.grad_tol;
            break;
        }
    }

    Ok(LbfgsResult {
        grad_norm: libm::sqrt(dot(&g, &g)),
        x,
        f,
        iterations,
        evaluations,
        converged,
    })
}

/// Strong-Wolfe line search (bracketing then zoom). Returns the accepted
/// objective value with the point and gradient written to `x_out`/`g_out`.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    x_out: &mut [f64],
    g_out: &mut [f64],
    max_evals: usize,
    evaluations: &mut usize,
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;

    let mut eval = |t: f64, x_out: &mut [f64], g_out: &mut [f64]| -> (f64, f64) {
        for ((xo, xi), d) in x_out.iter_mut().zip(x).zip(dir) {
            *xo = xi + t * d;
        }
        *evaluations += 1;
        let f = objective(x_out, g_out);
        if !f.is_finite() || g_out.iter().any(|v| !v.is_finite()) {
            return (f64::INFINITY, f64::NAN);
        }
        (f, dot(g_out, dir))
    };

    let mut t_lo = 0.0;
    let mut f_lo = f0;
    let mut d_lo = slope0;
    let mut t_hi;
    let mut f_hi;
    let mut t = 1.0;
    let mut evals = 0;

    // Bracketing phase.
    loop {
        if evals >= max_evals {
            return None;
        }
        evals += 1;
        let (ft, dt) = eval(t, x_out, g_out);
        if !ft.is_finite() || ft > f0 + C1 * t * slope0 || (evals > 1 && ft >= f_lo) {
            t_hi = t;
            f_hi = ft;
            break;
        }
        if dt.abs() <= -C2 * slope0 {
            return Some(ft);
        }
        if dt >= 0.0 {
            t_hi = t_lo;
            f_hi = f_lo;
            t_lo = t;
            f_lo = ft;
            d_lo = dt;
            break;
        }
        t_lo = t;
        f_lo = ft;
        d_lo = dt;
        t *= 2.0;
        if t > 1e10 {
            return Some(ft);
        }
    }

    // Zoom phase; bisection safeguarded by a quadratic fit.
    loop {
        if evals >= max_evals {
            if t_lo > 0.0 {
                let (ft, _) = eval(t_lo, x_out, g_out);
                return Some(ft);
            }
            return None;
        }
        evals += 1;
        let (a, b) = if t_lo < t_hi {
            (t_lo, t_hi)
        } else {
            (t_hi, t_lo)
        };
        let width = b - a;
        // Minimizer of the quadratic through (t_lo, f_lo, d_lo) and (t_hi, f_hi).
        let span = t_hi - t_lo;
        let curvature = f_hi - f_lo - d_lo * span;
        let mut trial = if f_hi.is_finite() && curvature > 0.0 {
            t_lo - d_lo * span * span / (2.0 * curvature)
        } else {
            f64::NAN
        };
        if !(trial > a + 0.1 * width && trial < b - 0.1 * width) {
            trial = 0.5 * (a + b);
        }
        if width <= 1e-16 * b.max(1e-300) {
            if t_lo > 0.0 {
                let (ft, _) = eval(t_lo, x_out, g_out);
                return Some(ft);
            }
            return None;
        }
        let (ft, dt) = eval(trial, x_out, g_out);
        if !ft.is_finite() || ft > f0 + C1 * trial * slope0 || ft >= f_lo {
            t_hi = trial;
            f_hi = ft;
        } else {
            if dt.abs() <= -C2 * slope0 {
                return Some(ft);
            }
            if dt * (t_hi - t_lo) >= 0.0 {
                t_hi = t_lo;
                f_hi = f_lo;
            }
            t_lo = trial;
            f_lo = ft;
            d_lo = dt;
        }
    }
}
