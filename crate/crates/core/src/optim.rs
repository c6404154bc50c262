//! BFGS with Armijo backtracking, used to fit the convex calibration
//! objectives.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-6, max_iter: 1000, c1: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f` subject to `x >= lower` component-wise (use
/// `f64::NEG_INFINITY` for free coordinates). `f` returns the objective
/// and writes the gradient into its second argument.
///
/// Coordinates at their bound with an outward gradient are held fixed;
/// trial points are projected onto the box. Convergence is declared when
/// the projected gradient norm drops below `grad_tol`.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, lower: &[f64], opts: BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(lower.len(), n);
    let mut x: Vec<f64> = x0.iter().zip(lower).map(|(v, l)| v.max(*l)).collect();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Err(Error::NonConvergence { iterations: 0, grad_norm: f64::NAN });
    }
    let mut h = identity(n);
    let mut fresh = true;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut active_prev = vec![false; n];

    for iter in 0..opts.max_iter {
        let active: Vec<bool> = (0..n).map(|i| x[i] <= lower[i] && g[i] > 0.0).collect();
        let pg: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        let gn = norm(&pg);
        if gn < opts.grad_tol {
            return Ok(BfgsResult { x, value: fx, grad_norm: gn, iterations: iter });
        }
        if active != active_prev {
            h = identity(n);
            fresh = true;
            active_prev = active.clone();
        }

        let mut d: Vec<f64> = (0..n).map(|i| if active[i] { 0.0 } else { -dot(&h[i], &pg) }).collect();
        if !(dot(&d, &pg) < 0.0) {
            h = identity(n);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = (x[i] + t * d[i]).max(lower[i]);
            }
            let moved: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && moved < 0.0 && f_new <= fx + opts.c1 * moved {
                fx = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if fresh {
                // steepest descent already failed: no further progress possible
                if gn < opts.grad_tol * 100.0 {
                    return Ok(BfgsResult { x, value: fx, grad_norm: gn, iterations: iter });
                }
                return Err(Error::NonConvergence { iterations: iter, grad_norm: gn });
            }
            h = identity(n);
            fresh = true;
            continue;
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = scale;
                }
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
    }
    let pg: Vec<f64> = (0..n).map(|i| if x[i] <= lower[i] && g[i] > 0.0 { 0.0 } else { g[i] }).collect();
    let gn = norm(&pg);
    if gn < opts.grad_tol {
        return Ok(BfgsResult { x, value: fx, grad_norm: gn, iterations: opts.max_iter });
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, grad_norm: gn })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian update `H <- (I - r s y') H (I - r y s') + r s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let r = minimize(f, vec![-1.2, 1.0], &[f64::NEG_INFINITY; 2], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn quadratic_converges_fast() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 8.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2)
        };
        let r = minimize(f, vec![0.0, 0.0], &[f64::NEG_INFINITY; 2], BfgsOptions::default()).unwrap();
        assert!(r.iterations < 20);
        assert!((r.x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn respects_lower_bound() {
        // minimum at x = (-1, 2), constrained to x0 >= 1e-8
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] + 1.0) + 0.5 * (x[1] - 2.0);
            g[1] = 2.0 * (x[1] - 2.0) + 0.5 * (x[0] + 1.0);
            (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2) + 0.5 * (x[0] + 1.0) * (x[1] - 2.0)
        };
        let r = minimize(f, vec![1.0, 0.0], &[1e-8, f64::NEG_INFINITY], BfgsOptions::default()).unwrap();
        assert_eq!(r.x[0], 1e-8);
        // constrained optimum of x1 given x0 at the bound
        let x1 = 2.0 - 0.25 * (1e-8 + 1.0);
        assert!((r.x[1] - x1).abs() < 1e-6, "{:?}", r.x);
    }
}
