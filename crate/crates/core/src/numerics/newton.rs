use super::linalg::solve_linear;
use super::matrix::{norm_inf, SmallMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Central-difference Jacobian with per-component step `max(1e-7, 1e-7 |x_i|)`.
pub fn finite_difference_jacobian<F>(f: &mut F, x: &[f64]) -> SmallMatrix
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut jac = SmallMatrix::zeros(n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-7f64.max(1e-7 * x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Newton's method with backtracking on the residual max-norm.
///
/// `jacobian` may be `None`, in which case central finite differences are used.
pub fn newton<F, J>(
    mut residual: F,
    mut jacobian: Option<J>,
    x0: &[f64],
    opts: NewtonOptions,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> SmallMatrix,
{
    let mut x = x0.to_vec();
    let mut fx = residual(&x);
    if fx.len() != x.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: fx.len(),
        });
    }
    let mut r = norm_inf(&fx);
    for _ in 0..opts.max_iter {
        if r <= opts.tol {
            return Ok(x);
        }
        let jac = match jacobian.as_mut() {
            Some(j) => j(&x),
            None => finite_difference_jacobian(&mut residual, &x),
        };
        let neg: Vec<f64> = fx.iter().map(|v| -v).collect();
        let dx = solve_linear(&jac, &neg)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lambda * d).collect();
            let ft = residual(&trial);
            let rt = norm_inf(&ft);
            if rt.is_finite() && (rt < r || lambda < 1e-3) {
                x = trial;
                fx = ft;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if r <= opts.tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: r,
        })
    }
}
