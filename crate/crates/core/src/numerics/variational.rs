//! Flow derivatives from the variational equations, integrated together with the flow.

use super::matrix::SmallMatrix;
use super::ode::{integrate_final, IntegratorOptions};
use crate::error::Result;

/// End state, state Jacobian and (optionally) parameter sensitivity of a time-`t` flow map.
#[derive(Debug, Clone)]
pub struct FlowDerivative {
    pub end: Vec<f64>,
    pub jacobian: SmallMatrix,
    pub param: Option<Vec<f64>>,
}

/// Integrates `x' = f(x)`, `Phi' = Df(x) Phi` and, when `dfdp` is given,
/// `s' = Df(x) s + df/dp(x)` over `[0, t]` as one augmented system.
///
/// `df` fills a row-major `n*n` buffer.
pub fn variational_flow<F, DF, P>(
    mut f: F,
    mut df: DF,
    mut dfdp: Option<P>,
    x0: &[f64],
    t: f64,
    opts: IntegratorOptions,
) -> Result<FlowDerivative>
where
    F: FnMut(&[f64], &mut [f64]),
    DF: FnMut(&[f64], &mut [f64]),
    P: FnMut(&[f64], &mut [f64]),
{
    let n = x0.len();
    let with_param = dfdp.is_some();
    let dim = n + n * n + if with_param { n } else { 0 };
    let mut y0 = vec![0.0; dim];
    y0[..n].copy_from_slice(x0);
    for i in 0..n {
        y0[n + i * n + i] = 1.0;
    }
    let mut jac = vec![0.0; n * n];
    let mut dp = vec![0.0; n];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, rest) = y.split_at(n);
        let (phi, s) = rest.split_at(n * n);
        f(x, &mut dy[..n]);
        df(x, &mut jac);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += jac[i * n + l] * phi[l * n + j];
                }
                dy[n + i * n + j] = acc;
            }
        }
        if let Some(p) = dfdp.as_mut() {
            p(x, &mut dp);
            for i in 0..n {
                let mut acc = dp[i];
                for l in 0..n {
                    acc += jac[i * n + l] * s[l];
                }
                dy[n + n * n + i] = acc;
            }
        }
    };
    let y = integrate_final(rhs, &y0, 0.0, t, opts)?;
    Ok(FlowDerivative {
        end: y[..n].to_vec(),
        jacobian: SmallMatrix::from_row_major(n, y[n..n + n * n].to_vec()),
        param: with_param.then(|| y[n + n * n..].to_vec()),
    })
}

type NoParam = fn(&[f64], &mut [f64]);

/// Derivative of the time-`period` map at `orbit_start`.
pub fn monodromy<F, DF>(
    f: F,
    df: DF,
    orbit_start: &[f64],
    period: f64,
    opts: IntegratorOptions,
) -> Result<SmallMatrix>
where
    F: FnMut(&[f64], &mut [f64]),
    DF: FnMut(&[f64], &mut [f64]),
{
    if !(period > 0.0) {
        return Err(crate::error::Error::InvalidInput("period must be positive".into()));
    }
    Ok(variational_flow(f, df, None::<NoParam>, orbit_start, period, opts)?.jacobian)
}
