//! Phase-locked states: enumeration, index bookkeeping and the Lyapunov functional.

use crate::error::{Error, Result};
use crate::model::{angle_distance, jacobian, vector_field, Parameters};
use crate::numerics::{eigenvalues, newton, norm_inf, solve_linear, NewtonOptions, SmallMatrix, Spectrum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const PATTERN_TOL: f64 = 1e-9;
pub const HYPERBOLIC_TOL: f64 = 1e-8;
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquilibriumIndices {
    pub nu0: usize,
    pub nu_pi: usize,
    pub nu_u: usize,
    pub nu_s: usize,
}

impl EquilibriumIndices {
    /// The index identities `ν0 = νs`, `νπ = νu`.
    pub fn satisfies_index_theorem(&self) -> bool {
        self.nu0 == self.nu_s && self.nu_pi == self.nu_u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Bit `i` set when component `i` sits on the `π - Γ⁻¹(v_i)` branch.
    pub pattern: Vec<bool>,
    pub point: Vec<f64>,
    pub spectrum: Spectrum,
    /// `None` for non-hyperbolic points.
    pub indices: Option<EquilibriumIndices>,
}

impl Equilibrium {
    pub fn pattern_index(&self) -> usize {
        self.pattern
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as usize) << i))
    }

    pub fn nu_pi(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    /// Human-readable pattern, e.g. `"(pi-d,d,d)"`.
    pub fn pattern_label(&self) -> String {
        pattern_label(&self.pattern)
    }

    pub fn is_sink(&self) -> bool {
        self.pattern.iter().all(|&b| !b)
    }
}

pub fn pattern_label(pattern: &[bool]) -> String {
    let parts: Vec<&str> = pattern.iter().map(|&b| if b { "pi-d" } else { "d" }).collect();
    format!("({})", parts.join(","))
}

/// `v = -C⁻¹Ω`, the required values of `Γ(x_i)` at an equilibrium.
pub fn locking_values(p: &Parameters) -> Result<Vec<f64>> {
    if (p.k + 1.0).abs() < 1e-8 {
        return Err(Error::NearSingularC(p.k));
    }
    let rhs: Vec<f64> = p.omega.iter().map(|w| -w).collect();
    solve_linear(&p.coupling_matrix(), &rhs)
}

fn branch_values(p: &Parameters) -> Result<Vec<f64>> {
    let v = locking_values(p)?;
    v.iter()
        .enumerate()
        .map(|(i, &vi)| {
            if vi.abs() > 1.0 + 1e-12 {
                Err(Error::NoEquilibria { index: i, value: vi.abs() })
            } else {
                Ok(p.gamma.inverse(vi.clamp(-1.0, 1.0)).expect("clamped into range"))
            }
        })
        .collect()
}

/// Newton polish of an equilibrium guess with the analytic Jacobian.
pub fn refine_equilibrium(x0: &[f64], p: &Parameters) -> Result<Vec<f64>> {
    let f0 = vector_field(x0, p)?;
    if norm_inf(&f0) <= RESIDUAL_TOL {
        return Ok(x0.to_vec());
    }
    newton(
        |x: &[f64]| vector_field(x, p).expect("dimension checked"),
        Some(|x: &[f64]| jacobian(x, p).expect("dimension checked")),
        x0,
        NewtonOptions {
            tol: RESIDUAL_TOL,
            max_iter: 50,
        },
    )
}

fn build(pattern: Vec<bool>, base: &[f64], p: &Parameters) -> Result<Equilibrium> {
    let guess: Vec<f64> = pattern
        .iter()
        .zip(base)
        .map(|(&b, &r)| if b { PI - r } else { r })
        .collect();
    let point = refine_equilibrium(&guess, p)?;
    let spectrum = eigenvalues(&jacobian(&point, p)?)?;
    let mut eq = Equilibrium {
        pattern,
        point,
        spectrum,
        indices: None,
    };
    eq.indices = classify(&eq, p).ok();
    Ok(eq)
}

/// All `2^N` equilibria, ordered by pattern read as a binary number (bit `i` = component `i`).
pub fn enumerate_equilibria(p: &Parameters) -> Result<Vec<Equilibrium>> {
    let base = branch_values(p)?;
    let n = p.n;
    if n >= usize::BITS as usize - 1 {
        return Err(Error::InvalidInput(format!("N = {n} too large to enumerate")));
    }
    (0..1usize << n)
        .into_par_iter()
        .map(|bits| {
            let pattern: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            build(pattern, &base, p)
        })
        .collect()
}

/// The equilibrium with a given pattern.
pub fn equilibrium_with_pattern(p: &Parameters, pattern: &[bool]) -> Result<Equilibrium> {
    if pattern.len() != p.n {
        return Err(Error::Dimension {
            expected: p.n,
            got: pattern.len(),
        });
    }
    let base = branch_values(p)?;
    build(pattern.to_vec(), &base, p)
}

/// Indices of an equilibrium: `ν0`, `νπ` from its components, `νu`, `νs` from its spectrum.
pub fn classify(eq: &Equilibrium, p: &Parameters) -> Result<EquilibriumIndices> {
    let residual = norm_inf(&vector_field(&eq.point, p)?);
    if residual > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "point is not an equilibrium (residual {residual:e})"
        )));
    }
    let margin = eq.spectrum.min_abs_real_part();
    if margin < HYPERBOLIC_TOL {
        return Err(Error::NonHyperbolic(margin));
    }
    let base = branch_values(p)?;
    let mut nu0 = 0;
    let mut nu_pi = 0;
    for (x, r) in eq.point.iter().zip(&base) {
        if angle_distance(*x, *r) <= PATTERN_TOL {
            nu0 += 1;
        } else if angle_distance(*x, PI - r) <= PATTERN_TOL {
            nu_pi += 1;
        }
    }
    let nu_u = eq.spectrum.iter().filter(|z| z.re > 0.0).count();
    let nu_s = eq.spectrum.iter().filter(|z| z.re < 0.0).count();
    Ok(EquilibriumIndices {
        nu0,
        nu_pi,
        nu_u,
        nu_s,
    })
}

pub fn hyperbolicity_margin(eq: &Equilibrium) -> f64 {
    eq.spectrum.min_abs_real_part()
}

/// `E(x) = Σ_i [∫₀^{x_i} Γ(y) dy - Γ(δ) x_i]`.
pub fn lyapunov_e(x: &[f64], p: &Parameters) -> f64 {
    let gd = p.gamma.value(p.delta);
    x.iter().map(|&xi| p.gamma.antiderivative(xi) - gd * xi).sum()
}

/// `∇E = Γ(x) - Γ(δ)`.
pub fn lyapunov_gradient(x: &[f64], p: &Parameters) -> Vec<f64> {
    let gd = p.gamma.value(p.delta);
    x.iter().map(|&xi| p.gamma.value(xi) - gd).collect()
}

/// Closed-form `dE/dt` along the flow.
pub fn lyapunov_rate(x: &[f64], p: &Parameters) -> f64 {
    let g = &p.gamma;
    let gd = g.value(p.delta);
    let n = x.len();
    let first = g.value(x[0]) - gd;
    let last = g.value(x[n - 1]) - gd;
    let inner: f64 = x
        .windows(2)
        .map(|w| (g.value(w[0]) - g.value(w[1])).powi(2))
        .sum();
    -0.5 * (p.k + 1.0) * (first * first + last * last + inner)
}

/// Generic heteroclinic connection: `νπ(source) + ν0(target) > N`.
pub fn connection_generic(source: &Equilibrium, target: &Equilibrium) -> bool {
    let n = source.pattern.len();
    let nu_pi = source.nu_pi();
    let nu0 = target.pattern.len() - target.nu_pi();
    nu_pi + nu0 > n
}

/// Finite-difference Hessian of `E`.
pub fn lyapunov_hessian_fd(x: &[f64], p: &Parameters, h: f64) -> SmallMatrix {
    let n = x.len();
    let mut hess = SmallMatrix::zeros(n);
    let e = |y: &[f64]| lyapunov_e(y, p);
    for i in 0..n {
        for j in 0..n {
            let mut pp = x.to_vec();
            let mut pm = x.to_vec();
            let mut mp = x.to_vec();
            let mut mm = x.to_vec();
            pp[i] += h;
            pp[j] += h;
            pm[i] += h;
            pm[j] -= h;
            mp[i] -= h;
            mp[j] += h;
            mm[i] -= h;
            mm[j] -= h;
            hess[(i, j)] = (e(&pp) - e(&pm) - e(&mp) + e(&mm)) / (4.0 * h * h);
        }
    }
    hess
}
