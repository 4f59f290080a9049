//! The oscillator chain, its phase-difference reduction and the closed-form
//! quantities attached to it.

use crate::error::{Error, Result};
use crate::numerics::{determinant, SmallMatrix, Spectrum};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The coupling function and its derivative.
///
/// Custom functions are checked at construction for 2π-periodicity,
/// `|Γ| <= 1`, odd symmetry about 0, even symmetry about π/2 and
/// `Γ' > 0` on `(0, π/2)`.
#[derive(Clone)]
pub enum CouplingFunction {
    Sine,
    Custom {
        name: String,
        value: ScalarFn,
        derivative: ScalarFn,
    },
}

impl fmt::Debug for CouplingFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sine => write!(f, "Sine"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Default for CouplingFunction {
    fn default() -> Self {
        Self::Sine
    }
}

const PROPERTY_SAMPLES: usize = 10_000;

impl CouplingFunction {
    pub fn custom<V, D>(name: impl Into<String>, value: V, derivative: D) -> Result<Self>
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let g = Self::Custom {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        };
        g.check_properties(1e-9)?;
        Ok(g)
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Sine => "sin",
            Self::Custom { name, .. } => name,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Sine => x.sin(),
            Self::Custom { value, .. } => value(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Sine => x.cos(),
            Self::Custom { derivative, .. } => derivative(x),
        }
    }

    /// `∫₀ˣ Γ(y) dy`.
    pub fn antiderivative(&self, x: f64) -> f64 {
        match self {
            Self::Sine => 1.0 - x.cos(),
            Self::Custom { value, .. } => {
                crate::numerics::quadrature::integrate(&|y| value(y), 0.0, x, 1e-12)
            }
        }
    }

    /// Branch of Γ⁻¹ into `[-π/2, π/2]`; `None` if `|v| > 1`.
    pub fn inverse(&self, v: f64) -> Option<f64> {
        if !(v.abs() <= 1.0) {
            return None;
        }
        match self {
            Self::Sine => Some(v.asin()),
            Self::Custom { .. } => {
                // Γ is increasing on [-π/2, π/2]
                let (mut lo, mut hi) = (-FRAC_PI_2, FRAC_PI_2);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.value(mid) < v {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-15 {
                        break;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }

    /// Samples the structural properties; returns the first violation.
    pub fn check_properties(&self, tol: f64) -> Result<()> {
        for i in 0..PROPERTY_SAMPLES {
            let x = -TAU + 2.0 * TAU * (i as f64 + 0.5) / PROPERTY_SAMPLES as f64;
            let g = self.value(x);
            if !g.is_finite() || g.abs() > 1.0 + tol {
                return Err(Error::InvalidCoupling(format!("|Γ({x})| = {} > 1", g.abs())));
            }
            if (self.value(x + TAU) - g).abs() > tol {
                return Err(Error::InvalidCoupling(format!("Γ not 2π-periodic at {x}")));
            }
            if (self.value(-x) + g).abs() > tol {
                return Err(Error::InvalidCoupling(format!("Γ not odd at {x}")));
            }
            if (self.value(FRAC_PI_2 - x) - self.value(FRAC_PI_2 + x)).abs() > tol {
                return Err(Error::InvalidCoupling(format!(
                    "Γ not even about π/2 at offset {x}"
                )));
            }
            let y = FRAC_PI_2 * (i as f64 + 0.5) / PROPERTY_SAMPLES as f64;
            if !(self.derivative(y) > 0.0) {
                return Err(Error::InvalidCoupling(format!("Γ'({y}) <= 0")));
            }
        }
        Ok(())
    }
}

/// Which symmetry maps were applied while bringing `(k, δ)` into the canonical set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    /// `x ↦ -x` was applied (δ < 0 on input).
    pub negated: bool,
    /// `x_i ↦ x_{N+1-i}`, `k ↦ 1/k` was applied (k < -1 on input).
    pub index_reversed: bool,
    /// Time direction is reversed relative to the input system.
    pub time_reversed: bool,
}

/// Parameters of the reduced phase-difference system `ẋ = Ω + C Γ(x)`.
#[derive(Debug, Clone)]
pub struct Parameters {
    pub n: usize,
    pub k: f64,
    pub delta: f64,
    pub omega: Vec<f64>,
    pub gamma: CouplingFunction,
    pub normalization: Normalization,
}

impl Parameters {
    /// Parameters with travelling-wave frequencies for `(k, δ)`, taken as given.
    pub fn travelling_wave(n: usize, k: f64, delta: f64) -> Result<Self> {
        Self::travelling_wave_with(n, k, delta, CouplingFunction::Sine)
    }

    pub fn travelling_wave_with(
        n: usize,
        k: f64,
        delta: f64,
        gamma: CouplingFunction,
    ) -> Result<Self> {
        let omega = travelling_wave_omega(n, k, delta, &gamma)?;
        Self::new(n, k, delta, omega, gamma)
    }

    /// Parameters with an explicit Ω.
    pub fn new(
        n: usize,
        k: f64,
        delta: f64,
        omega: Vec<f64>,
        gamma: CouplingFunction,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("chain needs N >= 1".into()));
        }
        if omega.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: omega.len(),
            });
        }
        if !k.is_finite() || !delta.is_finite() || omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self {
            n,
            k,
            delta,
            omega,
            gamma,
            normalization: Normalization::default(),
        })
    }

    /// Travelling-wave parameters with `(k, δ)` mapped into `k >= -1`, `δ ∈ [0, π/2]`.
    pub fn travelling_wave_normalized(n: usize, k: f64, delta: f64) -> Result<Self> {
        let mut d = delta.rem_euclid(TAU);
        if d > PI {
            d -= TAU;
        }
        let mut norm = Normalization::default();
        if d < 0.0 {
            d = -d;
            norm.negated = true;
        }
        // Γ(δ) = Γ(π - δ): the travelling-wave system is identical
        if d > FRAC_PI_2 {
            d = PI - d;
        }
        let mut kk = k;
        if k < -1.0 {
            kk = 1.0 / k;
            norm.index_reversed = true;
            norm.time_reversed = true;
        }
        let mut p = Self::travelling_wave(n, kk, d)?;
        p.normalization = norm;
        Ok(p)
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        let mut p = Self::travelling_wave_with(self.n, k, self.delta, self.gamma.clone())?;
        p.normalization = self.normalization;
        Ok(p)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut p = Self::travelling_wave_with(self.n, self.k, delta, self.gamma.clone())?;
        p.normalization = self.normalization;
        Ok(p)
    }

    pub fn coupling_matrix(&self) -> SmallMatrix {
        coupling_matrix(self.n, self.k)
    }

    /// `ẋ = Ω + C Γ(x)`, written into `out`.
    #[inline]
    pub fn field_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let k = self.k;
        let g = &self.gamma;
        let mut prev = 0.0;
        let mut cur = g.value(x[0]);
        for i in 0..n {
            let next = if i + 1 < n { g.value(x[i + 1]) } else { 0.0 };
            out[i] = self.omega[i] + k * prev - (1.0 + k) * cur + next;
            prev = cur;
            cur = next;
        }
    }

    /// `J = C · diag(Γ'(x))`, row-major into `out`.
    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let d = self.gamma.derivative(x[j]);
            out[j * n + j] = -(1.0 + self.k) * d;
            if j > 0 {
                out[(j - 1) * n + j] = d;
            }
            if j + 1 < n {
                out[(j + 1) * n + j] = self.k * d;
            }
        }
    }
}

/// Continuation parameter of the travelling-wave family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Delta,
    K,
}

impl ParamKind {
    pub fn get(self, p: &Parameters) -> f64 {
        match self {
            Self::Delta => p.delta,
            Self::K => p.k,
        }
    }

    pub fn set(self, p: &Parameters, value: f64) -> Result<Parameters> {
        match self {
            Self::Delta => p.with_delta(value),
            Self::K => p.with_k(value),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Delta => "delta",
            Self::K => "k",
        }
    }

    /// `∂f/∂param` of the travelling-wave family at `x`.
    pub fn field_derivative_into(self, p: &Parameters, x: &[f64], out: &mut [f64]) {
        let n = p.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        let g = &p.gamma;
        match self {
            Self::Delta => {
                let d = g.derivative(p.delta);
                out[0] = p.k * d;
                out[n - 1] += d;
            }
            Self::K => {
                out[0] = g.value(p.delta);
                for i in 0..n {
                    let prev = if i > 0 { g.value(x[i - 1]) } else { 0.0 };
                    out[i] += prev - g.value(x[i]);
                }
            }
        }
    }
}

impl std::str::FromStr for ParamKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Self::Delta),
            "k" => Ok(Self::K),
            other => Err(Error::InvalidInput(format!("unknown parameter {other:?}"))),
        }
    }
}

/// Tridiagonal coupling matrix: diagonal `-(1+k)`, superdiagonal 1, subdiagonal `k`.
pub fn coupling_matrix(n: usize, k: f64) -> SmallMatrix {
    let mut c = SmallMatrix::zeros(n);
    for i in 0..n {
        c[(i, i)] = -(1.0 + k);
        if i + 1 < n {
            c[(i, i + 1)] = 1.0;
            c[(i + 1, i)] = k;
        }
    }
    c
}

/// Closed form of `det C`, with the limit value at `k = 1`.
pub fn coupling_determinant_closed_form(n: usize, k: f64) -> f64 {
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    if (k - 1.0).abs() < 1e-7 {
        // (k^{N+1} - 1)/(k - 1) = Σ_{j=0}^{N} k^j near k = 1
        return sign * (0..=n).map(|j| k.powi(j as i32)).sum::<f64>();
    }
    sign * (k.powi(n as i32 + 1) - 1.0) / (k - 1.0)
}

pub fn coupling_determinant(n: usize, k: f64) -> f64 {
    determinant(&coupling_matrix(n, k))
}

/// `λ_j = -(1+k) + 2√k cos(jπ/(N+1))`, `√k = i√|k|` for negative `k`.
pub fn c_eigenvalues_closed_form(n: usize, k: f64) -> Spectrum {
    let sqrt_k = if k >= 0.0 {
        Complex64::new(k.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-k).sqrt())
    };
    Spectrum::new(
        (1..=n)
            .map(|j| {
                Complex64::new(-(1.0 + k), 0.0)
                    + sqrt_k * 2.0 * (j as f64 * PI / (n as f64 + 1.0)).cos()
            })
            .collect(),
    )
}

/// Ω admitting the uniform travelling wave `(δ, …, δ)`: `(kΓ(δ), 0, …, 0, Γ(δ))`.
pub fn travelling_wave_omega(
    n: usize,
    k: f64,
    delta: f64,
    gamma: &CouplingFunction,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::UnsupportedN(n));
    }
    let g = gamma.value(delta);
    let mut omega = vec![0.0; n];
    omega[0] = k * g;
    omega[n - 1] = g;
    Ok(omega)
}

/// Natural frequencies `ω_j` of the full chain realising a travelling wave.
pub fn natural_frequencies(
    omega_base: f64,
    k_u: f64,
    k_d: f64,
    delta: f64,
    n: usize,
    gamma: &CouplingFunction,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::UnsupportedN(n));
    }
    let g = gamma.value(delta);
    let mut w = vec![omega_base; n + 1];
    w[0] = omega_base + k_d * g;
    w[n] = omega_base - k_u * g;
    Ok(w)
}

/// The original chain of `N+1` phase oscillators.
#[derive(Debug, Clone)]
pub struct FullChainSystem {
    pub omega_natural: Vec<f64>,
    pub k_u: f64,
    pub k_d: f64,
    pub gamma: CouplingFunction,
}

impl FullChainSystem {
    pub fn new(
        omega_natural: Vec<f64>,
        k_u: f64,
        k_d: f64,
        gamma: CouplingFunction,
    ) -> Result<Self> {
        if omega_natural.len() < 2 {
            return Err(Error::InvalidInput("chain needs at least two oscillators".into()));
        }
        if k_u == 0.0 {
            return Err(Error::InvalidInput("K_u must be non-zero".into()));
        }
        Ok(Self {
            omega_natural,
            k_u,
            k_d,
            gamma,
        })
    }

    pub fn num_oscillators(&self) -> usize {
        self.omega_natural.len()
    }

    /// Reduced parameters: `Ω_j = (ω_{j-1} - ω_j)/K_u`, `k = K_d/K_u`.
    pub fn reduced_parameters(&self, delta: f64) -> Result<Parameters> {
        let n = self.num_oscillators() - 1;
        let omega = (1..=n)
            .map(|j| (self.omega_natural[j - 1] - self.omega_natural[j]) / self.k_u)
            .collect();
        Parameters::new(n, self.k_d / self.k_u, delta, omega, self.gamma.clone())
    }

    /// Right-hand side of the chain, written into `out`.
    pub fn field_into(&self, theta: &[f64], out: &mut [f64]) {
        let m = theta.len();
        let g = &self.gamma;
        for j in 0..m {
            let mut v = self.omega_natural[j];
            if j > 0 {
                v += self.k_d * g.value(theta[j - 1] - theta[j]);
            }
            if j + 1 < m {
                v += self.k_u * g.value(theta[j + 1] - theta[j]);
            }
            out[j] = v;
        }
    }
}

pub fn full_chain_field(theta: &[f64], sys: &FullChainSystem) -> Result<Vec<f64>> {
    if theta.len() != sys.num_oscillators() {
        return Err(Error::Dimension {
            expected: sys.num_oscillators(),
            got: theta.len(),
        });
    }
    let mut out = vec![0.0; theta.len()];
    sys.field_into(theta, &mut out);
    Ok(out)
}

/// Phase differences `x_j = θ_{j-1} - θ_j`.
pub fn phase_differences(theta: &[f64]) -> Vec<f64> {
    theta.windows(2).map(|w| w[0] - w[1]).collect()
}

pub fn vector_field(x: &[f64], p: &Parameters) -> Result<Vec<f64>> {
    if x.len() != p.n {
        return Err(Error::Dimension {
            expected: p.n,
            got: x.len(),
        });
    }
    let mut out = vec![0.0; p.n];
    p.field_into(x, &mut out);
    Ok(out)
}

pub fn jacobian(x: &[f64], p: &Parameters) -> Result<SmallMatrix> {
    if x.len() != p.n {
        return Err(Error::Dimension {
            expected: p.n,
            got: x.len(),
        });
    }
    let mut j = SmallMatrix::zeros(p.n);
    p.jacobian_into(x, j.as_mut_slice());
    Ok(j)
}

/// `x ↦ -x` (and correspondingly `Ω ↦ -Ω`).
pub fn symmetry_negate_delta(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

pub fn negate_parameters(p: &Parameters) -> Parameters {
    let mut q = p.clone();
    q.omega = p.omega.iter().map(|v| -v).collect();
    q.delta = -p.delta;
    q.normalization.negated = !p.normalization.negated;
    q
}

/// The index-reversal symmetry.
#[derive(Debug, Clone)]
pub struct InvertedK {
    pub params: Parameters,
    pub state: Vec<f64>,
    /// `t_new = time_scale · t_old`; negative means time runs backwards.
    pub time_scale: f64,
}

/// `[x_1…x_N] ↦ [x_N…x_1]`, `k ↦ 1/k`, `Ω_j ↦ Ω_{N+1-j}/k`, `t_new = k t_old`.
pub fn symmetry_invert_k(p: &Parameters, x: &[f64]) -> Result<InvertedK> {
    if p.k == 0.0 {
        return Err(Error::ZeroK);
    }
    if x.len() != p.n {
        return Err(Error::Dimension {
            expected: p.n,
            got: x.len(),
        });
    }
    let k_old = p.k;
    let omega: Vec<f64> = p.omega.iter().rev().map(|w| w / k_old).collect();
    let mut params = Parameters::new(p.n, 1.0 / k_old, p.delta, omega, p.gamma.clone())?;
    params.normalization = Normalization {
        negated: p.normalization.negated,
        index_reversed: !p.normalization.index_reversed,
        time_reversed: p.normalization.time_reversed ^ (k_old < 0.0),
    };
    Ok(InvertedK {
        params,
        state: x.iter().rev().copied().collect(),
        time_scale: k_old,
    })
}

/// Per-component distance on the circle.
#[inline]
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(TAU);
    d.min(TAU - d)
}

/// Euclidean norm of componentwise circle distances.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| angle_distance(*x, *y).powi(2))
        .sum::<f64>()
        .sqrt()
}
