//! Adaptive Dormand–Prince 5(4) integrator with PI step control and
//! the classic 4th-order continuous extension.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub dense_output: bool,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-9,
            max_step: f64::INFINITY,
            dense_output: false,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn dense(mut self) -> Self {
        self.dense_output = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidInput("max_step must be positive".into()));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Interpolant over one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    coeffs: Vec<f64>,
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= a && t <= b
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let d = self.coeffs.len() / 5;
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        (0..d)
            .map(|i| {
                let r = |j: usize| self.coeffs[j * d + i];
                r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
            })
            .collect()
    }
}

/// Piecewise interpolant over a whole integration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseOutput {
    pub segments: Vec<DenseSegment>,
}

impl DenseOutput {
    pub fn span(&self) -> Option<(f64, f64)> {
        let first = self.segments.first()?;
        let last = self.segments.last()?;
        Some((first.t0, last.t1()))
    }

    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        if self.segments.is_empty() {
            return None;
        }
        let forward = self.segments[0].h >= 0.0;
        // segments are ordered by t0 in the direction of integration
        let idx = self.segments.partition_point(|s| {
            if forward {
                s.t1() < t
            } else {
                s.t1() > t
            }
        });
        let seg = self.segments.get(idx)?;
        if seg.contains(t) {
            Some(seg.eval(t))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub dense: Option<DenseOutput>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl OdeSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Stepper state; owns the right-hand side `f(t, x, dxdt)`.
pub struct Dopri5<F> {
    f: F,
    opts: IntegratorOptions,
    t: f64,
    x: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    work: Vec<f64>,
    xnew: Vec<f64>,
    facold: f64,
    pub accepted: usize,
    pub rejected: usize,
    last: Option<DenseSegment>,
    started: bool,
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(f: F, t0: f64, x0: &[f64], opts: IntegratorOptions) -> Self {
        let n = x0.len();
        Self {
            f,
            opts,
            t: t0,
            x: x0.to_vec(),
            h: 0.0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            work: vec![0.0; n],
            xnew: vec![0.0; n],
            facold: 1e-4,
            accepted: 0,
            rejected: 0,
            last: None,
            started: false,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn last_segment(&self) -> Option<&DenseSegment> {
        self.last.as_ref()
    }

    fn sk(&self, a: f64, b: f64) -> f64 {
        self.opts.abs_tol + self.opts.rel_tol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self, dir: f64) -> f64 {
        let n = self.x.len();
        if n == 0 {
            return dir * self.opts.max_step.min(1.0);
        }
        let mut d0: f64 = 0.0;
        let mut d1: f64 = 0.0;
        for i in 0..n {
            let sk = self.sk(self.x[i], self.x[i]);
            d0 += (self.x[i] / sk).powi(2);
            d1 += (self.k[0][i] / sk).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.opts.max_step);
        for i in 0..n {
            self.work[i] = self.x[i] + dir * h0 * self.k[0][i];
        }
        (self.f)(self.t + dir * h0, &self.work, &mut self.k[1]);
        let mut d2: f64 = 0.0;
        for i in 0..n {
            let sk = self.sk(self.x[i], self.x[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (1e-6f64).max(h0 * 1e-3)
        } else {
            (0.01 / dm).powf(0.2)
        };
        dir * (100.0 * h0).min(h1).min(self.opts.max_step)
    }

    /// Takes one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<()> {
        let n = self.x.len();
        let dir = if t_limit >= self.t { 1.0 } else { -1.0 };
        if !self.started {
            (self.f)(self.t, &self.x, &mut self.k[0]);
            self.h = self.initial_step(dir);
            self.started = true;
        }
        if self.h * dir <= 0.0 {
            self.h = dir * self.h.abs().max(1e-6);
        }
        const SAFE: f64 = 0.9;
        const BETA: f64 = 0.04;
        let expo1 = 0.2 - BETA * 0.75;
        let facc1 = 1.0 / 0.2;
        let facc2 = 1.0 / 10.0;
        loop {
            if self.accepted + self.rejected >= self.opts.max_steps {
                return Err(Error::TooManySteps(self.opts.max_steps));
            }
            let mut h = self.h.abs().min(self.opts.max_step) * dir;
            let remaining = t_limit - self.t;
            let mut last = false;
            if (h - remaining) * dir >= -1e-14 * self.t.abs().max(1.0) {
                h = remaining;
                last = true;
            }
            if h.abs() < 10.0 * f64::EPSILON * self.t.abs().max(1.0) {
                if last && remaining.abs() < 10.0 * f64::EPSILON * self.t.abs().max(1.0) {
                    // within rounding of the limit
                    self.t = t_limit;
                    return Ok(());
                }
                return Err(Error::StepSizeUnderflow { t: self.t, h });
            }
            let t = self.t;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let x = &self.x;
            let w = &mut self.work;
            for i in 0..n {
                w[i] = x[i] + h * A21 * k1[i];
            }
            (self.f)(t + C2 * h, w, k2);
            for i in 0..n {
                w[i] = x[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.f)(t + C3 * h, w, k3);
            for i in 0..n {
                w[i] = x[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.f)(t + C4 * h, w, k4);
            for i in 0..n {
                w[i] = x[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.f)(t + C5 * h, w, k5);
            for i in 0..n {
                w[i] = x[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.f)(t + h, w, k6);
            let xnew = &mut self.xnew;
            for i in 0..n {
                xnew[i] = x[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            (self.f)(t + h, xnew, k7);
            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let sk = self.opts.abs_tol + self.opts.rel_tol * x[i].abs().max(xnew[i].abs());
                err += (e / sk).powi(2);
            }
            let err = if n > 0 { (err / n as f64).sqrt() } else { 0.0 };
            if !err.is_finite() {
                self.h *= 0.1;
                self.rejected += 1;
                continue;
            }
            let fac11 = err.powf(expo1);
            if err <= 1.0 {
                let fac = (fac11 / self.facold.powf(BETA) / SAFE).clamp(facc2, facc1);
                let hnew = h / fac;
                self.facold = err.max(1e-4);
                if self.opts.dense_output {
                    let mut coeffs = vec![0.0; 5 * n];
                    for i in 0..n {
                        let ydiff = xnew[i] - x[i];
                        let bspl = h * k1[i] - ydiff;
                        coeffs[i] = x[i];
                        coeffs[n + i] = ydiff;
                        coeffs[2 * n + i] = bspl;
                        coeffs[3 * n + i] = ydiff - h * k7[i] - bspl;
                        coeffs[4 * n + i] = h
                            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                                + D7 * k7[i]);
                    }
                    self.last = Some(DenseSegment { t0: t, h, coeffs });
                }
                std::mem::swap(&mut self.x, &mut self.xnew);
                std::mem::swap(k1, k7);
                self.t = if last { t_limit } else { t + h };
                self.h = if last && hnew.abs() < self.h.abs() {
                    self.h
                } else {
                    hnew
                };
                self.accepted += 1;
                return Ok(());
            }
            self.h = h / (fac11 / SAFE).min(facc1);
            self.rejected += 1;
        }
    }

    /// Steps until `t_end`, calling `on_step` after every accepted step.
    /// `on_step` returning `false` stops early.
    pub fn advance_to<C>(&mut self, t_end: f64, mut on_step: C) -> Result<()>
    where
        C: FnMut(&Self) -> bool,
    {
        while (t_end - self.t).abs() > 0.0 {
            self.step(t_end)?;
            if !on_step(self) {
                break;
            }
        }
        Ok(())
    }
}

/// Integrates `f` over `t_span`, recording every accepted step.
pub fn integrate_ode<F>(
    f: F,
    x0: &[f64],
    t_span: (f64, f64),
    opts: IntegratorOptions,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    opts.validate()?;
    let mut stepper = Dopri5::new(f, t_span.0, x0, opts);
    let mut sol = OdeSolution {
        times: vec![t_span.0],
        states: vec![x0.to_vec()],
        dense: opts.dense_output.then(DenseOutput::default),
        ..Default::default()
    };
    stepper.advance_to(t_span.1, |s| {
        sol.times.push(s.t());
        sol.states.push(s.state().to_vec());
        if let (Some(d), Some(seg)) = (sol.dense.as_mut(), s.last_segment()) {
            d.segments.push(seg.clone());
        }
        true
    })?;
    sol.accepted_steps = stepper.accepted;
    sol.rejected_steps = stepper.rejected;
    Ok(sol)
}

/// Integrates and returns only the end state.
pub fn integrate_final<F>(f: F, x0: &[f64], t0: f64, t1: f64, opts: IntegratorOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    opts.validate()?;
    let mut opts = opts;
    opts.dense_output = false;
    let mut stepper = Dopri5::new(f, t0, x0, opts);
    stepper.advance_to(t1, |_| true)?;
    Ok(stepper.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_constant() {
        let sol = integrate_ode(
            |_, _, dx: &mut [f64]| dx.iter_mut().for_each(|v| *v = 0.0),
            &[1.5, -2.0],
            (0.0, 10.0),
            IntegratorOptions::default(),
        )
        .unwrap();
        assert!(sol.states.iter().all(|s| s == &vec![1.5, -2.0]));
    }

    #[test]
    fn linear_decay_endpoint() {
        let x = integrate_final(
            |_, x: &[f64], dx: &mut [f64]| dx[0] = -x[0],
            &[1.0],
            0.0,
            1.0,
            IntegratorOptions::default(),
        )
        .unwrap();
        assert!((x[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let field = |_: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -x[0].sin();
        };
        let opts = IntegratorOptions::with_tolerances(1e-11, 1e-11);
        let fwd = integrate_final(field, &[1.0, 0.0], 0.0, 5.0, opts).unwrap();
        let back = integrate_final(field, &fwd, 5.0, 0.0, opts).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-8 && back[1].abs() < 1e-8);
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let sol = integrate_ode(
            |_, x: &[f64], dx: &mut [f64]| {
                dx[0] = x[1];
                dx[1] = -x[0];
            },
            &[0.0, 1.0],
            (0.0, 6.0),
            IntegratorOptions::default().dense(),
        )
        .unwrap();
        let dense = sol.dense.unwrap();
        for i in 0..=60 {
            let t = i as f64 * 0.1;
            let x = dense.eval(t).unwrap();
            assert!((x[0] - t.sin()).abs() < 1e-7, "t = {t}");
        }
        assert!(dense.eval(6.5).is_none());
    }

    #[test]
    fn error_decreases_with_tolerance_consistent_with_order() {
        let err = |tol: f64| {
            let x = integrate_final(
                |_, x: &[f64], dx: &mut [f64]| dx[0] = -x[0],
                &[1.0],
                0.0,
                2.0,
                IntegratorOptions::with_tolerances(tol, tol),
            )
            .unwrap();
            (x[0] - (-2f64).exp()).abs()
        };
        let mut prev = err(1e-4);
        for tol in [1e-5, 1e-6, 1e-7, 1e-8] {
            let e = err(tol);
            // a 5th order method reduces the global error roughly in proportion to tol
            assert!(e < prev, "error did not decrease at tol {tol}: {e} vs {prev}");
            assert!(e < 50.0 * tol, "error {e} too large for tol {tol}");
            prev = e;
        }
    }

    #[test]
    fn invalid_tolerances_rejected() {
        let res = integrate_ode(
            |_, _, _: &mut [f64]| {},
            &[0.0],
            (0.0, 1.0),
            IntegratorOptions::with_tolerances(0.0, 1e-9),
        );
        assert!(res.is_err());
    }
}
