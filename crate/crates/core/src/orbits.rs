//! Rotating-wave periodic orbits `x(T) = x(0) + 2πw` by multiple shooting,
//! Floquet multipliers and local bifurcation tests.

use crate::equilibria::Equilibrium;
use crate::error::{Error, Result};
use crate::model::{torus_distance, ParamKind, Parameters};
use crate::numerics::{
    eigenvalues, norm2, norm_inf, real_eigenvector, solve_linear, variational_flow, IntegratorOptions,
    SmallMatrix, Spectrum,
};
use crate::simulate::{simulate, winding_between, Trajectory, WindingVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitOptions {
    /// Minimum number of shooting segments.
    pub segments: usize,
    /// Segments are added so that none is longer than this.
    pub max_segment_time: f64,
    pub integrator: IntegratorOptions,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            segments: 4,
            max_segment_time: 10.0,
            integrator: IntegratorOptions::with_tolerances(1e-12, 1e-12),
            tol: 1e-10,
            max_iter: 40,
        }
    }
}

impl OrbitOptions {
    pub fn with_segments(mut self, m: usize) -> Self {
        self.segments = m;
        self
    }

    pub fn segments_for(&self, period: f64) -> usize {
        self.segments.max((period / self.max_segment_time).ceil() as usize).max(1)
    }
}

/// The anchor hyperplane `x_index(0) = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCondition {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub anchor: Vec<f64>,
    pub period: f64,
    pub winding: WindingVector,
    /// Shooting nodes; `nodes[0] == anchor`.
    pub nodes: Vec<Vec<f64>>,
    /// Trivial multiplier first, then the nontrivial ones.
    pub multipliers: Spectrum,
    pub stable: bool,
    /// Largest matching-condition defect of the shooting system.
    pub residual: f64,
    pub phase: PhaseCondition,
}

impl PeriodicOrbit {
    pub fn segments(&self) -> usize {
        self.nodes.len()
    }

    pub fn trivial_multiplier(&self) -> Complex64 {
        self.multipliers.eigenvalues[0]
    }

    pub fn nontrivial_multipliers(&self) -> &[Complex64] {
        &self.multipliers.eigenvalues[1..]
    }

    /// Nontrivial multiplier of largest modulus.
    pub fn leading_multiplier(&self) -> Complex64 {
        self.nontrivial_multipliers()
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn to_record(&self, p: &Parameters) -> OrbitRecord {
        OrbitRecord {
            n: p.n,
            k: p.k,
            delta: p.delta,
            winding: self.winding.w.clone(),
            period: self.period,
            anchor: self.anchor.clone(),
            multipliers: self
                .multipliers
                .iter()
                .map(|z| ComplexRecord { re: z.re, im: z.im })
                .collect(),
            stable: self.stable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexRecord {
    pub re: f64,
    pub im: f64,
}

/// JSON export of an orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitRecord {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: f64,
    pub delta: f64,
    pub winding: Vec<i64>,
    pub period: f64,
    pub anchor: Vec<f64>,
    pub multipliers: Vec<ComplexRecord>,
    pub stable: bool,
}

pub(crate) struct SegmentEval {
    pub end: Vec<f64>,
    pub mono: SmallMatrix,
    pub dp: Option<Vec<f64>>,
    pub f_end: Vec<f64>,
}

/// Flows every node over `tau` with its variational equations.
pub(crate) fn eval_segments(
    p: &Parameters,
    nodes: &[Vec<f64>],
    tau: f64,
    param: Option<ParamKind>,
    opts: IntegratorOptions,
) -> Result<Vec<SegmentEval>> {
    nodes
        .par_iter()
        .map(|y| {
            let fd = match param {
                Some(kind) => variational_flow(
                    |x: &[f64], dx: &mut [f64]| p.field_into(x, dx),
                    |x: &[f64], j: &mut [f64]| p.jacobian_into(x, j),
                    Some(|x: &[f64], d: &mut [f64]| kind.field_derivative_into(p, x, d)),
                    y,
                    tau,
                    opts,
                )?,
                None => variational_flow(
                    |x: &[f64], dx: &mut [f64]| p.field_into(x, dx),
                    |x: &[f64], j: &mut [f64]| p.jacobian_into(x, j),
                    None::<fn(&[f64], &mut [f64])>,
                    y,
                    tau,
                    opts,
                )?,
            };
            let mut f_end = vec![0.0; p.n];
            p.field_into(&fd.end, &mut f_end);
            Ok(SegmentEval {
                end: fd.end,
                mono: fd.jacobian,
                dp: fd.param,
                f_end,
            })
        })
        .collect()
}

/// Matching residuals `φ_τ(y_i) − y_{i+1}`, closing with `− 2πw` on the last one.
pub(crate) fn shooting_residual(segs: &[SegmentEval], nodes: &[Vec<f64>], shift: &[f64]) -> Vec<f64> {
    let m = nodes.len();
    let n = shift.len();
    let mut r = Vec::with_capacity(m * n);
    for i in 0..m {
        let (next, s) = if i + 1 < m {
            (&nodes[i + 1], 0.0)
        } else {
            (&nodes[0], 1.0)
        };
        for c in 0..n {
            r.push(segs[i].end[c] - next[c] - s * shift[c]);
        }
    }
    r
}

/// Jacobian rows of the matching conditions. Columns: nodes, then `ln T`,
/// then the parameter when sensitivities are present.
pub(crate) fn shooting_jacobian(segs: &[SegmentEval], n: usize, period: f64, cols: usize) -> Vec<Vec<f64>> {
    let m = segs.len();
    let mut rows = vec![vec![0.0; cols]; m * n];
    for (i, seg) in segs.iter().enumerate() {
        let next = (i + 1) % m;
        for r in 0..n {
            let row = &mut rows[i * n + r];
            for c in 0..n {
                row[i * n + c] += seg.mono[(r, c)];
            }
            row[next * n + r] -= 1.0;
            // d/d(ln T) of φ_{T/m}
            row[m * n] = seg.f_end[r] * period / m as f64;
            if let Some(dp) = &seg.dp {
                row[m * n + 1] = dp[r];
            }
        }
    }
    rows
}

/// Nodes at `i·T/m` along the forward flow from `x0`.
pub fn nodes_from_guess(p: &Parameters, x0: &[f64], period: f64, m: usize, opts: IntegratorOptions) -> Result<Vec<Vec<f64>>> {
    let tau = period / m as f64;
    let mut nodes = vec![x0.to_vec()];
    let mut x = x0.to_vec();
    for _ in 1..m {
        x = crate::numerics::integrate_final(|_, y: &[f64], d: &mut [f64]| p.field_into(y, d), &x, 0.0, tau, opts)?;
        nodes.push(x.clone());
    }
    Ok(nodes)
}

/// Re-samples a converged orbit on `m` equally spaced nodes.
pub fn remesh(orbit: &PeriodicOrbit, p: &Parameters, m: usize, opts: IntegratorOptions) -> Result<Vec<Vec<f64>>> {
    let old_m = orbit.nodes.len();
    let old_tau = orbit.period / old_m as f64;
    let tau = orbit.period / m as f64;
    (0..m)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 * tau;
            let j = ((t / old_tau).floor() as usize).min(old_m - 1);
            let dt = t - j as f64 * old_tau;
            if dt <= 0.0 {
                return Ok(orbit.nodes[j].clone());
            }
            crate::numerics::integrate_final(
                |_, y: &[f64], d: &mut [f64]| p.field_into(y, d),
                &orbit.nodes[j],
                0.0,
                dt,
                opts,
            )
        })
        .collect()
}

/// Choose the anchor component by largest `|ẋ|` at `x0`.
pub fn phase_condition_at(p: &Parameters, x0: &[f64]) -> Result<PhaseCondition> {
    let mut f = vec![0.0; p.n];
    p.field_into(x0, &mut f);
    let (index, speed) = f
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("N >= 1");
    if speed < 1e-8 {
        return Err(Error::DegeneratePhaseCondition(speed));
    }
    Ok(PhaseCondition {
        index,
        value: x0[index],
    })
}

/// Newton on the multiple-shooting system from a guess `(x0, T)`.
pub fn find_orbit(
    guess: (&[f64], f64),
    w: &WindingVector,
    p: &Parameters,
    opts: OrbitOptions,
) -> Result<PeriodicOrbit> {
    let (x0, period) = guess;
    if !(period > 0.0) {
        return Err(Error::InvalidInput("period guess must be positive".into()));
    }
    if w.is_zero() {
        return Err(Error::InvalidInput("winding vector must be nonzero".into()));
    }
    if x0.len() != p.n || w.w.len() != p.n {
        return Err(Error::Dimension {
            expected: p.n,
            got: x0.len().min(w.w.len()),
        });
    }
    let phase = phase_condition_at(p, x0)?;
    let m = opts.segments_for(period);
    let nodes = nodes_from_guess(p, x0, period, m, opts.integrator)?;
    solve_from_nodes(nodes, period, w, p, phase, opts)
}

/// Newton from explicit nodes with a fixed phase condition.
pub fn solve_from_nodes(
    mut nodes: Vec<Vec<f64>>,
    mut period: f64,
    w: &WindingVector,
    p: &Parameters,
    phase: PhaseCondition,
    opts: OrbitOptions,
) -> Result<PeriodicOrbit> {
    let n = p.n;
    let m = nodes.len();
    let dim = m * n + 1;
    let shift = w.as_shift();
    let mut last_norm = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let segs = eval_segments(p, &nodes, period / m as f64, None, opts.integrator)?;
        let mut r = shooting_residual(&segs, &nodes, &shift);
        r.push(nodes[0][phase.index] - phase.value);
        let norm = norm_inf(&r);
        if !norm.is_finite() {
            break;
        }
        if norm <= opts.tol {
            return assemble(nodes, period, w, p, phase, &segs, norm);
        }
        let mut rows = shooting_jacobian(&segs, n, period, dim);
        let mut prow = vec![0.0; dim];
        prow[phase.index] = 1.0;
        rows.push(prow);
        let jac = SmallMatrix::from_rows(&rows);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = solve_linear(&jac, &rhs)?;
        // damp steps that change ln T wildly
        let lam = (0.5 / step[m * n].abs()).min(1.0);
        let mut applied = false;
        let mut l = lam;
        for _ in 0..8 {
            let (cand_nodes, cand_period) = apply_step(&nodes, period, &step, l, n);
            if !(cand_period > 0.0) {
                l *= 0.5;
                continue;
            }
            let segs_c = eval_segments(p, &cand_nodes, cand_period / m as f64, None, opts.integrator);
            if let Ok(sc) = segs_c {
                let mut rc = shooting_residual(&sc, &cand_nodes, &shift);
                rc.push(cand_nodes[0][phase.index] - phase.value);
                let cn = norm_inf(&rc);
                if cn.is_finite() && (cn < norm || l < 1e-2) {
                    nodes = cand_nodes;
                    period = cand_period;
                    applied = true;
                    break;
                }
            }
            l *= 0.5;
        }
        if !applied {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: norm,
            });
        }
        last_norm = norm;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_norm,
    })
}

fn apply_step(nodes: &[Vec<f64>], period: f64, step: &[f64], l: f64, n: usize) -> (Vec<Vec<f64>>, f64) {
    let m = nodes.len();
    let new_nodes = nodes
        .iter()
        .enumerate()
        .map(|(i, y)| y.iter().enumerate().map(|(c, v)| v + l * step[i * n + c]).collect())
        .collect();
    (new_nodes, period * (l * step[m * n]).exp())
}

pub(crate) fn assemble(
    nodes: Vec<Vec<f64>>,
    period: f64,
    w: &WindingVector,
    p: &Parameters,
    phase: PhaseCondition,
    segs: &[SegmentEval],
    residual: f64,
) -> Result<PeriodicOrbit> {
    let monos: Vec<&SmallMatrix> = segs.iter().map(|s| &s.mono).collect();
    let multipliers = deflated_multipliers(&monos, &node_fields(p, &nodes))?;
    let stable = multipliers.eigenvalues[1..].iter().all(|z| z.norm() < 1.0);
    Ok(PeriodicOrbit {
        anchor: nodes[0].clone(),
        period,
        winding: w.clone(),
        nodes,
        multipliers,
        stable,
        residual,
        phase,
    })
}

/// `M = M_{m−1} ⋯ M_0`.
pub fn monodromy_product(monos: &[&SmallMatrix]) -> SmallMatrix {
    let n = monos[0].dim();
    monos.iter().fold(SmallMatrix::identity(n), |acc, m| m.mul(&acc))
}

/// Orthogonal `H` (a Householder reflector) with `H e1 = ±f/|f|`.
fn flow_basis(f: &[f64]) -> Result<SmallMatrix> {
    let n = f.len();
    let nf = norm2(f);
    if nf == 0.0 {
        return Err(Error::DegeneratePhaseCondition(0.0));
    }
    let mut u: Vec<f64> = f.iter().map(|v| v / nf).collect();
    u[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let nu2: f64 = u.iter().map(|v| v * v).sum();
    let mut h = SmallMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] -= 2.0 * u[i] * u[j] / nu2;
        }
    }
    Ok(h)
}

/// Multipliers with the trivial one split off, without forming the monodromy.
///
/// Segment `i` maps `f(y_i)` to `f(y_{i+1})`, so in node bases whose first vector
/// is the flow direction each segment matrix is block upper triangular up to
/// round-off. The product of the `(0,0)` entries is the trivial multiplier; the
/// trailing blocks form a periodic eigenproblem for the rest.
pub fn deflated_multipliers(monos: &[&SmallMatrix], fs: &[Vec<f64>]) -> Result<Spectrum> {
    let m = monos.len();
    let n = fs[0].len();
    let bases: Vec<SmallMatrix> = fs.iter().map(|f| flow_basis(f)).collect::<Result<_>>()?;
    let mut trivial = 1.0;
    let mut blocks = Vec::with_capacity(m);
    for i in 0..m {
        let b = bases[(i + 1) % m].transpose().mul(monos[i]).mul(&bases[i]);
        trivial *= b[(0, 0)];
        let mut lower = SmallMatrix::zeros(n - 1);
        for r in 1..n {
            for c in 1..n {
                lower[(r - 1, c - 1)] = b[(r, c)];
            }
        }
        blocks.push(lower);
    }
    let mut values = vec![Complex64::new(trivial, 0.0)];
    values.extend(periodic_eigenvalues(&blocks)?);
    Ok(Spectrum::new(values))
}

/// Eigenvalues of `A_{m−1} ⋯ A_0` from the cyclic block matrix, whose eigenvalues
/// are the `m`-th roots of those of the product.
pub fn periodic_eigenvalues(blocks: &[SmallMatrix]) -> Result<Vec<Complex64>> {
    let m = blocks.len();
    let d = blocks.first().map_or(0, SmallMatrix::dim);
    if d == 0 {
        return Ok(Vec::new());
    }
    if d == 1 {
        return Ok(vec![Complex64::new(blocks.iter().map(|b| b[(0, 0)]).product(), 0.0)]);
    }
    if m == 1 {
        return Ok(eigenvalues(&blocks[0])?.eigenvalues);
    }
    let mut a = SmallMatrix::zeros(m * d);
    for (i, b) in blocks.iter().enumerate() {
        let row0 = ((i + 1) % m) * d;
        for r in 0..d {
            for c in 0..d {
                a[(row0 + r, i * d + c)] = b[(r, c)];
            }
        }
    }
    let mut pending: Vec<Complex64> = eigenvalues(&a)?.iter().map(|s| s.powi(m as i32)).collect();
    // every product eigenvalue appears m times; group the copies
    let mut clusters = Vec::with_capacity(d);
    while !pending.is_empty() {
        let (lead, _) = pending
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
            .unwrap();
        let centre = pending[lead];
        let mut order: Vec<usize> = (0..pending.len()).collect();
        order.sort_by(|&x, &y| (pending[x] - centre).norm().total_cmp(&(pending[y] - centre).norm()));
        let take: Vec<usize> = order.into_iter().take(m).collect();
        let mean = take.iter().map(|&i| pending[i]).sum::<Complex64>() / take.len() as f64;
        clusters.push(mean);
        let mut keep = Vec::with_capacity(pending.len());
        for (i, z) in pending.into_iter().enumerate() {
            if !take.contains(&i) {
                keep.push(z);
            }
        }
        pending = keep;
    }
    // real input: a cluster without a conjugate partner is real
    let mut out = clusters.clone();
    let mut paired = vec![false; out.len()];
    for i in 0..out.len() {
        if paired[i] {
            continue;
        }
        let z = clusters[i];
        let partner = (0..out.len())
            .filter(|&j| j != i && !paired[j])
            .find(|&j| (clusters[j] - z.conj()).norm() < 0.5 * z.im.abs());
        match partner {
            Some(j) if z.im.abs() > 0.0 => {
                let re = 0.5 * (z.re + clusters[j].re);
                let im = 0.5 * (z.im.abs() + clusters[j].im.abs());
                out[i] = Complex64::new(re, im);
                out[j] = Complex64::new(re, -im);
                paired[i] = true;
                paired[j] = true;
            }
            _ => {
                out[i] = Complex64::new(z.re, 0.0);
                paired[i] = true;
            }
        }
    }
    Ok(out)
}

/// Flow directions at the nodes.
pub(crate) fn node_fields(p: &Parameters, nodes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|y| {
            let mut f = vec![0.0; p.n];
            p.field_into(y, &mut f);
            f
        })
        .collect()
}

/// Recomputes the multipliers of a converged orbit.
pub fn floquet(orbit: &PeriodicOrbit, p: &Parameters, opts: IntegratorOptions) -> Result<Spectrum> {
    let m = orbit.nodes.len();
    let segs = eval_segments(p, &orbit.nodes, orbit.period / m as f64, None, opts)?;
    let monos: Vec<&SmallMatrix> = segs.iter().map(|s| &s.mono).collect();
    deflated_multipliers(&monos, &node_fields(p, &orbit.nodes))
}

/// Full monodromy of a converged orbit (product over its segments).
pub fn orbit_monodromy(orbit: &PeriodicOrbit, p: &Parameters, opts: IntegratorOptions) -> Result<SmallMatrix> {
    let m = orbit.nodes.len();
    let segs = eval_segments(p, &orbit.nodes, orbit.period / m as f64, None, opts)?;
    let monos: Vec<&SmallMatrix> = segs.iter().map(|s| &s.mono).collect();
    Ok(monodromy_product(&monos))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationKind {
    None,
    Fold,
    PeriodDoubling,
    Torus,
}

fn is_real(z: &Complex64) -> bool {
    z.im.abs() <= 1e-12 * z.norm().max(1.0)
}

/// Drops the multiplier closest to 1.
pub fn nontrivial_part(s: &Spectrum) -> Vec<Complex64> {
    let mut v = s.eigenvalues.clone();
    if let Some(i) = s.closest_to(Complex64::new(1.0, 0.0)) {
        v.remove(i);
    }
    v
}

/// Test functions whose sign changes flag fold, period-doubling and torus crossings.
pub fn test_functions(nontrivial: &[Complex64]) -> [f64; 3] {
    let mut fold = 1.0;
    let mut pd = 1.0;
    let mut torus = 1.0;
    for z in nontrivial {
        if is_real(z) {
            fold *= z.re - 1.0;
            pd *= z.re + 1.0;
        } else if z.im > 0.0 {
            torus *= z.norm_sqr() - 1.0;
        }
    }
    [fold, pd, torus]
}

fn complex_pairs(nontrivial: &[Complex64]) -> usize {
    nontrivial.iter().filter(|z| !is_real(z) && z.im > 0.0).count()
}

/// Which test functions flip between two spectra. A pair colliding on the real
/// axis changes the torus product without crossing the circle, so the torus
/// flag needs equal pair counts on both sides.
pub fn sign_changes(before: &[Complex64], after: &[Complex64]) -> [bool; 3] {
    let a = test_functions(before);
    let b = test_functions(after);
    let mut out = [0, 1, 2].map(|i| (a[i] > 0.0) != (b[i] > 0.0));
    out[2] &= complex_pairs(before) == complex_pairs(after);
    out
}

/// Compares test-function signs of the nontrivial multipliers of two adjacent orbits.
pub fn classify_bifurcation(before: &Spectrum, after: &Spectrum) -> Result<BifurcationKind> {
    classify_nontrivial(&nontrivial_part(before), &nontrivial_part(after))
}

pub fn classify_nontrivial(before: &[Complex64], after: &[Complex64]) -> Result<BifurcationKind> {
    let flips = sign_changes(before, after);
    let kinds = [BifurcationKind::Fold, BifurcationKind::PeriodDoubling, BifurcationKind::Torus];
    let changed: Vec<BifurcationKind> = (0..3).filter(|&i| flips[i]).map(|i| kinds[i]).collect();
    match changed.as_slice() {
        [] => Ok(BifurcationKind::None),
        [k] => Ok(*k),
        _ => Err(Error::Ambiguous),
    }
}

/// Perturbation along the `−1` eigenvector for seeding the doubled orbit.
#[derive(Debug, Clone)]
pub struct DoublingSeed {
    pub x0: Vec<f64>,
    pub period: f64,
    pub winding: WindingVector,
    /// Unit eigenvector of the multiplier near `−1` at the anchor.
    pub direction: Vec<f64>,
    pub multiplier: f64,
}

pub const DOUBLING_AMPLITUDE: f64 = 1e-3;

pub fn double_period_seed(orbit: &PeriodicOrbit, p: &Parameters, opts: IntegratorOptions) -> Result<DoublingSeed> {
    let near = orbit
        .nontrivial_multipliers()
        .iter()
        .filter(|z| is_real(z))
        .map(|z| z.re)
        .min_by(|a, b| (a + 1.0).abs().total_cmp(&(b + 1.0).abs()));
    let mu = match near {
        Some(mu) if (mu + 1.0).abs() <= 0.1 => mu,
        other => {
            let d = other.map_or(f64::INFINITY, |mu| (mu + 1.0).abs());
            return Err(Error::NoDoublingDirection(d));
        }
    };
    let mono = orbit_monodromy(orbit, p, opts)?;
    let v = real_eigenvector(&mono, mu)?;
    Ok(DoublingSeed {
        x0: orbit.anchor.iter().zip(&v).map(|(x, d)| x + DOUBLING_AMPLITUDE * d).collect(),
        period: 2.0 * orbit.period,
        winding: orbit.winding.scaled(2),
        direction: v,
        multiplier: mu,
    })
}

/// Samples one period segment by segment (restarting at every node).
pub fn sample_orbit(orbit: &PeriodicOrbit, p: &Parameters, opts: IntegratorOptions) -> Result<Trajectory> {
    let m = orbit.nodes.len();
    let tau = orbit.period / m as f64;
    let mut traj = Trajectory::default();
    for (i, y) in orbit.nodes.iter().enumerate() {
        let seg = simulate(y, p, tau, opts)?;
        let t0 = i as f64 * tau;
        let skip = usize::from(i > 0);
        for (t, x) in seg.times.iter().zip(seg.states).skip(skip) {
            traj.times.push(t0 + t);
            traj.states.push(x);
        }
    }
    Ok(traj)
}

/// Minimal torus distance between the sampled orbit and `target`.
pub fn min_distance_to(samples: &Trajectory, target: &[f64]) -> f64 {
    samples
        .states
        .iter()
        .map(|x| torus_distance(x, target))
        .fold(f64::INFINITY, f64::min)
}

/// Harvests `(x0, T, w)` from a simulation: after `transient`, returns to the anchor
/// hyperplane of the fastest-drifting component are scanned and the first return
/// that closes up (torus defect below `close_tol`) is used; otherwise the best one.
pub fn guess_from_simulation(
    p: &Parameters,
    x_start: &[f64],
    transient: f64,
    search: f64,
    max_returns: usize,
    close_tol: f64,
) -> Result<Option<(Vec<f64>, f64, WindingVector)>> {
    let opts = IntegratorOptions::with_tolerances(1e-10, 1e-10).dense();
    let pre = crate::numerics::integrate_final(
        |_, y: &[f64], d: &mut [f64]| p.field_into(y, d),
        x_start,
        0.0,
        transient,
        IntegratorOptions::with_tolerances(1e-9, 1e-9),
    )?;
    let tr = simulate(&pre, p, search, opts)?;
    let disp: Vec<f64> = pre.iter().zip(tr.final_state()).map(|(a, b)| b - a).collect();
    let (j0, d) = disp
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, v)| (i, *v))
        .expect("N >= 1");
    if d.abs() < 2.0 * TAU {
        return Ok(None);
    }
    let dir = d.signum();
    let dense = tr.dense.as_ref().expect("dense requested");
    // crossing times of x_j0 = c + 2π r·dir
    let c = pre[j0];
    let mut crossings = vec![0.0];
    let mut level = 1.0;
    for i in 1..tr.len() {
        let target = c + dir * TAU * level;
        let (a, b) = (tr.states[i - 1][j0], tr.states[i][j0]);
        if (a - target) * (b - target) <= 0.0 && a != b {
            // bisection on the dense output
            let (mut lo, mut hi) = (tr.times[i - 1], tr.times[i]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let v = dense.eval(mid).unwrap()[j0];
                if (v - target) * (a - target) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(0.5 * (lo + hi));
            level += 1.0;
            if crossings.len() > max_returns {
                break;
            }
        }
    }
    let mut best: Option<(f64, f64, WindingVector)> = None;
    for &t in crossings.iter().skip(1) {
        let x = dense.eval(t).unwrap();
        let (w, defect) = winding_between(&pre, &x);
        let err = norm2(&defect);
        if err <= close_tol {
            return Ok(Some((pre, t, w)));
        }
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, t, w));
        }
    }
    Ok(best.map(|(_, t, w)| (pre, t, w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StablePart {
    /// Decay rates `μ−,1 ≤ μ−,2 ≤ …` of a real stable spectrum.
    Real(Vec<f64>),
    /// Leading stable pair `−μ− ± iω−`.
    Focus { mu_minus: f64, omega: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleSpectrum {
    pub mu_plus: f64,
    pub stable_part: StablePart,
    /// Saddle-focus with `μ− < μ+ < 2μ−`.
    pub shilnikov: bool,
}

impl SaddleSpectrum {
    /// Real case: `μ+ > μ−,1`.
    pub fn real_condition(&self) -> Option<bool> {
        match &self.stable_part {
            StablePart::Real(r) => r.first().map(|m| self.mu_plus > *m),
            StablePart::Focus { .. } => None,
        }
    }

    pub fn is_focus(&self) -> bool {
        matches!(self.stable_part, StablePart::Focus { .. })
    }
}

pub fn saddle_spectrum_classify(eq: &Equilibrium) -> Result<SaddleSpectrum> {
    classify_saddle_spectrum(&eq.spectrum)
}

pub fn classify_saddle_spectrum(spec: &Spectrum) -> Result<SaddleSpectrum> {
    let unstable: Vec<&Complex64> = spec.iter().filter(|z| z.re > 0.0).collect();
    if unstable.len() != 1 {
        return Err(Error::NotOneDimensional(unstable.len()));
    }
    let mu_plus = unstable[0].re;
    let mut stable: Vec<Complex64> = spec.iter().filter(|z| z.re < 0.0).copied().collect();
    stable.sort_by(|a, b| b.re.total_cmp(&a.re));
    let Some(lead) = stable.first() else {
        return Err(Error::NotSaddleFocusOrReal);
    };
    if stable.iter().all(is_real) {
        return Ok(SaddleSpectrum {
            mu_plus,
            stable_part: StablePart::Real(stable.iter().map(|z| -z.re).collect()),
            shilnikov: false,
        });
    }
    if is_real(lead) {
        return Err(Error::NotSaddleFocusOrReal);
    }
    let mu_minus = -lead.re;
    Ok(SaddleSpectrum {
        mu_plus,
        stable_part: StablePart::Focus {
            mu_minus,
            omega: lead.im.abs(),
        },
        shilnikov: mu_minus < mu_plus && mu_plus < 2.0 * mu_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::from_real(v)
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_bifurcation(&spec(&[1.0, 0.5]), &spec(&[1.0, 0.99])).unwrap(), BifurcationKind::None);
        assert_eq!(
            classify_bifurcation(&spec(&[1.0, -0.9]), &spec(&[1.0, -1.1])).unwrap(),
            BifurcationKind::PeriodDoubling
        );
        assert_eq!(classify_bifurcation(&spec(&[1.0, 0.9]), &spec(&[1.0, 1.2])).unwrap(), BifurcationKind::Fold);
        let in_pair = Spectrum::new(vec![c(1.0, 0.0), c(0.3, 0.9), c(0.3, -0.9)]);
        let out_pair = Spectrum::new(vec![c(1.0, 0.0), c(0.3, 1.0), c(0.3, -1.0)]);
        assert_eq!(classify_bifurcation(&in_pair, &out_pair).unwrap(), BifurcationKind::Torus);
        assert!(matches!(
            classify_bifurcation(&spec(&[1.0, 0.9, -0.9]), &spec(&[1.0, 1.1, -1.1])),
            Err(Error::Ambiguous)
        ));
    }

    #[test]
    fn collision_of_pair_is_not_a_bifurcation() {
        let pair = [c(1.5, 0.2), c(1.5, -0.2)];
        let reals = [c(1.4, 0.0), c(1.6, 0.0)];
        assert_eq!(classify_nontrivial(&pair, &reals).unwrap(), BifurcationKind::None);
        let inside = [c(-0.26, 0.07), c(-0.26, -0.07)];
        let split = [c(-0.3, 0.0), c(-0.2, 0.0)];
        assert_eq!(classify_nontrivial(&inside, &split).unwrap(), BifurcationKind::None);
        assert_eq!(classify_nontrivial(&split, &inside).unwrap(), BifurcationKind::None);
    }

    #[test]
    fn saddle_spectrum_cases() {
        let s = classify_saddle_spectrum(&spec(&[2.0, -1.0, -3.0])).unwrap();
        assert_eq!(s.stable_part, StablePart::Real(vec![1.0, 3.0]));
        assert_eq!(s.real_condition(), Some(true));
        assert!(!s.shilnikov);
        let f = classify_saddle_spectrum(&Spectrum::new(vec![c(1.5, 0.0), c(-1.0, 2.0), c(-1.0, -2.0)])).unwrap();
        assert!(f.is_focus() && f.shilnikov);
        let g = classify_saddle_spectrum(&Spectrum::new(vec![c(2.5, 0.0), c(-1.0, 2.0), c(-1.0, -2.0)])).unwrap();
        assert!(!g.shilnikov);
        assert!(classify_saddle_spectrum(&spec(&[1.0, 2.0, -1.0])).is_err());
        let mixed = Spectrum::new(vec![c(1.0, 0.0), c(-0.5, 0.0), c(-2.0, 1.0), c(-2.0, -1.0)]);
        assert!(matches!(classify_saddle_spectrum(&mixed), Err(Error::NotSaddleFocusOrReal)));
    }

    #[test]
    fn deflation_recovers_known_multipliers() {
        // M = P diag(1, 0.3, -2) P^-1 with first column of P = f
        let p = SmallMatrix::from_rows(&[vec![1.0, 0.2, 0.0], vec![0.5, 1.0, 0.3], vec![-0.2, 0.1, 1.0]]);
        let pinv = crate::numerics::inverse(&p).unwrap();
        let m = p.mul(&SmallMatrix::from_diagonal(&[1.0, 0.3, -2.0])).mul(&pinv);
        let f = p.column(0);
        let s = deflated_multipliers(&[&m], &[f]).unwrap();
        assert!((s.eigenvalues[0] - c(1.0, 0.0)).norm() < 1e-13);
        let rest = Spectrum::new(s.eigenvalues[1..].to_vec());
        assert!(rest.matching_distance(&spec(&[0.3, -2.0])) < 1e-12);
    }

    fn n2_rotating() -> (Parameters, Vec<f64>, f64, WindingVector) {
        let p = Parameters::travelling_wave(2, -0.55, 1.0).unwrap();
        let (x0, t, w) = guess_from_simulation(&p, &[0.5, 3.0], 300.0, 60.0, 4, 1e-3).unwrap().unwrap();
        (p, x0, t, w)
    }

    #[test]
    fn periodic_eigenvalues_match_product() {
        let a = SmallMatrix::from_rows(&[vec![0.3, 2.0, 0.1], vec![-1.0, 0.4, 0.0], vec![0.2, 0.1, 1.5]]);
        let b = SmallMatrix::from_rows(&[vec![1.1, 0.0, 0.3], vec![0.5, -0.7, 0.2], vec![0.0, 0.9, 0.8]]);
        let c = SmallMatrix::from_rows(&[vec![-0.6, 0.4, 0.0], vec![0.1, 1.3, -0.5], vec![0.7, 0.0, 0.2]]);
        let prod = c.mul(&b).mul(&a);
        let direct = eigenvalues(&prod).unwrap();
        let cyc = Spectrum::new(periodic_eigenvalues(&[a, b, c]).unwrap());
        assert_eq!(cyc.len(), 3);
        assert!(cyc.matching_distance(&direct) < 1e-10);
        // conjugate symmetry is exact
        let mut ims: Vec<f64> = cyc.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + ims[2]).abs() == 0.0 && ims[1] == 0.0 || ims.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn n2_orbit_converges_with_expected_winding() {
        let (p, x0, t, w) = n2_rotating();
        assert_eq!(w, WindingVector::new(vec![0, 1]));
        let orbit = find_orbit((&x0, t), &w, &p, OrbitOptions::default()).unwrap();
        assert!(orbit.residual <= 1e-9);
        assert!((orbit.trivial_multiplier() - c(1.0, 0.0)).norm() <= 1e-6);
        assert!(orbit.stable);
        let samples = sample_orbit(&orbit, &p, IntegratorOptions::with_tolerances(1e-12, 1e-12)).unwrap();
        let (wv, _) = winding_between(&samples.states[0], samples.final_state());
        assert_eq!(wv, orbit.winding);
        // idempotence
        let again = find_orbit((&orbit.anchor, orbit.period), &w, &p, OrbitOptions::default()).unwrap();
        assert!(norm_inf(&again.anchor.iter().zip(&orbit.anchor).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-9);
        // segment count independence
        let m8 = find_orbit((&orbit.anchor, orbit.period), &w, &p, OrbitOptions::default().with_segments(8)).unwrap();
        assert!((m8.period - orbit.period).abs() <= 1e-7);
        let json = serde_json::to_string(&orbit.to_record(&p)).unwrap();
        let back: OrbitRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, orbit.to_record(&p));
    }

    #[test]
    fn strongly_stable_orbit_has_no_doubling_direction() {
        let (p, x0, t, w) = n2_rotating();
        let orbit = find_orbit((&x0, t), &w, &p, OrbitOptions::default()).unwrap();
        assert!(matches!(
            double_period_seed(&orbit, &p, IntegratorOptions::default()),
            Err(Error::NoDoublingDirection(_))
        ));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let p = Parameters::travelling_wave(2, 0.5, 1.0).unwrap();
        let w = WindingVector::new(vec![0, 1]);
        assert!(matches!(
            find_orbit((&[1.0, 1.0], 5.0), &w, &p, OrbitOptions::default()),
            Err(Error::DegeneratePhaseCondition(_))
        ));
        assert!(find_orbit((&[1.0, 2.0], 5.0), &WindingVector::zeros(2), &p, OrbitOptions::default()).is_err());
        assert!(find_orbit((&[1.0, 2.0], -1.0), &w, &p, OrbitOptions::default()).is_err());
    }
}
