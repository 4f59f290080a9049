//! Pseudo-arclength continuation of rotating-wave orbits, event location,
//! period-doubling cascades and two-parameter region assembly.
//!
//! Unknowns are `u = (nodes, ln T, param)` with the weighted inner product
//! `<a, b> = (1/m) Σ nodes + a_lnT b_lnT + a_p b_p`, so that the step size
//! measures roughly one state-space radian per unit.

use crate::equilibria::{enumerate_equilibria, pattern_label};
use crate::error::{Error, Result};
use crate::model::{ParamKind, Parameters};
use crate::numerics::{norm_inf, solve_linear, IntegratorOptions, SmallMatrix};
use crate::orbits::{
    phase_condition_at,
    assemble, classify_saddle_spectrum, eval_segments, find_orbit, guess_from_simulation, min_distance_to,
    orbit_monodromy, remesh, sample_orbit, shooting_jacobian, shooting_residual,
    sign_changes, test_functions, OrbitOptions, PeriodicOrbit, PhaseCondition, SaddleSpectrum, SegmentEval,
};
use crate::numerics::real_eigenvector;
use crate::simulate::WindingVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub h0: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_points: usize,
    /// Homoclinic proxy: period threshold.
    pub t_max: f64,
    /// Homoclinic proxy: torus distance to an equilibrium.
    pub approach_distance: f64,
    /// Give up once the period exceeds this without a detected approach.
    pub period_cap: f64,
    /// Parameter tolerance for bisected fold / period-doubling events.
    pub event_tol: f64,
    pub corrector_tol: f64,
    pub corrector_max_iter: usize,
    /// Terminate the branch at its first period-doubling event.
    pub stop_at_pd: bool,
    pub orbit: OrbitOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            h0: 0.01,
            h_min: 1e-5,
            h_max: 0.05,
            max_points: 4000,
            t_max: 200.0,
            approach_distance: 1e-2,
            period_cap: 2000.0,
            event_tol: 1e-6,
            corrector_tol: 1e-10,
            corrector_max_iter: 10,
            stop_at_pd: false,
            orbit: OrbitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fold,
    PeriodDoubling,
    HomoclinicProxy,
    Torus,
}

impl EventKind {
    /// Label used in branch files (`None` for events not exported there).
    pub fn csv_label(self) -> Option<&'static str> {
        match self {
            Self::Fold => Some("fold"),
            Self::PeriodDoubling => Some("pd"),
            Self::HomoclinicProxy => Some("homoclinic"),
            Self::Torus => None,
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "fold" => Some(Self::Fold),
            "pd" => Some(Self::PeriodDoubling),
            "homoclinic" => Some(Self::HomoclinicProxy),
            "torus" => Some(Self::Torus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleApproach {
    pub pattern: Vec<bool>,
    pub point: Vec<f64>,
    pub nu_pi: usize,
    pub distance: f64,
    pub spectrum: Option<SaddleSpectrum>,
}

impl SaddleApproach {
    pub fn label(&self) -> String {
        pattern_label(&self.pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchEvent {
    pub kind: EventKind,
    pub param: f64,
    /// Parameter values of the final bracketing pair.
    pub bracket: (f64, f64),
    pub orbit: PeriodicOrbit,
    pub saddle: Option<SaddleApproach>,
    /// Index into `Branch::points` of the point preceding the event.
    pub after_point: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub param: f64,
    pub orbit: PeriodicOrbit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    RangeEnd,
    Homoclinic,
    StepUnderflow(f64),
    MaxPoints,
    PeriodCap,
    PeriodDoubling,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub n: usize,
    pub parameter: ParamKind,
    pub fixed_other: f64,
    pub points: Vec<BranchPoint>,
    pub events: Vec<BranchEvent>,
    /// Terminations at the start and at the end of `points`.
    pub terminations: (Termination, Termination),
}

impl Branch {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &BranchEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn param_range(&self) -> (f64, f64) {
        let lo = self.points.iter().map(|p| p.param).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.param).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Branch CSV: `param,period,anchor_1..anchor_N,lead_mult_re,lead_mult_im,stable,event`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,period");
        for i in 1..=self.n {
            let _ = write!(out, ",anchor_{i}");
        }
        out.push_str(",lead_mult_re,lead_mult_im,stable,event\n");
        let row = |out: &mut String, param: f64, o: &PeriodicOrbit, event: &str| {
            let _ = write!(out, "{param:.16e},{:.16e}", o.period);
            for a in &o.anchor {
                let _ = write!(out, ",{a:.16e}");
            }
            let lead = o.leading_multiplier();
            let _ = writeln!(out, ",{:.16e},{:.16e},{},{event}", lead.re, lead.im, o.stable);
        };
        for (i, pt) in self.points.iter().enumerate() {
            row(&mut out, pt.param, &pt.orbit, "");
            for ev in self.events.iter().filter(|e| e.after_point == i) {
                if let Some(label) = ev.kind.csv_label() {
                    row(&mut out, ev.param, &ev.orbit, label);
                }
            }
        }
        out
    }
}

/// One parsed branch-file row.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub param: f64,
    pub period: f64,
    pub anchor: Vec<f64>,
    pub lead_mult: (f64, f64),
    pub stable: bool,
    pub event: Option<String>,
}

pub fn parse_branch_csv(text: &str) -> Result<Vec<BranchRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty branch file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[0] != "param" || cols[1] != "period" || *cols.last().unwrap() != "event" {
        return Err(Error::Parse(format!("bad branch header `{header}`")));
    }
    let n = cols.len() - 6;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n + 6 {
                return Err(Error::Parse(format!("line {}: expected {} fields", i + 2, n + 6)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)));
            Ok(BranchRow {
                param: num(f[0])?,
                period: num(f[1])?,
                anchor: f[2..2 + n].iter().map(|s| num(s)).collect::<Result<_>>()?,
                lead_mult: (num(f[2 + n])?, num(f[3 + n])?),
                stable: f[4 + n]
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?,
                event: (!f[5 + n].is_empty()).then(|| f[5 + n].to_string()),
            })
        })
        .collect()
}

#[derive(Clone)]
struct Ctx<'a> {
    template: &'a Parameters,
    kind: ParamKind,
    winding: WindingVector,
    shift: Vec<f64>,
    phase: PhaseCondition,
    opts: ContinuationOptions,
}

#[derive(Clone)]
struct Unknowns {
    u: Vec<f64>,
    m: usize,
    n: usize,
}

impl Unknowns {
    fn from_parts(nodes: &[Vec<f64>], period: f64, param: f64) -> Self {
        let m = nodes.len();
        let n = nodes[0].len();
        let mut u: Vec<f64> = nodes.iter().flatten().copied().collect();
        u.push(period.ln());
        u.push(param);
        Self { u, m, n }
    }

    fn nodes(&self) -> Vec<Vec<f64>> {
        self.u[..self.m * self.n].chunks(self.n).map(|c| c.to_vec()).collect()
    }

    fn period(&self) -> f64 {
        self.u[self.m * self.n].exp()
    }

    fn param(&self) -> f64 {
        self.u[self.m * self.n + 1]
    }

    fn with(&self, u: Vec<f64>) -> Self {
        Self { u, m: self.m, n: self.n }
    }

    fn wdot(&self, a: &[f64], b: &[f64]) -> f64 {
        let nn = self.m * self.n;
        let nodes: f64 = a[..nn].iter().zip(&b[..nn]).map(|(x, y)| x * y).sum::<f64>() / self.m as f64;
        nodes + a[nn] * b[nn] + a[nn + 1] * b[nn + 1]
    }

    fn weights(&self) -> Vec<f64> {
        let nn = self.m * self.n;
        let mut w = vec![1.0 / self.m as f64; nn];
        w.push(1.0);
        w.push(1.0);
        w
    }
}

struct Corrected {
    x: Unknowns,
    params: Parameters,
    segs: Vec<SegmentEval>,
    iterations: usize,
}

impl Ctx<'_> {
    fn params_at(&self, value: f64) -> Result<Parameters> {
        self.kind.set(self.template, value)
    }

    fn evaluate(&self, x: &Unknowns) -> Result<(Parameters, Vec<SegmentEval>, Vec<f64>)> {
        let params = self.params_at(x.param())?;
        let nodes = x.nodes();
        let segs = eval_segments(&params, &nodes, x.period() / x.m as f64, Some(self.kind), self.opts.orbit.integrator)?;
        let mut r = shooting_residual(&segs, &nodes, &self.shift);
        r.push(nodes[0][self.phase.index] - self.phase.value);
        Ok((params, segs, r))
    }

    /// Shooting + phase rows with parameter column.
    fn base_rows(&self, x: &Unknowns, segs: &[SegmentEval]) -> Vec<Vec<f64>> {
        let cols = x.m * x.n + 2;
        let mut rows = shooting_jacobian(segs, x.n, x.period(), cols);
        let mut prow = vec![0.0; cols];
        prow[self.phase.index] = 1.0;
        rows.push(prow);
        rows
    }

    /// Newton on the extended system with arclength row `<u − pred, t> = 0`.
    fn correct(&self, pred: &Unknowns, t: &[f64]) -> Result<Corrected> {
        let mut x = pred.clone();
        let w = x.weights();
        let mut prev = f64::INFINITY;
        let mut last_step = f64::INFINITY;
        for it in 0..=self.opts.corrector_max_iter {
            let (params, segs, mut r) = self.evaluate(&x)?;
            let arc: f64 = (0..x.u.len()).map(|i| w[i] * t[i] * (x.u[i] - pred.u[i])).sum();
            r.push(arc);
            let norm = norm_inf(&r);
            if !norm.is_finite() {
                break;
            }
            if norm <= self.opts.corrector_tol || (norm <= 1e-9 && last_step < 1e-11) {
                return Ok(Corrected {
                    x,
                    params,
                    segs,
                    iterations: it,
                });
            }
            if it == self.opts.corrector_max_iter || (it > 2 && norm > prev) {
                break;
            }
            prev = norm;
            let mut rows = self.base_rows(&x, &segs);
            rows.push((0..x.u.len()).map(|i| w[i] * t[i]).collect());
            let du = solve_linear(&SmallMatrix::from_rows(&rows), &r.iter().map(|v| -v).collect::<Vec<_>>())?;
            let nn = x.m * x.n;
            let lam = (0.5 / du[nn].abs()).min(1.0);
            let u: Vec<f64> = x.u.iter().zip(&du).map(|(a, d)| a + lam * d).collect();
            last_step = lam * norm_inf(&du);
            x = x.with(u);
        }
        Err(Error::NoConvergence {
            iterations: self.opts.corrector_max_iter,
            residual: prev,
        })
    }

    /// Unit tangent (weighted norm) oriented along `t_prev`.
    fn tangent(&self, x: &Unknowns, segs: &[SegmentEval], t_prev: &[f64]) -> Result<Vec<f64>> {
        let w = x.weights();
        let mut rows = self.base_rows(x, segs);
        rows.push((0..x.u.len()).map(|i| w[i] * t_prev[i]).collect());
        let mut rhs = vec![0.0; rows.len()];
        *rhs.last_mut().unwrap() = 1.0;
        let t = solve_linear(&SmallMatrix::from_rows(&rows), &rhs)?;
        let nrm = x.wdot(&t, &t).sqrt();
        Ok(t.iter().map(|v| v / nrm).collect())
    }

    fn orbit(&self, c: &Corrected) -> Result<PeriodicOrbit> {
        let nodes = c.x.nodes();
        let mut r = shooting_residual(&c.segs, &nodes, &self.shift);
        r.push(nodes[0][self.phase.index] - self.phase.value);
        assemble(nodes, c.x.period(), &self.winding, &c.params, self.phase, &c.segs, norm_inf(&r))
    }

    fn homoclinic_check(&self, params: &Parameters, orbit: &PeriodicOrbit) -> Option<SaddleApproach> {
        let eqs = enumerate_equilibria(params).ok()?;
        let samples = sample_orbit(orbit, params, IntegratorOptions::with_tolerances(1e-10, 1e-10)).ok()?;
        let (eq, d) = eqs
            .iter()
            .map(|e| (e, min_distance_to(&samples, &e.point)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (d < self.opts.approach_distance).then(|| SaddleApproach {
            pattern: eq.pattern.clone(),
            point: eq.point.clone(),
            nu_pi: eq.nu_pi(),
            distance: d,
            spectrum: classify_saddle_spectrum(&eq.spectrum).ok(),
        })
    }
}

/// Re-anchor the phase once the anchored component's speed drops below this
/// fraction of the largest.
const PHASE_REANCHOR: f64 = 0.5;

/// Largest `|μ_trivial − 1|` for which event test functions are trusted.
pub const MULTIPLIER_TRUST: f64 = 1e-4;

pub fn trivial_defect(o: &PeriodicOrbit) -> f64 {
    (o.trivial_multiplier() - 1.0).norm()
}

struct Walk {
    points: Vec<BranchPoint>,
    events: Vec<BranchEvent>,
    termination: Termination,
}

/// Walks one direction from `start` with initial tangent `t0`.
fn walk(ctx: &Ctx, start: Corrected, t0: Vec<f64>, range: (f64, f64), skip_first_events: bool) -> Walk {
    let mut ctx = ctx.clone();
    let opts = ctx.opts;
    let mut points = Vec::new();
    let mut events = Vec::new();
    let mut cur = start;
    let orbit0 = match ctx.orbit(&cur) {
        Ok(o) => o,
        Err(e) => {
            return Walk {
                points,
                events,
                termination: Termination::Failed(e.to_string()),
            }
        }
    };
    let mut mu_prev = orbit0.nontrivial_multipliers().to_vec();
    let mut have_prev_tf = !skip_first_events;
    points.push(BranchPoint {
        param: cur.x.param(),
        orbit: orbit0,
    });
    let mut t = t0;
    let mut h = opts.h0;
    let termination = loop {
        if points.len() >= opts.max_points {
            break Termination::MaxPoints;
        }
        let pred = cur.x.with(cur.x.u.iter().zip(&t).map(|(a, b)| a + h * b).collect());
        let attempt = ctx.correct(&pred, &t).and_then(|c| {
            let d: Vec<f64> = c.x.u.iter().zip(&cur.x.u).map(|(a, b)| a - b).collect();
            let dist = c.x.wdot(&d, &d).sqrt();
            if dist > 3.0 * h {
                return Err(Error::NoConvergence {
                    iterations: 0,
                    residual: dist,
                });
            }
            let tn = ctx.tangent(&c.x, &c.segs, &t)?;
            if c.x.wdot(&tn, &t) < 0.8 {
                return Err(Error::NoConvergence {
                    iterations: 0,
                    residual: c.x.wdot(&tn, &t),
                });
            }
            Ok((c, tn))
        });
        let (next, tn) = match attempt {
            Ok(v) => v,
            Err(_) => {
                h *= 0.5;
                if h < opts.h_min {
                    break Termination::StepUnderflow(cur.x.param());
                }
                continue;
            }
        };
        let param = next.x.param();
        if param < range.0 || param > range.1 {
            break Termination::RangeEnd;
        }
        let orbit = match ctx.orbit(&next) {
            Ok(o) => o,
            Err(e) => break Termination::Failed(e.to_string()),
        };
        let mu = orbit.nontrivial_multipliers().to_vec();
        let flips = sign_changes(&mu_prev, &mu);
        let tf_prev = test_functions(&mu_prev);
        let mut stop_pd = false;
        // events only where both endpoints have trustworthy multipliers
        let reliable = trivial_defect(&orbit) <= MULTIPLIER_TRUST && trivial_defect(&points.last().unwrap().orbit) <= MULTIPLIER_TRUST;
        if have_prev_tf && reliable {
            for (idx, kind) in [(0, EventKind::Fold), (1, EventKind::PeriodDoubling), (2, EventKind::Torus)] {
                if flips[idx] {
                    if let Some(ev) = bisect_event(&ctx, &cur, &t, h, idx, tf_prev[idx], kind, points.len() - 1) {
                        stop_pd |= kind == EventKind::PeriodDoubling && opts.stop_at_pd;
                        events.push(ev);
                    }
                }
            }
        }
        have_prev_tf = true;
        mu_prev = mu;
        let iterations = next.iterations;
        let period = orbit.period;
        points.push(BranchPoint { param, orbit });
        t = tn;
        cur = next;
        if stop_pd {
            break Termination::PeriodDoubling;
        }
        if period > opts.t_max {
            let last = &points.last().unwrap().orbit;
            if let Some(s) = ctx.homoclinic_check(&cur.params, last) {
                events.push(BranchEvent {
                    kind: EventKind::HomoclinicProxy,
                    param,
                    bracket: (param, param),
                    orbit: last.clone(),
                    saddle: Some(s),
                    after_point: points.len() - 1,
                });
                break Termination::Homoclinic;
            }
            if period > opts.period_cap {
                break Termination::PeriodCap;
            }
        }
        // keep segments short as the period grows
        let need = opts.orbit.segments_for(period);
        if need > cur.x.m {
            let m_new = need + need / 2;
            let orbit = &points.last().unwrap().orbit;
            let remeshed = remesh(orbit, &cur.params, m_new, opts.orbit.integrator).and_then(|nodes| {
                let x = Unknowns::from_parts(&nodes, period, param);
                let (params, segs, _) = ctx.evaluate(&x)?;
                let mut lifted = vec![0.0; x.u.len()];
                let nn = x.m * x.n;
                lifted[nn] = t[cur.x.m * cur.x.n];
                lifted[nn + 1] = t[cur.x.m * cur.x.n + 1];
                // node components: re-sampled tangent is unknown; use the flow-free lift
                let tn = ctx.tangent(&x, &segs, &lifted)?;
                Ok((
                    Corrected {
                        x,
                        params,
                        segs,
                        iterations: 0,
                    },
                    tn,
                ))
            });
            match remeshed {
                Ok((c, tn)) => {
                    cur = c;
                    t = tn;
                }
                Err(e) => break Termination::Failed(e.to_string()),
            }
        }
        // the anchor hyperplane degenerates once the flow turns tangent to it
        let y0 = &cur.x.u[..cur.x.n];
        let mut f = vec![0.0; cur.x.n];
        cur.params.field_into(y0, &mut f);
        if f[ctx.phase.index].abs() < PHASE_REANCHOR * norm_inf(&f) {
            let reanchored = phase_condition_at(&cur.params, y0).and_then(|ph| {
                let mut c2 = ctx.clone();
                c2.phase = ph;
                let tn = c2.tangent(&cur.x, &cur.segs, &t)?;
                Ok((c2, tn))
            });
            match reanchored {
                Ok((c2, tn)) => {
                    ctx = c2;
                    t = tn;
                }
                Err(e) => break Termination::Failed(e.to_string()),
            }
        }
        if iterations <= 3 {
            h = (h * 1.5).min(opts.h_max);
        }
    };
    Walk {
        points,
        events,
        termination,
    }
}

#[allow(clippy::too_many_arguments)]
fn bisect_event(
    ctx: &Ctx,
    from: &Corrected,
    t: &[f64],
    h: f64,
    idx: usize,
    tf_from: f64,
    kind: EventKind,
    after_point: usize,
) -> Option<BranchEvent> {
    let at = |s: f64| -> Option<(Corrected, PeriodicOrbit)> {
        let pred = from.x.with(from.x.u.iter().zip(t).map(|(a, b)| a + s * b).collect());
        let c = ctx.correct(&pred, t).ok()?;
        let o = ctx.orbit(&c).ok()?;
        Some((c, o))
    };
    let (mut lo, mut hi) = (0.0, h);
    let mut p_lo = from.x.param();
    let mut p_hi = at(h).map(|(c, _)| c.x.param())?;
    let mut best: Option<(f64, PeriodicOrbit)> = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (c, o) = at(mid)?;
        let v = test_functions(o.nontrivial_multipliers())[idx];
        let pm = c.x.param();
        if (v > 0.0) == (tf_from > 0.0) {
            lo = mid;
            p_lo = pm;
        } else {
            hi = mid;
            p_hi = pm;
        }
        best = Some((pm, o));
        if (p_hi - p_lo).abs() < ctx.opts.event_tol && hi - lo < 1e-4 * h.max(1e-2) {
            break;
        }
    }
    let (param, orbit) = best?;
    Some(BranchEvent {
        kind,
        param,
        bracket: (p_lo.min(p_hi), p_lo.max(p_hi)),
        orbit,
        saddle: None,
        after_point,
    })
}

fn seed_unknowns(ctx: &Ctx, seed: &PeriodicOrbit) -> Result<Corrected> {
    let x = Unknowns::from_parts(&seed.nodes, seed.period, ctx.kind.get(ctx.template));
    let (params, segs, _) = ctx.evaluate(&x)?;
    Ok(Corrected {
        x,
        params,
        segs,
        iterations: 0,
    })
}

fn param_direction(x: &Unknowns, sign: f64) -> Vec<f64> {
    let mut t = vec![0.0; x.u.len()];
    *t.last_mut().unwrap() = sign;
    t
}

/// Mirrors a backward walk and appends a forward one.
fn join(n: usize, kind: ParamKind, fixed_other: f64, back: Walk, fwd: Walk) -> Branch {
    let nb = back.points.len();
    let mut points: Vec<BranchPoint> = back.points.into_iter().rev().collect();
    // both walks start at the seed
    let offset = nb.saturating_sub(1);
    let mut events: Vec<BranchEvent> = back
        .events
        .into_iter()
        .map(|mut e| {
            // event between back[i] and back[i+1] → between reversed indices;
            // a terminal event at the last back point lands on the first point
            e.after_point = offset.saturating_sub(e.after_point + 1);
            e
        })
        .collect();
    events.reverse();
    points.extend(fwd.points.into_iter().skip(1));
    events.extend(fwd.events.into_iter().map(|mut e| {
        e.after_point += offset;
        e
    }));
    Branch {
        n,
        parameter: kind,
        fixed_other,
        points,
        events,
        terminations: (back.termination, fwd.termination),
    }
}

/// Continues a converged orbit in `which` over `range`, in both directions.
pub fn continue_branch(
    seed: &PeriodicOrbit,
    p: &Parameters,
    which: ParamKind,
    range: (f64, f64),
    opts: ContinuationOptions,
) -> Result<Branch> {
    let ctx = Ctx {
        template: p,
        kind: which,
        winding: seed.winding.clone(),
        shift: seed.winding.as_shift(),
        phase: seed.phase,
        opts,
    };
    let start = seed_unknowns(&ctx, seed)?;
    let t_fwd = ctx.tangent(&start.x, &start.segs, &param_direction(&start.x, 1.0))?;
    let t_back: Vec<f64> = t_fwd.iter().map(|v| -v).collect();
    let start2 = seed_unknowns(&ctx, seed)?;
    let (back, fwd) = rayon::join(
        || walk(&ctx, start, t_back, range, false),
        || walk(&ctx, start2, t_fwd, range, false),
    );
    let fixed_other = match which {
        ParamKind::Delta => p.k,
        ParamKind::K => p.delta,
    };
    Ok(join(p.n, which, fixed_other, back, fwd))
}

/// Switches onto the doubled branch at a period-doubling event and continues it
/// in one direction. The predictor leaves the bifurcation point along the
/// `−1` eigen-direction (`+v` on the first copy, `−v` on the second) and the
/// corrector's arclength hyperplane excludes the primary orbit traversed twice.
pub fn switch_at_period_doubling(
    event: &BranchEvent,
    p: &Parameters,
    which: ParamKind,
    range: (f64, f64),
    opts: ContinuationOptions,
) -> Result<Branch> {
    let params = which.set(p, event.param)?;
    let orbit = &event.orbit;
    let mu = orbit
        .nontrivial_multipliers()
        .iter()
        .filter(|z| z.im == 0.0)
        .map(|z| z.re)
        .min_by(|a, b| (a + 1.0).abs().total_cmp(&(b + 1.0).abs()))
        .ok_or(Error::NoDoublingDirection(f64::INFINITY))?;
    if (mu + 1.0).abs() > 0.1 {
        return Err(Error::NoDoublingDirection((mu + 1.0).abs()));
    }
    let mono = orbit_monodromy(orbit, &params, opts.orbit.integrator)?;
    let mut v = real_eigenvector(&mono, mu)?;
    // keep the anchor on the phase hyperplane: remove the flow component there
    let mut f0 = vec![0.0; p.n];
    params.field_into(&orbit.anchor, &mut f0);
    let j0 = orbit.phase.index;
    let a = v[j0] / f0[j0];
    v.iter_mut().zip(&f0).for_each(|(vi, fi)| *vi -= a * fi);
    // propagate along the segments
    let m = orbit.nodes.len();
    let segs = eval_segments(&params, &orbit.nodes, orbit.period / m as f64, None, opts.orbit.integrator)?;
    let mut vs = vec![v.clone()];
    for seg in segs.iter().take(m - 1) {
        let next = seg.mono.mul_vec(vs.last().unwrap());
        vs.push(next);
    }
    let shift = orbit.winding.as_shift();
    let mut nodes = orbit.nodes.clone();
    nodes.extend(orbit.nodes.iter().map(|y| y.iter().zip(&shift).map(|(a, s)| a + s).collect::<Vec<f64>>()));
    let w2 = orbit.winding.scaled(2);
    let ctx = Ctx {
        template: p,
        kind: which,
        winding: w2.clone(),
        shift: w2.as_shift(),
        phase: orbit.phase,
        opts,
    };
    let base = Unknowns::from_parts(&nodes, 2.0 * orbit.period, event.param);
    let mut tv = vec![0.0; base.u.len()];
    for (i, vi) in vs.iter().enumerate() {
        for c in 0..p.n {
            tv[i * p.n + c] = vi[c];
            tv[(i + m) * p.n + c] = -vi[c];
        }
    }
    let nrm = base.wdot(&tv, &tv).sqrt();
    tv.iter_mut().for_each(|x| *x /= nrm);
    let mut h = 0.02;
    let first = loop {
        let pred = base.with(base.u.iter().zip(&tv).map(|(a, b)| a + h * b).collect());
        match ctx.correct(&pred, &tv) {
            Ok(c) => break c,
            Err(e) => {
                h *= 0.5;
                if h < opts.h_min {
                    return Err(e);
                }
            }
        }
    };
    // continue away from the bifurcation point
    let away: Vec<f64> = first.x.u.iter().zip(&base.u).map(|(a, b)| a - b).collect();
    let t0 = ctx.tangent(&first.x, &first.segs, &away)?;
    let w = walk(&ctx, first, t0, range, true);
    let fixed_other = match which {
        ParamKind::Delta => p.k,
        ParamKind::K => p.delta,
    };
    Ok(Branch {
        n: p.n,
        parameter: which,
        fixed_other,
        points: w.points,
        events: w.events,
        terminations: (Termination::PeriodDoubling, w.termination),
    })
}

/// The period-doubling event of the primary cascade: the one at which the rest of
/// the spectrum is inside the unit circle, preferring the shortest period.
pub fn cascade_event(branch: &Branch) -> Option<&BranchEvent> {
    branch
        .events_of(EventKind::PeriodDoubling)
        .filter(|e| {
            let rest: Vec<_> = e.orbit.nontrivial_multipliers().iter().filter(|z| (**z + 1.0).norm() > 0.1).collect();
            rest.iter().all(|z| z.norm() < 1.0)
        })
        .min_by(|a, b| a.orbit.period.total_cmp(&b.orbit.period))
}

/// Recursively follows period doublings up to `depth` levels.
pub fn period_doubling_cascade(
    branch: &Branch,
    p: &Parameters,
    depth: usize,
    range: (f64, f64),
    opts: ContinuationOptions,
) -> Result<Vec<Branch>> {
    let mut out: Vec<Branch> = Vec::new();
    let level_opts = ContinuationOptions {
        stop_at_pd: true,
        ..opts
    };
    for _ in 0..depth {
        let parent = out.last().unwrap_or(branch);
        let Some(ev) = cascade_event(parent) else {
            break;
        };
        let next = switch_at_period_doubling(ev, p, parent.parameter, range, level_opts)?;
        out.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvent {
    pub k: f64,
    pub delta: f64,
    pub kind: EventKind,
    pub saddle_pattern: Option<String>,
}

/// One δ-interval of existence at fixed k, with the events closing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInterval {
    pub delta_min: f64,
    pub delta_max: f64,
    pub lower_kind: Option<EventKind>,
    pub upper_kind: Option<EventKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegionSlice {
    Found { k: f64, intervals: Vec<RegionInterval> },
    EmptyRegionAtK(f64),
}

impl RegionSlice {
    pub fn k(&self) -> f64 {
        match self {
            Self::Found { k, .. } => *k,
            Self::EmptyRegionAtK(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundary {
    pub n: usize,
    pub grid: Vec<f64>,
    pub slices: Vec<RegionSlice>,
    pub events: Vec<RegionEvent>,
    /// Seeding sweep step in δ.
    pub delta_step: f64,
}

impl RegionBoundary {
    pub fn intervals_at(&self, k: f64) -> Option<&[RegionInterval]> {
        self.slices.iter().find_map(|s| match s {
            RegionSlice::Found { k: kk, intervals } if (kk - k).abs() < 1e-12 => Some(intervals.as_slice()),
            _ => None,
        })
    }

    /// Total δ-length of the region at `k`.
    pub fn extent_at(&self, k: f64) -> Option<f64> {
        self.intervals_at(k)
            .map(|iv| iv.iter().map(|i| i.delta_max - i.delta_min).sum())
    }

    /// Region CSV: `k,delta_event,kind,saddle_pattern`; patterns contain commas and are quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,delta_event,kind,saddle_pattern\n");
        for e in &self.events {
            let kind = e.kind.csv_label().unwrap_or("torus");
            let pattern = e.saddle_pattern.as_deref().map(|s| format!("\"{s}\"")).unwrap_or_default();
            let _ = writeln!(out, "{:.16e},{:.16e},{kind},{pattern}", e.k, e.delta);
        }
        out
    }
}

pub fn parse_region_csv(text: &str) -> Result<Vec<RegionEvent>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("k,delta_event,kind,saddle_pattern") => {}
        other => return Err(Error::Parse(format!("bad region header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", i + 2));
            let f: Vec<&str> = line.splitn(4, ',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
            let pattern = match f[3] {
                "" => None,
                q => Some(
                    q.strip_prefix('"')
                        .and_then(|q| q.strip_suffix('"'))
                        .ok_or_else(|| bad("unquoted saddle pattern"))?
                        .to_string(),
                ),
            };
            Ok(RegionEvent {
                k: num(f[0])?,
                delta: num(f[1])?,
                kind: EventKind::from_label(f[2]).ok_or_else(|| bad("unknown event kind"))?,
                saddle_pattern: pattern,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedingStrategy {
    /// Simulation sweep over δ only.
    Simulation,
    /// Simulation sweep, falling back to continuation in k from the nearest seeded grid value.
    SimulationThenNeighbour,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    /// Lower seeding sweep, walked from `.1` down to `.0`.
    pub delta_sweep: (f64, f64),
    pub delta_step: f64,
    /// Also seed from the mirrored sweep `[π − .1, π − .0]`.
    pub mirrored_sweep: bool,
    pub delta_range: (f64, f64),
    pub seeding: SeedingStrategy,
    pub continuation: ContinuationOptions,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self {
            delta_sweep: (0.05, PI / 2.0),
            delta_step: 0.05,
            mirrored_sweep: true,
            delta_range: (0.01, PI - 0.01),
            seeding: SeedingStrategy::SimulationThenNeighbour,
            continuation: ContinuationOptions::default(),
        }
    }
}

/// The primary family's winding `(0, 1, …, 1)`.
pub fn primary_winding(n: usize) -> WindingVector {
    let mut w = vec![1; n];
    w[0] = 0;
    WindingVector::new(w)
}

/// Seeds a primary rotating orbit by simulation, trying δ = `from`, `from ± step`, … up to `to`.
pub fn seed_by_simulation(
    p: &Parameters,
    from: f64,
    to: f64,
    step: f64,
    opts: OrbitOptions,
) -> Option<(PeriodicOrbit, Parameters)> {
    let target = primary_winding(p.n);
    let count = ((to - from).abs() / step + 1e-9).floor() as usize;
    let dir = (to - from).signum();
    let starts: Vec<Vec<f64>> = (0..4)
        .map(|s| (0..p.n).map(|i| 0.7 + 1.9 * ((s * p.n + i) as f64 * 0.618).fract() * PI).collect())
        .collect();
    (0..=count).find_map(|i| {
        let q = p.with_delta(from + dir * i as f64 * step).ok()?;
        starts.iter().find_map(|x0| {
            let (x, t, w) = guess_from_simulation(&q, x0, 400.0, 200.0, 1, 0.05).ok()??;
            if w != target {
                return None;
            }
            let o = find_orbit((&x, t), &w, &q, opts).ok()?;
            (o.residual <= 1e-9).then(|| (o, q.clone()))
        })
    })
}

type Seed = Option<(PeriodicOrbit, Parameters)>;

/// δ-branch from one seed at grid value `k`: its interval and closing events.
fn interval_from_seed(
    k: f64,
    seed: &PeriodicOrbit,
    seed_params: &Parameters,
    opts: &RegionOptions,
) -> Option<(RegionInterval, Vec<RegionEvent>)> {
    let branch = continue_branch(seed, seed_params, ParamKind::Delta, opts.delta_range, opts.continuation).ok()?;
    let (lo, hi) = branch.param_range();
    let mut events: Vec<RegionEvent> = branch
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Fold | EventKind::HomoclinicProxy))
        .map(|e| RegionEvent {
            k,
            delta: e.param,
            kind: e.kind,
            saddle_pattern: e.saddle.as_ref().map(|s| s.label()),
        })
        .collect();
    events.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let nearest = |target: f64| {
        events
            .iter()
            .min_by(|a, b| (a.delta - target).abs().total_cmp(&(b.delta - target).abs()))
            .filter(|e| (e.delta - target).abs() < 1e-3)
            .map(|e| e.kind)
    };
    let iv = RegionInterval {
        delta_min: lo,
        delta_max: hi,
        lower_kind: nearest(lo),
        upper_kind: nearest(hi),
    };
    Some((iv, events))
}

fn slice_at(k: f64, seeds: &[&Seed], opts: &RegionOptions) -> (RegionSlice, Vec<RegionEvent>) {
    let mut intervals: Vec<RegionInterval> = Vec::new();
    let mut events = Vec::new();
    for (o, q) in seeds.iter().filter_map(|s| s.as_ref()) {
        // a seed already covered by a traced interval lies on that branch
        if intervals.iter().any(|iv| q.delta >= iv.delta_min && q.delta <= iv.delta_max) {
            continue;
        }
        if let Some((iv, ev)) = interval_from_seed(k, o, q, opts) {
            intervals.push(iv);
            events.extend(ev);
        }
    }
    if intervals.is_empty() {
        return (RegionSlice::EmptyRegionAtK(k), events);
    }
    intervals.sort_by(|a, b| a.delta_min.total_cmp(&b.delta_min));
    let mut merged: Vec<RegionInterval> = Vec::new();
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.delta_min <= last.delta_max => {
                if iv.delta_max > last.delta_max {
                    last.delta_max = iv.delta_max;
                    last.upper_kind = iv.upper_kind;
                }
            }
            _ => merged.push(iv),
        }
    }
    events.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    (RegionSlice::Found { k, intervals: merged }, events)
}

/// Two-parameter region of the primary rotating family from a grid of δ-branches.
pub fn trace_region(n: usize, k_grid: &[f64], opts: RegionOptions) -> Result<RegionBoundary> {
    if k_grid.is_empty() || k_grid.iter().any(|&k| !(k > -1.0)) {
        return Err(Error::InvalidInput("k grid must be nonempty and lie in (-1, k_max]".into()));
    }
    let template = Parameters::travelling_wave(n, k_grid[0], opts.delta_sweep.1)?;
    let (a, b) = opts.delta_sweep;
    let mut sweeps = vec![(b, a)];
    if opts.mirrored_sweep {
        sweeps.push((PI - b + opts.delta_step, PI - a));
    }
    let seeds: Vec<Vec<Seed>> = sweeps
        .iter()
        .map(|&(from, to)| {
            let s: Vec<Seed> = k_grid
                .par_iter()
                .map(|&k| {
                    let p = template.with_k(k).ok()?;
                    seed_by_simulation(&p, from, to, opts.delta_step, opts.continuation.orbit)
                })
                .collect();
            if opts.seeding == SeedingStrategy::SimulationThenNeighbour {
                fill_from_neighbours(k_grid, s, &opts)
            } else {
                s
            }
        })
        .collect();
    let results: Vec<(RegionSlice, Vec<RegionEvent>)> = (0..k_grid.len())
        .into_par_iter()
        .map(|i| {
            let mine: Vec<&Seed> = seeds.iter().map(|s| &s[i]).collect();
            slice_at(k_grid[i], &mine, &opts)
        })
        .collect();
    let mut slices = Vec::new();
    let mut events = Vec::new();
    for (s, e) in results {
        slices.push(s);
        events.extend(e);
    }
    Ok(RegionBoundary {
        n,
        grid: k_grid.to_vec(),
        slices,
        events,
        delta_step: opts.delta_step,
    })
}

/// Fills unseeded grid values by continuing in k from the nearest seeded neighbour.
fn fill_from_neighbours(
    k_grid: &[f64],
    seeds: Vec<Seed>,
    opts: &RegionOptions,
) -> Vec<Seed> {
    let mut seeds = seeds;
    let copts = ContinuationOptions {
        max_points: 400,
        ..opts.continuation
    };
    let mut tried = std::collections::HashSet::new();
    // sweep outward from seeded values until nothing changes
    loop {
        let mut changed = false;
        for i in 0..k_grid.len() {
            if seeds[i].is_some() {
                continue;
            }
            let neighbour = [i.wrapping_sub(1), i + 1]
                .into_iter()
                .filter(|&j| j < k_grid.len() && seeds[j].is_some() && tried.insert((i, j)))
                .find_map(|j| seeds[j].clone());
            let Some((o, q)) = neighbour else {
                continue;
            };
            let target = k_grid[i];
            let lo = q.k.min(target);
            let hi = q.k.max(target);
            // overshoot so the walk brackets the target before leaving the range
            let margin = copts.h_max.max(0.1 * (hi - lo));
            let range = (lo - margin, hi + margin);
            if let Some(found) = reach_param(&o, &q, ParamKind::K, target, range, copts) {
                seeds[i] = Some(found);
                changed = true;
            }
        }
        if !changed {
            return seeds;
        }
    }
}

/// Continues in `which` until `target` and corrects there.
fn reach_param(
    seed: &PeriodicOrbit,
    p: &Parameters,
    which: ParamKind,
    target: f64,
    range: (f64, f64),
    opts: ContinuationOptions,
) -> Option<(PeriodicOrbit, Parameters)> {
    let b = continue_branch(seed, p, which, range, opts).ok()?;
    let (lo, hi) = b.param_range();
    if target < lo || target > hi {
        return None;
    }
    // nearest point to target, then Newton at the target value
    let pt = b
        .points
        .iter()
        .min_by(|a, c| (a.param - target).abs().total_cmp(&(c.param - target).abs()))?;
    let q = which.set(p, target).ok()?;
    let o = crate::orbits::solve_from_nodes(
        pt.orbit.nodes.clone(),
        pt.orbit.period,
        &pt.orbit.winding,
        &q,
        pt.orbit.phase,
        opts.orbit,
    )
    .ok()?;
    Some((o, q))
}

/// Convenience: seed by simulation at `(k, δ)` and return the orbit.
pub fn seed_orbit(p: &Parameters, opts: OrbitOptions) -> Result<PeriodicOrbit> {
    let target = primary_winding(p.n);
    for s in 0..8 {
        let x0: Vec<f64> = (0..p.n).map(|i| 0.5 + 5.0 * ((s * p.n + i) as f64 * 0.618_034).fract()).collect();
        if let Some((x, t, w)) = guess_from_simulation(p, &x0, 400.0, 200.0, 1, 0.05)? {
            if w == target {
                if let Ok(o) = find_orbit((&x, t), &w, p, opts) {
                    return Ok(o);
                }
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })
}
