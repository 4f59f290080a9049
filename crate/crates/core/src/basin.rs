//! Monte Carlo estimate of how much of phase and parameter space escapes synchronization.

use crate::equilibria::enumerate_equilibria;
use crate::error::{Error, Result};
use crate::model::{torus_distance, Parameters};
use crate::numerics::IntegratorOptions;
use crate::simulate::{detect_trapping, simulate, DEFAULT_TRAP_RADIUS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

pub const RNG_ALGORITHM: &str = "ChaCha8";

/// Lower end of the sampled k interval; k = −1 itself is conservative.
pub const K_MIN: f64 = -1.0 + 1e-9;

/// The trapping ball never reaches past this fraction of the way to the nearest other equilibrium.
pub const SEPARATION_FRACTION: f64 = 0.5;

/// Trapping radius actually used at `p`: `radius`, shrunk as the saddles close in on
/// the sink near δ = π/2 (a fixed ball would then swallow passing rotations).
pub fn effective_radius(p: &Parameters, radius: f64) -> f64 {
    let sink = vec![p.delta; p.n];
    let nearest = enumerate_equilibria(p)
        .map(|eqs| {
            eqs.iter()
                .filter(|e| !e.is_sink())
                .map(|e| torus_distance(&e.point, &sink))
                .fold(f64::INFINITY, f64::min)
        })
        .unwrap_or(f64::INFINITY);
    radius.min(SEPARATION_FRACTION * nearest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop once no realization has newly trapped for `window` time units.
    GlobalWindow,
    /// Run until every realization is trapped or `time_cap` is reached.
    AllTrappedOrCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinOptions {
    pub radius: f64,
    pub stop_rule: StopRule,
    pub window: f64,
    pub chunk: f64,
    /// Hard stop on simulated time.
    pub time_cap: f64,
    pub k_range: (f64, f64),
    pub delta_range: (f64, f64),
    /// Forces every realization to this δ (control runs).
    pub delta_override: Option<f64>,
    pub integrator: IntegratorOptions,
}

impl Default for BasinOptions {
    fn default() -> Self {
        Self {
            radius: DEFAULT_TRAP_RADIUS,
            stop_rule: StopRule::GlobalWindow,
            window: 200.0,
            chunk: 50.0,
            time_cap: 20_000.0,
            k_range: (K_MIN, 0.0),
            delta_range: (0.0, FRAC_PI_2),
            delta_override: None,
            integrator: IntegratorOptions::with_tolerances(1e-8, 1e-8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinTrialResult {
    #[serde(rename = "N")]
    pub n: usize,
    pub n_ic: usize,
    pub seed: u64,
    pub fraction_untrapped: f64,
    /// Trap time per realization; `None` if never trapped.
    pub trap_times: Vec<Option<f64>>,
    /// Realizations whose integration failed (counted as untrapped).
    pub failures: usize,
    /// Simulated time at which the trial stopped.
    pub stopped_at: f64,
}

impl BasinTrialResult {
    pub fn untrapped(&self) -> usize {
        self.trap_times.iter().filter(|t| t.is_none()).count()
    }
}

/// Parameters and initial state of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub k: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
}

pub fn draw_realization(n: usize, seed: u64, index: u64, opts: &BasinOptions) -> Realization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let x0 = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
    let (d0, d1) = opts.delta_range;
    let delta = rng.gen::<f64>() * (d1 - d0) + d0;
    let (k0, k1) = opts.k_range;
    let k = rng.gen::<f64>() * (k1 - k0) + k0;
    Realization {
        k,
        delta: opts.delta_override.unwrap_or(delta),
        x0,
    }
}

struct Live {
    p: Parameters,
    target: Vec<f64>,
    radius: f64,
    x: Vec<f64>,
    trapped: Option<f64>,
    failed: bool,
}

pub fn run_trial(n: usize, n_ic: usize, seed: u64, opts: &BasinOptions) -> Result<BasinTrialResult> {
    if n < 2 || n_ic == 0 {
        return Err(Error::InvalidInput("basin trial needs N >= 2 and n_ic >= 1".into()));
    }
    if !(opts.chunk > 0.0 && opts.window > 0.0 && opts.radius > 0.0) {
        return Err(Error::InvalidInput("chunk, window and radius must be positive".into()));
    }
    let mut live: Vec<Live> = (0..n_ic as u64)
        .into_par_iter()
        .map(|i| {
            let r = draw_realization(n, seed, i, opts);
            let p = Parameters::travelling_wave(n, r.k, r.delta);
            let target = vec![r.delta; n];
            match p {
                Ok(p) => {
                    let radius = effective_radius(&p, opts.radius);
                    let trapped = (torus_distance(&r.x0, &target) <= radius).then_some(0.0);
                    Live {
                        p,
                        target,
                        radius,
                        x: r.x0,
                        trapped,
                        failed: false,
                    }
                }
                Err(_) => Live {
                    p: Parameters::travelling_wave(n, 0.0, 0.0).expect("valid fallback"),
                    target,
                    radius: opts.radius,
                    x: r.x0,
                    trapped: None,
                    failed: true,
                },
            }
        })
        .collect();
    let mut t = 0.0;
    let mut last_trap = 0.0_f64;
    while t < opts.time_cap {
        let chunk = opts.chunk.min(opts.time_cap - t);
        live.par_iter_mut()
            .filter(|r| r.trapped.is_none() && !r.failed)
            .for_each(|r| match simulate(&r.x, &r.p, chunk, opts.integrator) {
                Ok(traj) => {
                    r.trapped = detect_trapping(&traj, &r.target, r.radius).map(|s| t + s);
                    r.x = traj.final_state().to_vec();
                }
                Err(_) => r.failed = true,
            });
        t += chunk;
        if let Some(latest) = live.iter().filter_map(|r| r.trapped).reduce(f64::max) {
            last_trap = last_trap.max(latest);
        }
        let pending = live.iter().any(|r| r.trapped.is_none() && !r.failed);
        if !pending || (opts.stop_rule == StopRule::GlobalWindow && t - last_trap >= opts.window) {
            break;
        }
    }
    let trap_times: Vec<Option<f64>> = live.iter().map(|r| r.trapped).collect();
    let untrapped = trap_times.iter().filter(|t| t.is_none()).count();
    Ok(BasinTrialResult {
        n,
        n_ic,
        seed,
        fraction_untrapped: untrapped as f64 / n_ic as f64,
        trap_times,
        failures: live.iter().filter(|r| r.failed).count(),
        stopped_at: t,
    })
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
    pub fractions: Vec<f64>,
}

impl NSummary {
    pub fn from_fractions(n: usize, fractions: Vec<f64>) -> Self {
        let mut s = fractions.clone();
        s.sort_by(f64::total_cmp);
        Self {
            n,
            mean: fractions.iter().sum::<f64>() / fractions.len() as f64,
            median: quantile(&s, 0.5),
            q25: quantile(&s, 0.25),
            q75: quantile(&s, 0.75),
            min: s[0],
            max: s[s.len() - 1],
            fractions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub n_ic: usize,
    pub trials: usize,
    pub radius: f64,
    /// Per-realization cap on `radius`, relative to the nearest other equilibrium.
    pub separation_fraction: f64,
    pub stop_rule: StopRule,
    pub window: f64,
    pub chunk: f64,
    pub time_cap: f64,
    pub k_range: (f64, f64),
    pub delta_range: (f64, f64),
    pub delta_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedInfo {
    pub algorithm: String,
    pub base_seed: u64,
    /// How per-trial seeds and per-realization streams derive from the base seed.
    pub derivation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinSummary {
    pub protocol: Protocol,
    #[serde(rename = "per_N")]
    pub per_n: Vec<NSummary>,
    pub seed_info: SeedInfo,
}

impl BasinSummary {
    pub fn for_n(&self, n: usize) -> Option<&NSummary> {
        self.per_n.iter().find(|s| s.n == n)
    }
}

pub fn run_experiment(
    n_values: &[usize],
    trials: usize,
    n_ic: usize,
    base_seed: u64,
    opts: &BasinOptions,
) -> Result<BasinSummary> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be >= 1".into()));
    }
    let mut per_n = Vec::new();
    for &n in n_values {
        let fractions = (0..trials as u64)
            .map(|i| run_trial(n, n_ic, base_seed.wrapping_add(i), opts).map(|r| r.fraction_untrapped))
            .collect::<Result<Vec<f64>>>()?;
        per_n.push(NSummary::from_fractions(n, fractions));
    }
    Ok(BasinSummary {
        protocol: Protocol {
            n_ic,
            trials,
            radius: opts.radius,
            separation_fraction: SEPARATION_FRACTION,
            stop_rule: opts.stop_rule,
            window: opts.window,
            chunk: opts.chunk,
            time_cap: opts.time_cap,
            k_range: opts.k_range,
            delta_range: opts.delta_range,
            delta_override: opts.delta_override,
        },
        per_n,
        seed_info: SeedInfo {
            algorithm: RNG_ALGORITHM.into(),
            base_seed,
            derivation: "trial seed = base_seed + trial index; realization stream = realization index".into(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 4.0);
        assert!((quantile(&s, 0.25) - 1.75).abs() < 1e-15);
        assert!((quantile(&s, 0.5) - 2.5).abs() < 1e-15);
        let one = NSummary::from_fractions(2, vec![0.3]);
        assert_eq!((one.min, one.q25, one.q75, one.max), (0.3, 0.3, 0.3, 0.3));
    }

    #[test]
    fn realizations_are_reproducible_and_in_range() {
        let o = BasinOptions::default();
        let a = draw_realization(3, 7, 11, &o);
        assert_eq!(a, draw_realization(3, 7, 11, &o));
        assert_ne!(a, draw_realization(3, 7, 12, &o));
        for i in 0..200 {
            let r = draw_realization(2, 1, i, &o);
            assert!(r.k > -1.0 && r.k <= 0.0);
            assert!((0.0..=FRAC_PI_2).contains(&r.delta));
            assert!(r.x0.iter().all(|x| (0.0..TAU).contains(x)));
        }
    }

    #[test]
    fn radius_shrinks_near_the_collapse() {
        let p = Parameters::travelling_wave(2, -0.3, 0.8).unwrap();
        assert_eq!(effective_radius(&p, 0.2), 0.2);
        let p = Parameters::travelling_wave(2, -0.3, 1.534).unwrap();
        let r = effective_radius(&p, 0.2);
        // nearest saddle sits |π − 2δ| away
        assert!((r - 0.5 * (std::f64::consts::PI - 2.0 * 1.534)).abs() < 1e-9, "{r}");
    }

    #[test]
    fn rejects_bad_input() {
        let o = BasinOptions::default();
        assert!(run_trial(1, 10, 0, &o).is_err());
        assert!(run_trial(2, 0, 0, &o).is_err());
        assert!(run_experiment(&[2], 0, 10, 0, &o).is_err());
    }
}
