//! Quick property suites behind `oscillachain validate`.

use oscillachain::equilibria::{enumerate_equilibria, lyapunov_gradient, lyapunov_rate};
use oscillachain::model::{
    c_eigenvalues_closed_form, coupling_determinant, coupling_determinant_closed_form, coupling_matrix, vector_field,
    Parameters,
};
use oscillachain::numerics::{eigenvalues, IntegratorOptions};
use oscillachain::simulate::simulate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn rng(seed: u64, suite: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(suite);
    r
}

fn index_theorem(seed: u64) -> SuiteResult {
    let mut r = rng(seed, 1);
    let (mut checked, mut bad) = (0, 0);
    for n in 2..=5 {
        for _ in 0..40 {
            let p = Parameters::travelling_wave(n, r.gen_range(-0.99..=3.0), r.gen_range(0.05..=1.5)).unwrap();
            match enumerate_equilibria(&p) {
                Ok(eqs) => {
                    for e in eqs {
                        checked += 1;
                        bad += !e.indices.is_some_and(|ix| ix.satisfies_index_theorem()) as usize;
                    }
                }
                Err(_) => bad += 1,
            }
        }
    }
    SuiteResult {
        name: "index theorem",
        pass: bad == 0,
        detail: format!("{checked} equilibria, {bad} violations"),
    }
}

fn lyapunov(seed: u64) -> SuiteResult {
    let mut r = rng(seed, 2);
    let mut worst_rate = 0.0_f64;
    let mut worst_rise = 0.0_f64;
    for i in 0..200 {
        let n = r.gen_range(2..=6);
        let p = Parameters::travelling_wave(n, r.gen_range(-0.99..=3.0), r.gen_range(0.0..=1.5)).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..TAU)).collect();
        let f = vector_field(&x, &p).unwrap();
        let g = lyapunov_gradient(&x, &p);
        let chain: f64 = g.iter().zip(&f).map(|(a, b)| a * b).sum();
        let rate = lyapunov_rate(&x, &p);
        worst_rate = worst_rate.max((rate - chain).abs() / (1.0 + chain.abs()));
        if i % 20 == 0 {
            let traj = simulate(&x, &p, 50.0, IntegratorOptions::with_tolerances(1e-11, 1e-11)).unwrap();
            let e = traj.energies(&p);
            for w in e.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    SuiteResult {
        name: "lyapunov identities",
        pass: worst_rate <= 1e-10 && worst_rise <= 1e-8,
        detail: format!("rate mismatch {worst_rate:.2e}, largest rise {worst_rise:.2e}"),
    }
}

fn closed_forms(seed: u64) -> SuiteResult {
    let mut r = rng(seed, 3);
    let mut worst_det = 0.0_f64;
    let mut worst_eig = 0.0_f64;
    for _ in 0..100 {
        let k = r.gen_range(-0.99..=3.0);
        for n in 1..=8 {
            let exact = coupling_determinant_closed_form(n, k);
            worst_det = worst_det.max((coupling_determinant(n, k) - exact).abs() / exact.abs().max(1e-300));
            if let Ok(s) = eigenvalues(&coupling_matrix(n, k)) {
                worst_eig = worst_eig.max(s.matching_distance(&c_eigenvalues_closed_form(n, k)));
            } else {
                worst_eig = f64::INFINITY;
            }
        }
    }
    SuiteResult {
        name: "closed-form oracles",
        pass: worst_det <= 1e-10 && worst_eig <= 1e-8,
        detail: format!("determinant rel. error {worst_det:.2e}, eigenvalue error {worst_eig:.2e}"),
    }
}

pub fn run_all(seed: u64) -> Vec<SuiteResult> {
    vec![index_theorem(seed), lyapunov(seed), closed_forms(seed)]
}
