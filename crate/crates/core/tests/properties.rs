use oscillachain::equilibria::enumerate_equilibria;
use oscillachain::model::{phase_differences, CouplingFunction, FullChainSystem, Parameters};
use oscillachain::numerics::{integrate_final, IntegratorOptions};
use oscillachain::simulate::{detect_trapping, simulate, DEFAULT_TRAP_RADIUS};
use oscillachain::model::torus_distance;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn tight() -> IntegratorOptions {
    IntegratorOptions::with_tolerances(1e-12, 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Scaling every rate (ω and both couplings) by c changes only the clock.
    #[test]
    fn coupling_strength_only_rescales_time(
        omega in prop::collection::vec(-1.0f64..1.0, 3..=5),
        ku in 0.3f64..2.0,
        ratio in -0.9f64..2.0,
        c in 0.2f64..5.0,
        th in prop::collection::vec(0.0f64..TAU, 5),
    ) {
        let n1 = omega.len();
        let a = FullChainSystem::new(omega.clone(), ku, ku * ratio, CouplingFunction::Sine).unwrap();
        let b = FullChainSystem::new(omega.iter().map(|w| c * w).collect(), c * ku, c * ku * ratio, CouplingFunction::Sine).unwrap();
        let pa = a.reduced_parameters(0.0).unwrap();
        let pb = b.reduced_parameters(0.0).unwrap();
        prop_assert!((pa.k - pb.k).abs() < 1e-14);
        for (x, y) in pa.omega.iter().zip(&pb.omega) {
            prop_assert!((x - y).abs() < 1e-14);
        }
        let theta0 = &th[..n1];
        let tau = 20.0;
        let ta = integrate_final(|_, s, out| a.field_into(s, out), theta0, 0.0, tau / ku, tight()).unwrap();
        let tb = integrate_final(|_, s, out| b.field_into(s, out), theta0, 0.0, tau / (c * ku), tight()).unwrap();
        let (da, db) = (phase_differences(&ta), phase_differences(&tb));
        for (x, y) in da.iter().zip(&db) {
            prop_assert!((x - y).abs() < 1e-7, "{da:?} vs {db:?}");
        }
    }

    // Once within r of the stable equilibrium, a trajectory stays within 2r.
    #[test]
    fn trapped_trajectories_stay_trapped(
        n in 2usize..=4,
        k in -0.9f64..2.0,
        delta in 0.05f64..1.4,
        x0 in prop::collection::vec(0.0f64..TAU, 4),
    ) {
        let p = Parameters::travelling_wave(n, k, delta).unwrap();
        let sink = enumerate_equilibria(&p).unwrap().into_iter().find(|e| e.is_sink()).unwrap();
        prop_assert_eq!(sink.indices.unwrap().nu_u, 0);
        let traj = simulate(&x0[..n], &p, 300.0, IntegratorOptions::default()).unwrap();
        if let Some(t_trap) = detect_trapping(&traj, &sink.point, DEFAULT_TRAP_RADIUS) {
            let at = traj.state_at(t_trap).unwrap();
            let later = simulate(&at, &p, 200.0, IntegratorOptions::default()).unwrap();
            let worst = later.states.iter().map(|x| torus_distance(x, &sink.point)).fold(0.0, f64::max);
            prop_assert!(worst <= 2.0 * DEFAULT_TRAP_RADIUS, "left to {worst}");
        }
    }
}
