mod common;

use mckean_core::rng::derive_seed;
use mckean_core::sieve::FrequencyScale;
use mckean_core::sim::{drift_pairwise, drift_spectral, replay, simulate_mean_field, simulate_particles, InteractionSpec, SimConfig, SpectralSnapshot};
use mckean_core::stats::{ks_critical_1pct, ks_normal};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Positions are exactly the Euler recursion driven by the stored increments.
    #[test]
    fn paths_replay_from_increments(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let cfg = SimConfig::new(r.random_range(2..40), r.random_range(0.1..2.0), r.random_range(0.2..2.0), 1.0, seed)
            .with_steps(r.random_range(1..30))
            .with_increments(true);
        let paths = simulate_particles(&cfg, &phi).unwrap();
        let again = replay(&paths, &phi).unwrap();
        let worst = paths.positions().iter().zip(&again).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(worst <= 1e-12, "replay gap {worst}");
        for m in 0..cfg.n_steps {
            let disp = paths.displacement(m);
            prop_assert!(disp.iter().all(|d| d.is_finite()));
        }
    }

    #[test]
    fn spectral_drift_matches_pairwise(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let scale = if r.random() { FrequencyScale::Periodic } else { FrequencyScale::Transform };
        let sieve = common::random_sieve(&mut r, 8, scale);
        let c = common::random_coefs(&mut r, &sieve);
        let phi = InteractionSpec::spectral(c.clone()).unwrap();
        let xs: Vec<f64> = (0..r.random_range(1..64)).map(|_| r.random_range(-6.0..6.0)).collect();
        let snap = SpectralSnapshot::new(&sieve, &xs);
        for i in 0..xs.len() {
            let a = drift_spectral(&c, &snap, xs[i]).unwrap();
            let b = drift_pairwise(&phi, &xs, i);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + c.sup_bound()));
        }
    }

    // Bounded interactions keep trajectories within the Brownian part plus K·t.
    #[test]
    fn drift_is_bounded_by_k_phi(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let cfg = SimConfig::new(16, 1.0, 1.0, 1.0, seed).with_steps(20).with_increments(true);
        let paths = simulate_particles(&cfg, &phi).unwrap();
        let k = phi.k_phi();
        for i in 0..16 {
            for m in 0..20 {
                let drift = (paths.position(i, m + 1) - paths.position(i, m) - paths.increment(i, m).unwrap()) / cfg.dt();
                prop_assert!(drift.abs() <= k * (1.0 + 1e-9) + 1e-12);
            }
        }
    }
}

#[test]
fn simulation_is_seed_and_thread_deterministic() {
    let mut r = common::rng(12);
    let phi = common::random_interaction(&mut r);
    let cfg = SimConfig::new(200, 1.0, 1.0, 1.0, 5).with_steps(50);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate_particles(&cfg, &phi).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(2));
    assert_eq!(a, run(5));
    assert_ne!(a, simulate_particles(&cfg.clone().with_seed(6), &phi).unwrap());
}

#[test]
fn zero_interaction_is_gaussian() {
    let cfg = SimConfig::new(10_000, 1.0, 0.8, 1.2, 77);
    let paths = simulate_particles(&cfg, &InteractionSpec::zero()).unwrap();
    let xt = paths.snapshot(cfg.n_steps);
    let d = ks_normal(&xt, 0.0, (1.2f64.powi(2) + 0.64).sqrt());
    assert!(d < ks_critical_1pct(xt.len()), "KS {d}");
}

#[test]
fn mean_field_requires_matching_grid() {
    let phi = InteractionSpec::zero();
    let pilot = simulate_particles(&SimConfig::new(50, 1.0, 1.0, 1.0, 1).with_steps(10), &phi).unwrap();
    assert!(simulate_mean_field(&SimConfig::new(5, 1.0, 1.0, 1.0, 2).with_steps(10), &phi, &pilot).is_ok());
    assert!(simulate_mean_field(&SimConfig::new(5, 1.0, 1.0, 1.0, 2).with_steps(11), &phi, &pilot).is_err());
    assert!(simulate_mean_field(&SimConfig::new(5, 1.0, 2.0, 1.0, 2).with_steps(10), &phi, &pilot).is_err());
}

#[test]
fn derived_seeds_do_not_collide() {
    let mut seen = std::collections::HashSet::new();
    for n in [256u64, 512, 1024] {
        for rep in 0..100 {
            assert!(seen.insert(derive_seed(1, n, rep)));
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(SimConfig::new(0, 1.0, 1.0, 1.0, 1).validate().is_err());
    assert!(SimConfig::new(10, -1.0, 1.0, 1.0, 1).validate().is_err());
    assert!(SimConfig::new(10, 1.0, 1.0, 1.0, 1).with_steps(0).validate().is_err());
    assert_eq!(SimConfig::new(10, 1.3, 1.0, 1.0, 1).n_steps, 260);
}
