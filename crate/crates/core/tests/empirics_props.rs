mod common;

use mckean_core::empirics::{assemble_gram, conv_field, empirical_inner, empirical_norm_sq, gamma_loss, gamma_prime, phi_norm_sq, GramSystem};
use mckean_core::io::{read_mkvp, write_mkvp};
use mckean_core::linalg::HermitianEigen;
use mckean_core::sieve::FrequencyScale;
use mckean_core::sim::{simulate_particles, PathEnsemble, SimConfig};
use proptest::prelude::*;

fn ensemble(seed: u64, n: usize, steps: usize, phi: &mckean_core::sim::InteractionSpec) -> PathEnsemble {
    let cfg = SimConfig::new(n, 0.5, 1.0, 1.0, seed).with_steps(steps).with_increments(true);
    simulate_particles(&cfg, phi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn contrast_identity(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let sieve = common::random_sieve(&mut r, 6, FrequencyScale::Transform);
        let f = common::random_coefs(&mut r, &sieve);
        let paths = ensemble(seed, 32, 16, &phi);
        let lhs = gamma_loss(&f, &paths) + gamma_prime(&f, &paths).unwrap() + phi_norm_sq(&phi, &paths);
        let rhs = empirical_norm_sq(&f, &phi, &paths);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs), "{lhs} vs {rhs}");
    }

    #[test]
    fn gram_reproduces_contrast(seed in any::<u64>(), periodic in any::<bool>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let scale = if periodic { FrequencyScale::Periodic } else { FrequencyScale::Transform };
        let sieve = common::random_sieve(&mut r, 6, scale);
        let f = common::random_coefs(&mut r, &sieve);
        let paths = ensemble(seed, 24, 12, &phi);
        let gram = assemble_gram(&paths, &sieve);
        let direct = gamma_loss(&f, &paths);
        prop_assert!((gram.objective(&f) - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
        let h = gram.hermitian_objective(&f.theta());
        prop_assert!(h.is_finite());
    }

    #[test]
    fn gram_is_hermitian_psd(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let sieve = common::random_sieve(&mut r, 8, FrequencyScale::Transform);
        let gram = assemble_gram(&ensemble(seed, 20, 10, &phi), &sieve);
        let asym = (&gram.psi_n - gram.psi_n.adjoint()).norm();
        prop_assert!(asym <= 1e-14 * (1.0 + gram.psi_n.norm()));
        let sym = (&gram.pseudo_n - gram.pseudo_n.transpose()).norm();
        prop_assert!(sym <= 1e-14 * (1.0 + gram.pseudo_n.norm()));
        let eig = HermitianEigen::new(&gram.psi_n);
        prop_assert!(eig.min() >= -1e-12 * eig.max().max(1e-300));
    }

    #[test]
    fn empirical_norm_is_symmetric_bilinear(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let sieve = common::random_sieve(&mut r, 4, FrequencyScale::Transform);
        let (f, g) = (common::random_coefs(&mut r, &sieve), common::random_coefs(&mut r, &sieve));
        let paths = ensemble(seed, 16, 8, &phi);
        let (fg, gf) = (empirical_inner(&f, &g, &paths), empirical_inner(&g, &f, &paths));
        let ff = empirical_inner(&f, &f, &paths);
        prop_assert!((fg - gf).abs() <= 1e-12 * (1.0 + fg.abs()));
        prop_assert!(ff >= 0.0 && fg * fg <= ff * empirical_inner(&g, &g, &paths) * (1.0 + 1e-10) + 1e-20);
    }

    #[test]
    fn spectral_convolution_matches_pairwise(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let phi = common::random_interaction(&mut r);
        let sieve = common::random_sieve(&mut r, 8, FrequencyScale::Transform);
        let f = common::random_coefs(&mut r, &sieve);
        let paths = ensemble(seed, 24, 6, &phi);
        let m = 3;
        let xs = paths.snapshot(m);
        let field = conv_field(&f, &paths, m);
        for (i, z) in field.iter().enumerate() {
            let brute = xs.iter().map(|&y| f.eval(xs[i] - y)).sum::<f64>() / xs.len() as f64;
            prop_assert!((z.re - brute).abs() <= 1e-10 * (1.0 + f.sup_bound()));
        }
    }
}

#[test]
fn gram_is_thread_count_invariant() {
    let mut r = common::rng(7);
    let phi = common::random_interaction(&mut r);
    let sieve = common::random_sieve(&mut r, 6, FrequencyScale::Transform);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let paths = ensemble(99, 64, 20, &phi);
            assemble_gram(&paths, &sieve)
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn gram_json_round_trip() {
    let mut r = common::rng(3);
    let phi = common::random_interaction(&mut r);
    let sieve = common::random_sieve(&mut r, 5, FrequencyScale::Periodic);
    let gram = assemble_gram(&ensemble(3, 30, 10, &phi), &sieve);
    let text = serde_json::to_string(&gram.to_json()).unwrap();
    let back = GramSystem::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, gram);
}

#[test]
fn path_file_round_trip() {
    let phi = mckean_core::sim::InteractionSpec::zero();
    let paths = ensemble(11, 10, 7, &phi);
    let mut buf = Vec::new();
    write_mkvp(&mut buf, &paths).unwrap();
    let back = read_mkvp(&buf[..]).unwrap();
    assert_eq!(back.positions(), paths.positions());
    assert_eq!(back.increments(), paths.increments());
    assert_eq!(back.config(), paths.config());
    assert!(read_mkvp(&buf[..buf.len() - 3]).is_err());
}
