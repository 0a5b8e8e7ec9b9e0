#![allow(dead_code)]

use mckean_core::sieve::{CoefVec, FourierSieve, FrequencyScale};
use mckean_core::sim::{ClosedForm, InteractionSpec};
use mckean_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_sieve(r: &mut ChaCha8Rng, max_dim: usize, scale: FrequencyScale) -> FourierSieve {
    let a = r.random_range(1.0..5.0);
    let d = r.random_range(1..=max_dim);
    FourierSieve::new(a, d, r.random_range(0.2..1.5)).unwrap().with_scale(scale)
}

/// Random coefficients scaled into the ℓ1 ball of `sieve`.
pub fn random_coefs(r: &mut ChaCha8Rng, sieve: &FourierSieve) -> CoefVec {
    let coeffs: Vec<Complex64> = (0..=sieve.dim())
        .map(|k| Complex64::new(r.random_range(-1.0..1.0), if k == 0 { 0.0 } else { r.random_range(-1.0..1.0) }))
        .collect();
    let f = CoefVec::new(sieve.clone(), coeffs).unwrap();
    let mass = f.l1_mass();
    let target = r.random_range(0.1..0.95) * sieve.l1_radius();
    let c = f.coeffs.iter().map(|z| z * (target / mass)).collect();
    let mut g = CoefVec::new(sieve.clone(), c).unwrap();
    let cap = sieve.l1_radius();
    if g.coeffs[0].norm() > cap {
        let m0 = g.coeffs[0].norm();
        g.coeffs[0] *= 0.9 * cap / m0;
    }
    g
}

/// Spectral, sine or Gaussian-bump interaction, chosen at random.
pub fn random_interaction(r: &mut ChaCha8Rng) -> InteractionSpec {
    match r.random_range(0..3) {
        0 => {
            let s = random_sieve(r, 4, FrequencyScale::Transform);
            InteractionSpec::spectral(random_coefs(r, &s)).unwrap()
        }
        1 => InteractionSpec::Closed(ClosedForm::sine(r.random_range(-1.0..1.0))),
        _ => InteractionSpec::Closed(ClosedForm::gaussian_bump(r.random_range(-1.0..1.0), r.random_range(0.3..2.0))),
    }
}
