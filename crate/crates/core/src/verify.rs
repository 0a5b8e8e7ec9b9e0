//! Self-check suite: algebraic identities and cross-route equivalences on
//! small seeded instances.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::empirics::{assemble_gram, empirical_norm_sq, gamma_loss, gamma_prime, phi_norm_sq};
use crate::error::Result;
use crate::estimators::{erm_compact, ErmSettings};
use crate::linalg::HermitianEigen;
use crate::oracle::{
    best_approx, gaussian_envelopes, psi_matrix, star_cross, star_inner, star_star_cross, DensityOracle, EnvelopeParams,
    Func, LatticeFn, QuadSpec,
};
use crate::sieve::{CoefVec, FourierSieve, FrequencyScale};
use crate::sim::{drift_pairwise, drift_spectral, simulate_particles, InteractionSpec, SimConfig, SpectralSnapshot};
use crate::study::{phi_library, PhiKind};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn outcome(name: &str, check: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    match check() {
        Ok((passed, detail)) => CheckOutcome { name: name.into(), passed, detail },
        Err(e) => CheckOutcome { name: name.into(), passed: false, detail: format!("error: {e}") },
    }
}

fn test_function(sieve: &FourierSieve, seed: u64) -> Result<CoefVec> {
    let mut s = seed;
    let mut next = || {
        s = crate::rng::mix(s.wrapping_add(0x9e37_79b9_7f4a_7c15));
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let coeffs: Vec<Complex64> = (0..=sieve.dim()).map(|k| Complex64::new(next(), if k == 0 { 0.0 } else { next() })).collect();
    let f = CoefVec::new(sieve.clone(), coeffs)?;
    Ok(f.project_l1())
}

/// Runs every check; the suite passes iff every outcome passes.
pub fn run_verification(seed: u64) -> Vec<CheckOutcome> {
    let phi = phi_library(PhiKind::Sparse, 0.5, 2.0, FrequencyScale::Transform, 0.9, 40).expect("library interaction");
    let cfg = SimConfig::new(48, 0.5, 1.0, 1.0, seed).with_steps(40).with_increments(true);
    let paths = match simulate_particles(&cfg, &phi) {
        Ok(p) => Arc::new(p),
        Err(e) => return vec![CheckOutcome { name: "simulate".into(), passed: false, detail: e.to_string() }],
    };
    let sieve = FourierSieve::new(4.0, 4, 0.5).expect("sieve").with_scale(FrequencyScale::Transform);
    let f = test_function(&sieve, seed).expect("test function");
    let mut out = Vec::new();

    out.push(outcome("contrast identity", || {
        let lhs = gamma_loss(&f, &paths) + gamma_prime(&f, &paths)? + phi_norm_sq(&phi, &paths);
        let rhs = empirical_norm_sq(&f, &phi, &paths);
        let r = rel(lhs, rhs);
        Ok((r < 1e-9, format!("relative gap {r:e}")))
    }));

    let gram = assemble_gram(&paths, &sieve);
    out.push(outcome("quadratic form", || {
        let r = rel(gram.objective(&f), gamma_loss(&f, &paths));
        Ok((r < 1e-9, format!("relative gap {r:e}")))
    }));

    out.push(outcome("gram hermitian psd", || {
        let asym = (&gram.psi_n - gram.psi_n.adjoint()).norm();
        let eig = HermitianEigen::new(&gram.psi_n);
        let tol = 1e-12 * eig.max();
        Ok((asym <= 1e-14 * gram.psi_n.norm() && eig.min() >= -tol, format!("asymmetry {asym:e}, min eigenvalue {:e}", eig.min())))
    }));

    out.push(outcome("drift equivalence", || {
        let InteractionSpec::Spectral(c) = &phi else { unreachable!() };
        let xs = paths.snapshot(paths.n_steps() / 2);
        let snap = SpectralSnapshot::new(&c.sieve, &xs);
        let mut worst = 0.0_f64;
        for i in 0..xs.len() {
            let a = drift_spectral(c, &snap, xs[i])?;
            let b = drift_pairwise(&phi, &xs, i);
            worst = worst.max((a - b).abs());
        }
        Ok((worst < 1e-12, format!("max drift difference {worst:e}")))
    }));

    out.push(outcome("thread determinism", || {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool").install(|| simulate_particles(&cfg, &phi))
        };
        let (a, b) = (run(1)?, run(4)?);
        let same = a.positions().iter().zip(b.positions()).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok((same, format!("{} positions compared", a.positions().len())))
    }));

    let oracle = DensityOracle::gaussian(1.0, 1.0, 0.5).expect("oracle");
    let quad = QuadSpec { time_nodes: 16, ..QuadSpec::default() };
    let g = test_function(&sieve, seed ^ 1).expect("test function");

    out.push(outcome("lattice vs quadrature", || {
        let table = oracle.table(sieve.step(), 2 * sieve.dim(), quad.time_nodes);
        let a = star_cross(&LatticeFn::from_coefs(&f), &LatticeFn::from_coefs(&g), &table)?;
        let b = star_inner(Func::Coef(&f), Func::Coef(&g), &oracle, &quad)?;
        let scale = star_inner(Func::Coef(&f), Func::Coef(&f), &oracle, &quad)?;
        let gap = (a - b).abs() / scale.max(1e-300);
        Ok((gap < 1e-8, format!("lattice {a:e}, quadrature {b:e}")))
    }));

    out.push(outcome("gram vs bilinear form", || {
        let psi = psi_matrix(&oracle, &sieve, quad.time_nodes)?;
        let (gm, _) = crate::empirics::real_form(&psi.matrix, &psi.pseudo, &vec![Complex64::new(0.0, 0.0); sieve.dim() + 1]);
        let x = nalgebra::DVector::from_vec(f.real_coords());
        let q = (x.transpose() * &gm * &x)[(0, 0)];
        let table = oracle.table(sieve.step(), 2 * sieve.dim(), quad.time_nodes);
        let l = LatticeFn::from_coefs(&f);
        let s = star_cross(&l, &l, &table)?;
        let r = rel(q, s);
        Ok((r < 1e-10 && psi.lambda_min() > 0.0, format!("relative gap {r:e}, lambda_min {:e}", psi.lambda_min())))
    }));

    out.push(outcome("projection orthogonality", || {
        let coarse = FourierSieve::new(4.0, 2, 0.5)?.with_scale(FrequencyScale::Transform);
        let b = best_approx(&phi, &oracle, &coarse, &quad)?;
        let ok = b.orthogonality <= 1e-10 * b.phi_norm_sq.max(1e-300) && b.error_sq <= b.phi_norm_sq;
        Ok((ok, format!("max residual {:e}, error {:e}", b.orthogonality, b.error_sq)))
    }));

    out.push(outcome("norm ordering", || {
        let table = oracle.table(sieve.step(), 2 * sieve.dim(), quad.time_nodes);
        let l = LatticeFn::from_coefs(&f);
        let (s, ss) = (star_cross(&l, &l, &table)?, star_star_cross(&l, &l, &table)?);
        Ok((s <= ss * (1.0 + 1e-12), format!("star {s:e} <= star-star {ss:e}")))
    }));

    out.push(outcome("gaussian envelopes", || {
        let p = EnvelopeParams { zeta: 1.0, sigma: 1.0, k_phi: 0.0, horizon: 0.5 };
        let mut ok = true;
        for i in 0..=10 {
            let t = 0.05 * i as f64;
            for j in -20..=20 {
                let x = 0.4 * j as f64;
                let e = gaussian_envelopes(t, x, x, &p);
                let d = oracle.density(t, x);
                ok &= e.density_lower <= d && d <= e.density_upper * (1.0 + 1e-12);
                ok &= oracle.fourier(t, x).norm() <= e.fourier_upper * (1.0 + 1e-12);
            }
        }
        Ok((ok, "grid of 451 points".into()))
    }));

    out.push(outcome("erm feasibility", || {
        let est = erm_compact(&gram, &ErmSettings::default())?;
        let ok = est.coeffs.is_feasible(1e-9) && est.diagnostics.converged;
        Ok((ok, format!("l1 mass {:e}, radius {:e}", est.coeffs.l1_mass(), sieve.l1_radius())))
    }));

    out
}
