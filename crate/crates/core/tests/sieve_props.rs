use mckean_core::sieve::{
    project_group_l1, schedule_eigen_bound, schedule_rate, CoefVec, FourierSieve, FrequencyScale, L1Scope,
};
use mckean_core::Complex64;
use proptest::prelude::*;

fn scale() -> impl Strategy<Value = FrequencyScale> {
    prop_oneof![Just(FrequencyScale::Periodic), Just(FrequencyScale::Transform)]
}

fn coefs(dim: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), dim + 1).prop_map(|v| {
        v.into_iter().enumerate().map(|(k, (re, im))| Complex64::new(re, if k == 0 { 0.0 } else { im })).collect()
    })
}

fn coef_vec() -> impl Strategy<Value = CoefVec> {
    (1.05..6.0f64, 1usize..8, 0.1..2.0f64, scale()).prop_flat_map(|(a, d, k, s)| {
        coefs(d).prop_map(move |c| CoefVec::new(FourierSieve::new(a, d, k).unwrap().with_scale(s), c).unwrap())
    })
}

proptest! {
    #[test]
    fn evaluation_is_periodic_and_bounded(f in coef_vec(), x in -50.0..50.0f64, j in -3i32..4) {
        let p = f.sieve.period();
        let v = f.eval(x);
        prop_assert!(v.abs() <= f.sup_bound() * (1.0 + 1e-12) + 1e-12);
        let shifted = f.eval(x + j as f64 * p);
        prop_assert!((v - shifted).abs() <= 1e-9 * (1.0 + f.sup_bound()));
    }

    #[test]
    fn eval_matches_basis_expansion(f in coef_vec(), x in -10.0..10.0f64) {
        let a = f.sieve.half_period();
        let direct: Complex64 = f.coeffs.iter().enumerate().map(|(k, c)| c * f.sieve.basis(k, x)).sum();
        // e_k carries (2A)^{-1/2}; the coefficient normalization is A^{-1/2}.
        let v = (direct * (2.0 * a).sqrt() / a.sqrt()).re;
        prop_assert!((v - f.eval(x)).abs() <= 1e-10 * (1.0 + f.sup_bound()));
    }

    #[test]
    fn real_coords_round_trip(f in coef_vec()) {
        let x = f.real_coords();
        prop_assert_eq!(x.len(), 2 * f.sieve.dim() + 1);
        let g = CoefVec::from_real_coords(f.sieve.clone(), &x).unwrap();
        for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
            prop_assert!((a - b).norm() <= 1e-14 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn csv_round_trip(f in coef_vec()) {
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let g = CoefVec::read_csv(&buf[..]).unwrap();
        prop_assert!(g.sieve.same_basis(&f.sieve));
        prop_assert_eq!(g.sieve.dim(), f.sieve.dim());
        for (a, b) in f.coeffs.iter().zip(&g.coeffs) {
            prop_assert!((a - b).norm() <= 1e-15 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(f in coef_vec(), all in any::<bool>()) {
        let scope = if all { L1Scope::All } else { L1Scope::Modes };
        let f = CoefVec { sieve: f.sieve.clone().with_l1_scope(scope), coeffs: f.coeffs };
        let p = f.project_l1();
        let mass = match scope { L1Scope::All => p.l1_mass() + p.coeffs[0].norm(), L1Scope::Modes => p.l1_mass() };
        prop_assert!(mass <= f.sieve.l1_radius() * (1.0 + 1e-12));
        let q = p.project_l1();
        for (a, b) in p.coeffs.iter().zip(&q.coeffs) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
        if scope == L1Scope::Modes {
            prop_assert_eq!(p.coeffs[0], f.coeffs[0]);
        }
    }

    // Re⟨z − P z, w − P z⟩ ≤ 0 for every w in the ball.
    #[test]
    fn projection_variational_inequality(
        z in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..10),
        w in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 10),
        radius in 0.05..4.0f64,
    ) {
        let z: Vec<Complex64> = z.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let mut p = z.clone();
        project_group_l1(&mut p, radius);
        let mut w: Vec<Complex64> = w.into_iter().take(z.len()).map(|(a, b)| Complex64::new(a, b)).collect();
        let wm: f64 = w.iter().map(|c| c.norm()).sum();
        if wm > radius {
            for c in &mut w { *c *= radius / wm; }
        }
        let inner: f64 = z.iter().zip(&p).zip(&w).map(|((z, p), w)| ((z - p).conj() * (w - p)).re).sum();
        let scale: f64 = z.iter().map(|c| c.norm_sqr()).sum::<f64>() + 1.0;
        prop_assert!(inner <= 1e-10 * scale, "inner product {inner}");
    }

    #[test]
    fn schedules_grow_with_n(n in 16.0..1e6f64, zeta in 0.5..2.0f64, t in 0.2..3.0f64) {
        let a = schedule_rate(n, zeta, t, 0.1).unwrap();
        let b = schedule_rate(4.0 * n, zeta, t, 0.1).unwrap();
        prop_assert!(b.half_period > a.half_period && b.dim >= a.dim && a.dim >= 1);
        let c = schedule_eigen_bound(n, 0.7, 0.35).unwrap();
        let d = schedule_eigen_bound(4.0 * n, 0.7, 0.35).unwrap();
        prop_assert!(d.half_period > c.half_period && d.dim >= c.dim);
    }
}

#[test]
fn frequency_scales_differ_by_pi() {
    let p = FourierSieve::new(2.0, 3, 1.0).unwrap();
    let t = p.clone().with_scale(FrequencyScale::Transform);
    assert!((p.omega(2) - std::f64::consts::PI * t.omega(2)).abs() < 1e-15);
    assert!((p.period() - 4.0).abs() < 1e-12);
    assert!((t.period() - 4.0 * std::f64::consts::PI).abs() < 1e-12);
}

#[test]
fn lattice_constants() {
    let s = FourierSieve::new(4.0, 6, 0.5).unwrap();
    assert!((s.l_n() - 6.0 / 8.0).abs() < 1e-15);
    assert!((s.l1_radius() - 1.0).abs() < 1e-15);
    assert!(FourierSieve::new(1.0, 2, 1.0).unwrap().check_class().is_err());
    assert!(FourierSieve::new(2.0, 0, 1.0).unwrap().check_class().is_err());
}
