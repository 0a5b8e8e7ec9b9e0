//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout.
//! `cargo test -p mckean-validation --test acceptance -- 3 7` runs a subset.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::Instant;

use mckean_core::empirics::{assemble_gram, conv_field, empirical_norm_sq, gamma_loss, gamma_prime, phi_norm_sq};
use mckean_core::estimators::{erm_compact, lse, ErmSettings, Truncation};
use mckean_core::linalg::symmetric_eigen;
use mckean_core::oracle::{
    best_approx, check_eigen_bound, psi_matrix, star_cross, star_inner, star_star_cross, star_star_norm_sq, young_bound,
    DensityOracle, Func, LatticeFn, QuadSpec,
};
use mckean_core::sieve::{FourierSieve, FrequencyScale};
use mckean_core::sim::{drift_pairwise, drift_spectral, simulate_particles, ClosedForm, InteractionSpec, SimConfig, SpectralSnapshot};
use mckean_core::stats::{fit_loglog, ks_critical_1pct, ks_normal};
use mckean_core::study::{oracle_for, run_study, EstimatorKind, OracleKind, PhiKind, ScheduleKind, StudyConfig};
use mckean_core::{CMatrix, Complex64};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn crit1_identity() -> Verdict {
    let mut r = common::rng(101);
    let mut worst = 0.0_f64;
    for trial in 0..20 {
        let phi = common::random_interaction(&mut r);
        let sieve = common::random_sieve(&mut r, 6, FrequencyScale::Transform);
        let f = common::random_coefs(&mut r, &sieve);
        let cfg = SimConfig::new(256, 1.0, 1.0, 1.0, 1000 + trial).with_steps(64).with_increments(true);
        let paths = simulate_particles(&cfg, &phi).unwrap();
        let rhs = empirical_norm_sq(&f, &phi, &paths);
        let lhs = gamma_loss(&f, &paths) + gamma_prime(&f, &paths).unwrap() + phi_norm_sq(&phi, &paths);
        worst = worst.max((lhs - rhs).abs() / (1.0 + rhs));
    }
    verdict(worst <= 1e-9, format!("20 triples, worst |gap|/(1+‖f−φ‖²_N) = {worst:.2e} (tol 1e-9)"))
}

/// Gram system by direct pairwise sums over particles.
fn brute_gram(paths: &mckean_core::sim::PathEnsemble, sieve: &FourierSieve) -> (CMatrix, CMatrix, Vec<Complex64>) {
    let n = paths.n_particles();
    let d = sieve.dim();
    let norm = 1.0 / (2.0 * sieve.half_period()).sqrt();
    let mut psi = CMatrix::zeros(d + 1, d + 1);
    let mut pseudo = CMatrix::zeros(d + 1, d + 1);
    let mut z = vec![Complex64::new(0.0, 0.0); d + 1];
    let t = paths.config().horizon;
    let dt = paths.dt();
    for m in 0..paths.n_steps() {
        let xs = paths.snapshot(m);
        let dx = paths.displacement(m);
        for i in 0..n {
            let e: Vec<Complex64> = (0..=d)
                .map(|k| xs.iter().map(|&y| Complex64::cis(sieve.omega(k) * (xs[i] - y)) * norm).sum::<Complex64>() / n as f64)
                .collect();
            for j in 0..=d {
                for k in 0..=d {
                    psi[(j, k)] += e[j].conj() * e[k] * dt;
                    pseudo[(j, k)] += e[j] * e[k] * dt;
                }
                z[j] += e[j].conj() * dx[i];
            }
        }
    }
    let s = 1.0 / (n as f64 * t);
    (psi * Complex64::new(s, 0.0), pseudo * Complex64::new(s, 0.0), z.into_iter().map(|v| v * s).collect())
}

fn crit2_factorization() -> Verdict {
    let mut r = common::rng(202);
    let (mut conv, mut drift, mut gram) = (0.0_f64, 0.0_f64, 0.0_f64);
    for trial in 0..50 {
        let n = r.random_range(8..=64);
        let scale = if trial % 2 == 0 { FrequencyScale::Transform } else { FrequencyScale::Periodic };
        let phi_sieve = common::random_sieve(&mut r, 8, scale);
        let phi = InteractionSpec::spectral(common::random_coefs(&mut r, &phi_sieve)).unwrap();
        let cfg = SimConfig::new(n, 0.5, 1.0, 1.0, 2000 + trial).with_steps(12);
        let paths = simulate_particles(&cfg, &phi).unwrap();
        let sieve = common::random_sieve(&mut r, 8, scale);
        let f = common::random_coefs(&mut r, &sieve);
        let m = r.random_range(0..=paths.n_steps());
        let xs = paths.snapshot(m);
        let spectral: Vec<f64> = conv_field(&f, &paths, m).iter().map(|c| c.re).collect();
        let pairwise: Vec<f64> = xs.iter().map(|&x| xs.iter().map(|&y| f.eval(x - y)).sum::<f64>() / n as f64).collect();
        conv = conv.max(rel_max(&spectral, &pairwise));
        let InteractionSpec::Spectral(c) = &phi else { unreachable!() };
        let snap = SpectralSnapshot::new(&c.sieve, &xs);
        let a: Vec<f64> = xs.iter().map(|&x| drift_spectral(c, &snap, x).unwrap()).collect();
        let b: Vec<f64> = (0..n).map(|i| drift_pairwise(&phi, &xs, i)).collect();
        drift = drift.max(rel_max(&a, &b));
        let g = assemble_gram(&paths, &sieve);
        let (psi, pseudo, z) = brute_gram(&paths, &sieve);
        let flat = |m: &CMatrix| m.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<f64>>();
        let zf = |v: &[Complex64]| v.iter().flat_map(|c| [c.re, c.im]).collect::<Vec<f64>>();
        gram = gram
            .max(rel_max(&flat(&g.psi_n), &flat(&psi)))
            .max(rel_max(&flat(&g.pseudo_n), &flat(&pseudo)))
            .max(rel_max(&zf(&g.z_n), &zf(&z)));
    }
    let worst = conv.max(drift).max(gram);
    verdict(worst <= 1e-10, format!("50 instances: convolution {conv:.1e}, drift {drift:.1e}, Gram {gram:.1e} (tol 1e-10)"))
}

fn crit3_zero_law() -> Verdict {
    let (zeta, sigma, t) = (1.0, 1.0, 1.0);
    let n = 10_000;
    let crit = ks_critical_1pct(n);
    let mut passes = 0;
    let mut stats = Vec::new();
    for seed in 0..10 {
        let paths = simulate_particles(&SimConfig::new(n, t, sigma, zeta, 3000 + seed), &InteractionSpec::zero()).unwrap();
        let d = ks_normal(&paths.snapshot(paths.n_steps()), 0.0, (zeta * zeta + sigma * sigma * t).sqrt());
        passes += (d <= crit) as usize;
        stats.push(format!("{d:.4}"));
    }
    verdict(passes >= 9, format!("{passes}/10 seeds pass (need 9); D = [{}], critical {crit:.4}", stats.join(", ")))
}

fn crit4_rate() -> Verdict {
    let cfg = StudyConfig::default();
    let report = run_study(&cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [EstimatorKind::Erm, EstimatorKind::TruncatedLse] {
        let fit = report.fit_for(kind).unwrap();
        let means: Vec<String> = report.aggregates_for(kind).iter().map(|a| format!("{:.4}", a.mean_err_star)).collect();
        let trunc: Vec<String> = report.aggregates_for(kind).iter().map(|a| format!("{:.2}", a.freq_truncated)).collect();
        let slope = fit.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
        let good = fit.within_band && fit.strictly_decreasing;
        ok &= good;
        parts.push(format!(
            "{}: {} slope {slope:.3} in [0.6, 1.4]: {}, decreasing: {}, mean err_star [{}], truncated [{}]",
            kind.name(),
            if good { "ok" } else { "fails" },
            fit.within_band,
            fit.strictly_decreasing,
            means.join(", "),
            trunc.join(", ")
        ));
    }
    verdict(ok, parts.join("; "))
}

fn crit5_events() -> Verdict {
    let mut cfg = StudyConfig::default();
    cfg.study.replications = 50;
    cfg.study.estimators = vec![EstimatorKind::TruncatedLse];
    cfg.sieve.schedule = ScheduleKind::Fixed;
    cfg.sieve.half_period = 2.0;
    cfg.sieve.dim = 3;
    // η is the largest value for which the population growth condition holds on the whole grid.
    let phi = cfg.interaction().unwrap();
    let oracle = oracle_for(&cfg, &phi).unwrap();
    let n0 = cfg.study.n_grid[0];
    let sieve = cfg.sieve_for(n0, &phi).unwrap();
    let psi = psi_matrix(&oracle, &sieve, cfg.oracle.time_nodes).unwrap();
    let stat = (sieve.l_n() * psi.op_norm_inv).powi(2);
    let nt = n0 as f64 * cfg.sim.horizon;
    let eta_star = nt / (4.0 * nt.ln() * 72.0 * cfg.sim.horizon * stat);
    let eta = eta_star.min(5.0);
    cfg.estimator.eta = eta;
    cfg.estimator.allow_small_eta = eta < 5.0;
    let at5 = Truncation::new(5.0, cfg.sim.horizon).unwrap().cutoff(*cfg.study.n_grid.last().unwrap()).unwrap();
    let report = run_study(&cfg).unwrap();
    let agg = report.aggregates_for(EstimatorKind::TruncatedLse);
    let omega: Vec<f64> = agg.iter().map(|a| a.freq_omega_n).collect();
    let lambda: Vec<f64> = agg.iter().map(|a| a.freq_lambda_n).collect();
    let nondecreasing = omega.windows(2).all(|w| w[1] >= w[0]);
    let last = *omega.last().unwrap();
    let dominated = omega.iter().zip(&lambda).all(|(o, l)| l >= o);
    let inclusion_breaks = report.rows.iter().filter(|r| r.error.is_none() && r.omega_n && !r.lambda_n).count();
    verdict(
        nondecreasing && last >= 0.95 && dominated,
        format!(
            "sieve A=2 D=3, η = {eta:.3e} (L²‖Ψ⁻¹‖² = {stat:.3e}); ω_N freq {omega:?} (nondecreasing: {nondecreasing}, last {last} >= 0.95); \
             Λ_N freq {lambda:?} (>= ω_N: {dominated}, rows in Ω_N \\ Λ_N: {inclusion_breaks}); at η = 5 the cutoff at N = 4096 is {at5:.3}"
        ),
    )
}

fn crit6_psi_consistency() -> Verdict {
    let mut cfg = StudyConfig::default();
    cfg.study.n_grid = vec![256, 1024, 4096];
    cfg.study.replications = 20;
    cfg.study.estimators = vec![EstimatorKind::Lse];
    cfg.phi.kind = PhiKind::Zero;
    cfg.sieve.schedule = ScheduleKind::Fixed;
    cfg.sieve.half_period = 2.0;
    cfg.sieve.dim = 2;
    cfg.oracle.kind = OracleKind::ExactGaussian;
    let report = run_study(&cfg).unwrap();
    let dev: Vec<f64> = report.aggregates_for(EstimatorKind::Lse).iter().map(|a| a.mean_spectral_deviation).collect();
    let ratios: Vec<f64> = dev.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = ratios.len() == 2 && ratios.iter().all(|r| (0.35..=0.65).contains(r));
    verdict(ok, format!("mean ‖Ψ^-1/2 Ψ_N Ψ^-1/2 − I‖ = {dev:.4?}, ratios {ratios:.3?} (need each in [0.35, 0.65])"))
}

fn crit7_lambda_min_bound() -> Verdict {
    let zeta = 1.0_f64;
    let oracle = DensityOracle::gaussian(zeta, 0.0, 1.0).unwrap();
    let g1 = move |_t: f64| 1.0 / (2.0 * std::f64::consts::PI * zeta * zeta).sqrt();
    let g2 = |_t: f64| 1.0;
    let mut lines = Vec::new();
    let mut printed_ok = 0;
    let mut derived_ok = 0;
    let mut periodic_ok = 0;
    for a in [1.0, 2.0, 4.0] {
        for d in [2usize, 4, 8] {
            let run = |scale| {
                let sieve = FourierSieve::new(a, d, 1.0).unwrap().with_scale(scale);
                check_eigen_bound(&oracle, &sieve, 2.0 * zeta * zeta, 2.0 / (zeta * zeta), &g1, &g2, 64).unwrap()
            };
            let rep = run(FrequencyScale::Transform);
            printed_ok += rep.satisfied as usize;
            derived_ok += rep.derived_satisfied as usize;
            periodic_ok += run(FrequencyScale::Periodic).satisfied as usize;
            lines.push(format!("(A={a},D={d}) λ_min {:.2e} vs {:.2e}", rep.lambda_min, rep.bound));
        }
    }
    verdict(
        printed_ok == 9,
        format!(
            "closed-form bound holds on {printed_ok}/9 cells [{}]; periodic frequencies {periodic_ok}/9; re-derived bound {derived_ok}/9",
            lines.join("; ")
        ),
    )
}

fn crit8_best_approx_decay() -> Verdict {
    let mut cfg = StudyConfig::default();
    cfg.phi.kind = PhiKind::Geometric;
    cfg.phi.base_half_period = 4.0;
    cfg.phi.ratio = 0.9;
    cfg.phi.modes = 40;
    let phi = cfg.interaction().unwrap();
    let oracle = DensityOracle::gaussian(cfg.sim.zeta, cfg.sim.sigma, cfg.sim.horizon).unwrap();
    let quad = QuadSpec::default();
    let mut pts = Vec::new();
    for p in 8..=14 {
        let n = 1usize << p;
        let sieve = cfg.sieve_for(n, &phi).unwrap();
        pts.push((n as f64, best_approx(&phi, &oracle, &sieve, &quad).unwrap().error_sq));
    }
    let fit = fit_loglog(&pts).unwrap();
    let errs: Vec<String> = pts.iter().map(|(_, e)| format!("{e:.2e}")).collect();
    verdict(fit.slope <= -0.9, format!("log-log slope {:.3} (need <= -0.9); errors [{}]", fit.slope, errs.join(", ")))
}

fn crit9_erm_lse() -> Verdict {
    let mut r = common::rng(909);
    // Default tol bounds objective suboptimality; coefficient accuracy 1e-6 needs a tighter one.
    let settings = ErmSettings { tol: 1e-13, ..ErmSettings::default() };
    let mut accepted = 0;
    let mut worst = 0.0_f64;
    let mut tries = 0;
    while accepted < 20 && tries < 400 {
        tries += 1;
        let phi = common::random_interaction(&mut r);
        let paths = simulate_particles(&SimConfig::new(256, 1.0, 1.0, 1.0, 9000 + tries), &phi).unwrap();
        let a = r.random_range(1.5..4.0);
        let d = r.random_range(1..=3);
        let sieve = FourierSieve::new(a, d, f64::INFINITY).unwrap().with_scale(FrequencyScale::Transform);
        let gram = assemble_gram(&paths, &sieve);
        let (vals, _) = symmetric_eigen(&gram.real_system().0);
        if vals[0] <= 0.0 || vals.last().unwrap() / vals[0] > 1e4 {
            continue;
        }
        accepted += 1;
        let exact = lse(&gram).unwrap();
        let erm = erm_compact(&gram, &settings).unwrap();
        let scale = exact.coeffs.iter().fold(1.0_f64, |m, c| m.max(c.norm()));
        let diff = exact.coeffs.iter().zip(&erm.coeffs.coeffs).fold(0.0_f64, |m, (a, b)| m.max((a - b).norm()));
        worst = worst.max(diff / scale);
    }
    verdict(accepted == 20 && worst <= 1e-6, format!("{accepted} instances (condition <= 1e4), max coefficient gap {worst:.2e} (tol 1e-6)"))
}

fn crit10_norm_ordering() -> Verdict {
    let mut r = common::rng(1010);
    let oracle = DensityOracle::gaussian(1.0, 1.0, 1.0).unwrap();
    let quad = QuadSpec::default();
    let mut slack_ss = f64::INFINITY;
    let mut slack_young = f64::INFINITY;
    for _ in 0..50 {
        let (h, w) = (r.random_range(-2.0..2.0), r.random_range(0.3..3.0));
        let bump = ClosedForm::gaussian_bump(h, w);
        let f = Func::Closed(&bump);
        let star = star_inner(f, f, &oracle, &quad).unwrap();
        let ss = star_star_norm_sq(f, &oracle, &quad).unwrap();
        let l2 = h * h * w * (std::f64::consts::PI / 2.0).sqrt();
        slack_ss = slack_ss.min(ss - star);
        slack_young = slack_young.min(young_bound(l2, &oracle, quad.time_nodes) - star);
    }
    let mut slack_lattice = f64::INFINITY;
    for _ in 0..50 {
        let sieve = common::random_sieve(&mut r, 8, FrequencyScale::Transform);
        let f = LatticeFn::from_coefs(&common::random_coefs(&mut r, &sieve));
        let table = oracle.table(sieve.step(), 2 * sieve.dim(), 64);
        slack_lattice = slack_lattice.min(star_star_cross(&f, &f, &table).unwrap() - star_cross(&f, &f, &table).unwrap());
    }
    let ok = slack_ss >= -1e-10 && slack_young >= -1e-10 && slack_lattice >= -1e-10;
    verdict(
        ok,
        format!(
            "50 Gaussian bumps: min(‖f‖²_⋆⋆ − ‖f‖²_⋆) = {slack_ss:.2e}, min(Young − ‖f‖²_⋆) = {slack_young:.2e}; \
             50 sieve functions: min(‖f‖²_⋆⋆ − ‖f‖²_⋆) = {slack_lattice:.2e} (need >= -1e-10)"
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "contrast identity", crit1_identity),
        (2, "factorization equivalence", crit2_factorization),
        (3, "zero-interaction law", crit3_zero_law),
        (4, "rate on the growing sieve", crit4_rate),
        (5, "event frequencies", crit5_events),
        (6, "Gram consistency", crit6_psi_consistency),
        (7, "smallest-eigenvalue bound", crit7_lambda_min_bound),
        (8, "best-approximation decay", crit8_best_approx_decay),
        (9, "ERM/LSE coherence", crit9_erm_lse),
        (10, "norm ordering", crit10_norm_ordering),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        ran += 1;
        failed += (!v.passed) as usize;
        println!(
            "{} [{id}] {name}: {} ({:.1} s)",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria pass", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
