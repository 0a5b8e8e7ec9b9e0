//! Seeded convergence sweeps over the sample size.
//!
//! Configuration is TOML with flat sections:
//!
//! ```toml
//! [study]
//! n_grid = [256, 512, 1024, 2048, 4096]
//! replications = 10
//! seed = 7
//! estimators = ["erm", "truncated-lse"]
//!
//! [sim]
//! horizon = 1.0
//! sigma = 1.0
//! zeta = 1.0
//!
//! [phi]
//! kind = "sparse"          # zero | sparse | kuramoto | geometric
//! k_phi = 0.5
//! base_half_period = 2.0
//!
//! [sieve]
//! schedule = "rate"        # rate | eigen-bound | fixed
//! delta = 0.1
//! scale = "transform"
//!
//! [estimator]
//! eta = 5.0
//!
//! [oracle]
//! kind = "auto"            # auto | exact-gaussian | pilot
//!
//! [bands]
//! slope_min = 0.6
//! slope_max = 1.4
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirics::{assemble_gram, GramSystem};
use crate::error::{Error, Result};
use crate::estimators::{erm_compact, event_indicators, truncated_lse, lse, ErmSettings, EstimateResult, Solver, Truncation};
use crate::linalg::HermitianEigen;
use crate::oracle::{best_approx_on_table, psi_from_table, star_cross, star_star_cross, DensityOracle, LatticeFn, TransformTable};
use crate::rng::derive_seed;
use crate::sieve::{schedule_eigen_bound, schedule_rate, CoefVec, FourierSieve, FrequencyScale, L1Scope, Schedule};
use crate::sim::{simulate_particles, InteractionSpec, SimConfig};
use crate::stats::{fit_rate, mean_se, RateFit};

/// Non-finite values (failed rows, empty aggregates) travel through JSON as `null`.
mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Erm,
    Lse,
    TruncatedLse,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Erm => "erm",
            EstimatorKind::Lse => "lse",
            EstimatorKind::TruncatedLse => "truncated-lse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiKind {
    Zero,
    Sparse,
    Kuramoto,
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `A_N = √(2(ζ²+T) log N)`, `D_N ∝ log N`.
    #[serde(alias = "thm24")]
    Rate,
    /// `A_N = a_A √(log N)`, `D_N = ⌈a_D log N⌉`.
    #[serde(alias = "section33")]
    EigenBound,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Auto,
    ExactGaussian,
    Pilot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Record wall-clock time per row (makes the CSV non-reproducible).
    pub timing: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            n_grid: vec![256, 512, 1024, 2048, 4096],
            replications: 10,
            seed: 1,
            estimators: vec![EstimatorKind::Erm, EstimatorKind::TruncatedLse],
            timing: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: f64,
    /// Defaults to `⌈200 T⌉`.
    pub n_steps: Option<usize>,
    pub sigma: f64,
    pub zeta: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { horizon: 1.0, n_steps: None, sigma: 1.0, zeta: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhiSection {
    pub kind: PhiKind,
    pub k_phi: f64,
    /// Half-period of the sieve carrying the spectral interaction.
    pub base_half_period: f64,
    /// Geometric decay ratio.
    pub ratio: f64,
    /// Number of modes of the geometric interaction.
    pub modes: usize,
}

impl Default for PhiSection {
    fn default() -> Self {
        PhiSection { kind: PhiKind::Sparse, k_phi: 0.5, base_half_period: 2.0, ratio: 0.9, modes: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SieveSection {
    pub schedule: ScheduleKind,
    pub delta: f64,
    pub a_a: f64,
    pub a_d: f64,
    pub half_period: f64,
    pub dim: usize,
    pub scale: FrequencyScale,
    pub l1_scope: L1Scope,
    /// Round the half-period up to a multiple of the interaction's base half-period.
    pub commensurate: bool,
}

impl Default for SieveSection {
    fn default() -> Self {
        SieveSection {
            schedule: ScheduleKind::Rate,
            delta: 0.1,
            a_a: 0.5f64.sqrt(),
            a_d: 0.125f64.sqrt(),
            half_period: 2.0,
            dim: 2,
            scale: FrequencyScale::Transform,
            l1_scope: L1Scope::Modes,
            commensurate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub eta: f64,
    pub allow_small_eta: bool,
    pub solver: Solver,
    pub max_iters: usize,
    pub tol: f64,
    /// ℓ1 budget used by ERM; defaults to the interaction's `k_phi` (or 1 for `φ ≡ 0`).
    pub k_phi: Option<f64>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let erm = ErmSettings::default();
        EstimatorSection {
            eta: 5.0,
            allow_small_eta: false,
            solver: erm.solver,
            max_iters: erm.max_iters,
            tol: erm.tol,
            k_phi: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub kind: OracleKind,
    pub pilot_factor: usize,
    pub time_nodes: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { kind: OracleKind::Auto, pilot_factor: 10, time_nodes: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsSection {
    pub slope_min: f64,
    pub slope_max: f64,
}

impl Default for BandsSection {
    fn default() -> Self {
        BandsSection { slope_min: 0.6, slope_max: 1.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub csv: String,
    pub aggregate: String,
    pub json: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { csv: "study.csv".into(), aggregate: "aggregate.csv".into(), json: "summary.json".into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub study: StudySection,
    pub sim: SimSection,
    pub phi: PhiSection,
    pub sieve: SieveSection,
    pub estimator: EstimatorSection,
    pub oracle: OracleSection,
    pub bands: BandsSection,
    pub output: OutputSection,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.study.n_grid;
        if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be nonempty and strictly increasing".into()));
        }
        if g[0] < 2 {
            return Err(Error::Config("n_grid entries must be at least 2".into()));
        }
        if self.study.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.study.estimators.is_empty() {
            return Err(Error::Config("select at least one estimator".into()));
        }
        self.sim_config(g[0], 0).validate()?;
        if self.estimator.allow_small_eta {
            Truncation::with_override(self.estimator.eta, self.sim.horizon)?;
        } else {
            Truncation::new(self.estimator.eta, self.sim.horizon)?;
        }
        self.erm_settings().validate()?;
        if self.oracle.time_nodes < 2 || self.oracle.pilot_factor == 0 {
            return Err(Error::Config("oracle needs time_nodes >= 2 and pilot_factor >= 1".into()));
        }
        if !(self.phi.k_phi >= 0.0) {
            return Err(Error::Config("phi.k_phi must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self, n: usize, seed: u64) -> SimConfig {
        let c = SimConfig::new(n, self.sim.horizon, self.sim.sigma, self.sim.zeta, seed);
        match self.sim.n_steps {
            Some(m) => c.with_steps(m),
            None => c,
        }
    }

    pub fn truncation(&self) -> Result<Truncation> {
        if self.estimator.allow_small_eta {
            Truncation::with_override(self.estimator.eta, self.sim.horizon)
        } else {
            Truncation::new(self.estimator.eta, self.sim.horizon)
        }
    }

    pub fn erm_settings(&self) -> ErmSettings {
        ErmSettings {
            max_iters: self.estimator.max_iters,
            tol: self.estimator.tol,
            solver: self.estimator.solver,
            ..ErmSettings::default()
        }
    }

    fn estimation_k(&self) -> f64 {
        self.estimator.k_phi.unwrap_or(if self.phi.k_phi > 0.0 { self.phi.k_phi } else { 1.0 })
    }

    pub fn schedule(&self, n: usize) -> Result<Schedule> {
        let s = &self.sieve;
        match s.schedule {
            ScheduleKind::Rate => schedule_rate(n as f64, self.sim.zeta, self.sim.horizon, s.delta),
            ScheduleKind::EigenBound => schedule_eigen_bound(n as f64, s.a_a, s.a_d),
            ScheduleKind::Fixed => Ok(Schedule {
                half_period: s.half_period,
                dim: s.dim,
                mode: crate::sieve::ScheduleMode::Fixed,
            }),
        }
    }

    /// Estimation sieve at sample size `n`.
    pub fn sieve_for(&self, n: usize, phi: &InteractionSpec) -> Result<FourierSieve> {
        let sch = self.schedule(n)?;
        let half_period = match phi {
            InteractionSpec::Spectral(c) if self.sieve.commensurate && self.sieve.schedule != ScheduleKind::Fixed => {
                sch.commensurate_half_period(c.sieve.half_period())
            }
            _ => sch.half_period,
        };
        Ok(FourierSieve::new(half_period, sch.dim, self.estimation_k())?
            .with_scale(self.sieve.scale)
            .with_l1_scope(self.sieve.l1_scope))
    }

    pub fn interaction(&self) -> Result<InteractionSpec> {
        phi_library(self.phi.kind, self.phi.k_phi, self.phi.base_half_period, self.sieve.scale, self.phi.ratio, self.phi.modes)
    }
}

/// Interactions used by studies.
///
/// * `Zero`: `φ ≡ 0`.
/// * `Sparse`: three modes on half-period `base`, ℓ1 mass `0.9·√A·K`.
/// * `Kuramoto`: `K·sin(x)`, carried by one mode on half-period 1 (transform) or π (periodic).
/// * `Geometric`: `c_k ∝ r^k`, `k = 1..=modes`, ℓ1 mass `0.9·√A·K`.
pub fn phi_library(kind: PhiKind, k_phi: f64, base: f64, scale: FrequencyScale, ratio: f64, modes: usize) -> Result<InteractionSpec> {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let normalized = |sieve: FourierSieve, raw: Vec<Complex64>| -> Result<InteractionSpec> {
        let mass: f64 = raw.iter().skip(1).map(|z| z.norm()).sum();
        let target = 0.9 * sieve.l1_radius();
        let coeffs = raw.into_iter().map(|z| z * (target / mass)).collect();
        InteractionSpec::spectral(CoefVec::new(sieve, coeffs)?)
    };
    match kind {
        PhiKind::Zero => Ok(InteractionSpec::zero()),
        PhiKind::Sparse => {
            let sieve = FourierSieve::new(base, 3, k_phi)?.with_scale(scale);
            normalized(sieve, vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, -0.6), c(0.3, 0.3)])
        }
        PhiKind::Kuramoto => {
            let a = match scale {
                FrequencyScale::Transform => 1.0,
                FrequencyScale::Periodic => std::f64::consts::PI,
            };
            let sieve = FourierSieve::new(a, 1, k_phi)?.with_scale(scale);
            InteractionSpec::spectral(CoefVec::new(sieve, vec![c(0.0, 0.0), c(0.0, -k_phi * a.sqrt())])?)
        }
        PhiKind::Geometric => {
            if !(ratio > 0.0 && ratio < 1.0) || modes == 0 {
                return Err(Error::Config("geometric interaction needs 0 < ratio < 1 and modes >= 1".into()));
            }
            let sieve = FourierSieve::new(base, modes, k_phi)?.with_scale(scale);
            let raw = (0..=modes).map(|k| if k == 0 { c(0.0, 0.0) } else { c(ratio.powi(k as i32), 0.0) }).collect();
            normalized(sieve, raw)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    #[serde(with = "finite_or_null")]
    pub err_star_sq: f64,
    #[serde(with = "finite_or_null")]
    pub err_starstar_sq: f64,
    #[serde(with = "finite_or_null")]
    pub approx_err_sq: f64,
    pub truncated: bool,
    pub omega_n: bool,
    pub lambda_n: bool,
    #[serde(with = "finite_or_null")]
    pub lambda_min_psin: f64,
    /// `‖Ψ^{-1/2} Ψ_N Ψ^{-1/2} − I‖_op`.
    #[serde(with = "finite_or_null")]
    pub spectral_deviation: f64,
    #[serde(with = "finite_or_null")]
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub estimator: EstimatorKind,
    pub reps: usize,
    #[serde(with = "finite_or_null")]
    pub mean_err_star_sq: f64,
    #[serde(with = "finite_or_null")]
    pub se_err_star_sq: f64,
    /// Mean of `‖φ̂ − φ‖_⋆`.
    #[serde(with = "finite_or_null")]
    pub mean_err_star: f64,
    #[serde(with = "finite_or_null")]
    pub se_err_star: f64,
    #[serde(with = "finite_or_null")]
    pub mean_err_starstar_sq: f64,
    #[serde(with = "finite_or_null")]
    pub approx_err_sq: f64,
    #[serde(with = "finite_or_null")]
    pub freq_truncated: f64,
    #[serde(with = "finite_or_null")]
    pub freq_omega_n: f64,
    #[serde(with = "finite_or_null")]
    pub freq_lambda_n: f64,
    #[serde(with = "finite_or_null")]
    pub mean_lambda_min_psin: f64,
    #[serde(with = "finite_or_null")]
    pub mean_spectral_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub estimator: EstimatorKind,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub within_band: bool,
    pub strictly_decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub fits: Vec<FitSummary>,
    pub failed_rows: usize,
}

/// Per-`N` oracle quantities shared by all replications.
struct Level {
    n: usize,
    sieve: FourierSieve,
    psi: crate::CMatrix,
    table: TransformTable,
    phi_lattice: LatticeFn,
    approx_err_sq: f64,
}

fn build_level(cfg: &StudyConfig, n: usize, phi: &InteractionSpec, oracle: &DensityOracle) -> Result<Level> {
    let sieve = cfg.sieve_for(n, phi)?;
    let phi_lattice = match phi {
        InteractionSpec::Spectral(c) => LatticeFn::from_coefs(c).on_step(sieve.step())?,
        _ if phi.is_zero() => LatticeFn { step: sieve.step(), amps: vec![] },
        _ => return Err(Error::Config("studies need a spectral or zero interaction".into())),
    };
    let m_max = 2 * phi_lattice.degree().max(sieve.dim());
    let table = oracle.table(sieve.step(), m_max, cfg.oracle.time_nodes);
    let psi = psi_from_table(&table, &sieve)?;
    let approx_err_sq = best_approx_on_table(&phi_lattice, &table, &sieve)?.error_sq;
    Ok(Level { n, sieve, psi: psi.matrix, table, phi_lattice, approx_err_sq })
}

/// Density oracle used to score a study: exact Gaussian for `φ ≡ 0`, otherwise a pilot
/// ensemble of `pilot_factor × max N` particles shared by every replication.
pub fn oracle_for(cfg: &StudyConfig, phi: &InteractionSpec) -> Result<DensityOracle> {
    let kind = match cfg.oracle.kind {
        OracleKind::Auto if phi.is_zero() => OracleKind::ExactGaussian,
        OracleKind::Auto => OracleKind::Pilot,
        k => k,
    };
    match kind {
        OracleKind::ExactGaussian => {
            if !phi.is_zero() {
                log::warn!("exact-gaussian oracle requested for a nonzero interaction");
            }
            DensityOracle::gaussian(cfg.sim.zeta, cfg.sim.sigma, cfg.sim.horizon)
        }
        _ => {
            let n_max = *cfg.study.n_grid.last().expect("validated nonempty");
            let seed = derive_seed(cfg.study.seed, u64::MAX, 0);
            let pilot = simulate_particles(&cfg.sim_config(cfg.oracle.pilot_factor * n_max, seed), phi)?;
            Ok(DensityOracle::pilot(Arc::new(pilot)))
        }
    }
}

fn estimate(kind: EstimatorKind, gram: &GramSystem, cfg: &StudyConfig, rule: &Truncation) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Erm => erm_compact(gram, &cfg.erm_settings()),
        EstimatorKind::TruncatedLse => truncated_lse(gram, rule),
        EstimatorKind::Lse => {
            let coeffs = lse(gram)?;
            Ok(EstimateResult { coeffs, truncated: false, diagnostics: Default::default() })
        }
    }
}

fn run_rep(cfg: &StudyConfig, level: &Level, rep: usize, phi: &InteractionSpec, rule: &Truncation) -> Vec<Row> {
    let seed = derive_seed(cfg.study.seed, level.n as u64, rep as u64);
    let blank = |kind: EstimatorKind, error: String| Row {
        n: level.n,
        rep,
        seed,
        estimator: kind,
        err_star_sq: f64::NAN,
        err_starstar_sq: f64::NAN,
        approx_err_sq: level.approx_err_sq,
        truncated: false,
        omega_n: false,
        lambda_n: false,
        lambda_min_psin: f64::NAN,
        spectral_deviation: f64::NAN,
        wall_ms: 0.0,
        error: Some(error),
    };
    let paths = match simulate_particles(&cfg.sim_config(level.n, seed), phi) {
        Ok(p) => p,
        Err(e) => return cfg.study.estimators.iter().map(|&k| blank(k, e.to_string())).collect(),
    };
    let gram = assemble_gram(&paths, &level.sieve);
    drop(paths);
    let events = match event_indicators(&gram, &level.psi, rule) {
        Ok(e) => e,
        Err(e) => return cfg.study.estimators.iter().map(|&k| blank(k, e.to_string())).collect(),
    };
    let lambda_min_psin = HermitianEigen::new(&gram.psi_n).min();
    let deviation = events.spectrum.iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
    cfg.study
        .estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let result = estimate(kind, &gram, cfg, rule).and_then(|est| {
                let diff = LatticeFn::from_coefs(&est.coeffs).combine(1.0, &level.phi_lattice, -1.0)?;
                let s = star_cross(&diff, &diff, &level.table)?.max(0.0);
                let ss = star_star_cross(&diff, &diff, &level.table)?.max(0.0);
                Ok((est.truncated, s, ss))
            });
            let wall_ms = if cfg.study.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            match result {
                Ok((truncated, s, ss)) => Row {
                    n: level.n,
                    rep,
                    seed,
                    estimator: kind,
                    err_star_sq: s,
                    err_starstar_sq: ss,
                    approx_err_sq: level.approx_err_sq,
                    truncated,
                    omega_n: events.omega_n,
                    lambda_n: events.lambda_n,
                    lambda_min_psin,
                    spectral_deviation: deviation,
                    wall_ms,
                    error: None,
                },
                Err(e) => Row { omega_n: events.omega_n, lambda_n: events.lambda_n, lambda_min_psin, spectral_deviation: deviation, ..blank(kind, e.to_string()) },
            }
        })
        .collect()
}

/// Runs the sweep: for each `(N, rep)` simulate, assemble, estimate and score against the oracle.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let phi = cfg.interaction()?;
    let rule = cfg.truncation()?;
    let oracle = oracle_for(cfg, &phi)?;
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.study.n_grid {
        match build_level(cfg, n, &phi, &oracle) {
            Ok(l) => levels.push(l),
            Err(e) => {
                log::warn!("N = {n}: oracle setup failed: {e}");
                for rep in 0..cfg.study.replications {
                    for &k in &cfg.study.estimators {
                        rows.push(Row {
                            n,
                            rep,
                            seed: derive_seed(cfg.study.seed, n as u64, rep as u64),
                            estimator: k,
                            err_star_sq: f64::NAN,
                            err_starstar_sq: f64::NAN,
                            approx_err_sq: f64::NAN,
                            truncated: false,
                            omega_n: false,
                            lambda_n: false,
                            lambda_min_psin: f64::NAN,
                            spectral_deviation: f64::NAN,
                            wall_ms: 0.0,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
    }
    let jobs: Vec<(usize, usize)> =
        (0..levels.len()).flat_map(|l| (0..cfg.study.replications).map(move |r| (l, r))).collect();
    let computed: Vec<Vec<Row>> = jobs.par_iter().map(|&(l, r)| run_rep(cfg, &levels[l], r, &phi, &rule)).collect();
    rows.extend(computed.into_iter().flatten());
    rows.sort_by_key(|r| (r.n, r.rep, r.estimator));
    let failed_rows = rows.iter().filter(|r| r.error.is_some()).count();
    if 2 * failed_rows > rows.len() {
        let first = rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Data(format!("{failed_rows} of {} study rows failed; first error: {first}", rows.len())));
    }
    let aggregates = aggregate(&rows);
    let fits = cfg
        .study
        .estimators
        .iter()
        .map(|&k| {
            let agg: Vec<&Aggregate> = aggregates.iter().filter(|a| a.estimator == k).collect();
            let pts: Vec<(f64, f64)> = agg.iter().map(|a| (a.n as f64, a.mean_err_star)).collect();
            let strictly_decreasing = agg.len() == cfg.study.n_grid.len() && agg.windows(2).all(|w| w[1].mean_err_star < w[0].mean_err_star);
            match fit_rate(&pts) {
                Ok(fit) => FitSummary {
                    estimator: k,
                    within_band: fit.slope >= cfg.bands.slope_min && fit.slope <= cfg.bands.slope_max,
                    fit: Some(fit),
                    fit_error: None,
                    strictly_decreasing,
                },
                Err(e) => FitSummary { estimator: k, fit: None, fit_error: Some(e.to_string()), within_band: false, strictly_decreasing },
            }
        })
        .collect();
    Ok(StudyReport { config: cfg.clone(), rows, aggregates, fits, failed_rows })
}

fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, EstimatorKind), Vec<&Row>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        groups.entry((r.n, r.estimator)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((n, estimator), rs)| {
            let col = |f: &dyn Fn(&Row) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let freq = |f: &dyn Fn(&Row) -> bool| rs.iter().filter(|r| f(r)).count() as f64 / rs.len() as f64;
            let (m2, s2) = mean_se(&col(&|r| r.err_star_sq));
            let (m1, s1) = mean_se(&col(&|r| r.err_star_sq.sqrt()));
            Aggregate {
                n,
                estimator,
                reps: rs.len(),
                mean_err_star_sq: m2,
                se_err_star_sq: s2,
                mean_err_star: m1,
                se_err_star: s1,
                mean_err_starstar_sq: mean_se(&col(&|r| r.err_starstar_sq)).0,
                approx_err_sq: rs[0].approx_err_sq,
                freq_truncated: freq(&|r| r.truncated),
                freq_omega_n: freq(&|r| r.omega_n),
                freq_lambda_n: freq(&|r| r.lambda_n),
                mean_lambda_min_psin: mean_se(&col(&|r| r.lambda_min_psin)).0,
                mean_spectral_deviation: mean_se(&col(&|r| r.spectral_deviation)).0,
            }
        })
        .collect()
}

pub const CSV_HEADER: &str =
    "N,rep,seed,estimator,err_star_sq,err_starstar_sq,approx_err_sq,truncated,omega_n,lambda_n,lambda_min_psin,wall_ms";

pub const AGGREGATE_HEADER: &str = "N,estimator,reps,mean_err_star_sq,se_err_star_sq,mean_err_star,se_err_star,mean_err_starstar_sq,approx_err_sq,freq_truncated,freq_omega_n,freq_lambda_n,mean_lambda_min_psin,mean_spectral_deviation";

impl StudyReport {
    /// Per-row CSV; failed rows carry `NaN` metrics.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{:e},{:e},{:e},{},{},{},{:e},{}",
                r.n,
                r.rep,
                r.seed,
                r.estimator.name(),
                r.err_star_sq,
                r.err_starstar_sq,
                r.approx_err_sq,
                r.truncated as u8,
                r.omega_n as u8,
                r.lambda_n as u8,
                r.lambda_min_psin,
                r.wall_ms
            )
            .unwrap();
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{AGGREGATE_HEADER}").unwrap();
        for a in &self.aggregates {
            writeln!(
                s,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{:e},{:e}",
                a.n,
                a.estimator.name(),
                a.reps,
                a.mean_err_star_sq,
                a.se_err_star_sq,
                a.mean_err_star,
                a.se_err_star,
                a.mean_err_starstar_sq,
                a.approx_err_sq,
                a.freq_truncated,
                a.freq_omega_n,
                a.freq_lambda_n,
                a.mean_lambda_min_psin,
                a.mean_spectral_deviation
            )
            .unwrap();
        }
        s
    }

    /// Summary with configuration, aggregates and fitted slopes.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "aggregates": self.aggregates,
            "fits": self.fits,
            "failed_rows": self.failed_rows,
            "rows": self.rows.len(),
        })
    }

    pub fn aggregates_for(&self, kind: EstimatorKind) -> Vec<&Aggregate> {
        self.aggregates.iter().filter(|a| a.estimator == kind).collect()
    }

    pub fn fit_for(&self, kind: EstimatorKind) -> Option<&FitSummary> {
        self.fits.iter().find(|f| f.estimator == kind)
    }
}
