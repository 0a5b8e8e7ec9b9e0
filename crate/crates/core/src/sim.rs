//! Euler–Maruyama simulation of the particle system
//! `dX^i = (φ ⋆ μ^N_t)(X^i) dt + σ dW^i`, `X^i_0 ~ N(0, ζ²)`, and of i.i.d.
//! mean-field surrogates driven by a frozen pilot ensemble.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sieve::{CoefVec, FourierSieve};

const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub sigma: f64,
    pub zeta: f64,
    pub seed: u64,
    pub store_increments: bool,
}

impl SimConfig {
    /// Configuration with the default grid `M = ⌈200 T⌉`.
    pub fn new(n_particles: usize, horizon: f64, sigma: f64, zeta: f64, seed: u64) -> Self {
        let n_steps = (200.0 * horizon).ceil().max(1.0) as usize;
        SimConfig { n_particles, horizon, n_steps, sigma, zeta, seed, store_increments: false }
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    pub fn with_increments(mut self, store: bool) -> Self {
        self.store_increments = store;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::Config("N must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("M must be positive".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config(format!("T must be positive, got {}", self.horizon)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return Err(Error::Config(format!("zeta must be positive, got {}", self.zeta)));
        }
        Ok(())
    }

    fn same_grid(&self, other: &SimConfig) -> bool {
        self.n_steps == other.n_steps && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }
}

pub type KernelFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A bounded Lipschitz interaction given as a Rust closure.
#[derive(Clone)]
pub struct ClosedForm {
    name: String,
    f: KernelFn,
    k_phi: f64,
    l_phi: f64,
}

impl fmt::Debug for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedForm")
            .field("name", &self.name)
            .field("k_phi", &self.k_phi)
            .field("l_phi", &self.l_phi)
            .finish()
    }
}

impl ClosedForm {
    /// Checks the declared sup bound on a dense grid over `[-50, 50]`.
    pub fn new(name: impl Into<String>, f: KernelFn, k_phi: f64, l_phi: f64) -> Result<Self> {
        let name = name.into();
        if !(k_phi >= 0.0 && l_phi >= 0.0) {
            return Err(Error::Config(format!("{name}: K_phi and L_phi must be nonnegative")));
        }
        let n = 20_001;
        for j in 0..n {
            let x = -50.0 + 100.0 * j as f64 / (n - 1) as f64;
            let v = f(x);
            if !v.is_finite() || v.abs() > k_phi * (1.0 + 1e-12) {
                return Err(Error::Config(format!("{name}: |phi({x})| = {} exceeds declared K_phi = {k_phi}", v.abs())));
            }
        }
        Ok(ClosedForm { name, f, k_phi, l_phi })
    }

    pub fn zero() -> Self {
        ClosedForm { name: "zero".into(), f: Arc::new(|_| 0.0), k_phi: 0.0, l_phi: 0.0 }
    }

    /// `a·sin(x)`.
    pub fn sine(amplitude: f64) -> Self {
        let a = amplitude;
        ClosedForm { name: format!("{a}*sin"), f: Arc::new(move |x| a * x.sin()), k_phi: a.abs(), l_phi: a.abs() }
    }

    /// `h·exp(−x²/w²)`.
    pub fn gaussian_bump(height: f64, width: f64) -> Self {
        let (h, w) = (height, width);
        ClosedForm {
            name: format!("{h}*exp(-x^2/{w}^2)"),
            f: Arc::new(move |x| h * (-(x / w) * (x / w)).exp()),
            k_phi: h.abs(),
            l_phi: h.abs() * (2.0f64 / std::f64::consts::E).sqrt() / w,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn k_phi(&self) -> f64 {
        self.k_phi
    }

    pub fn l_phi(&self) -> f64 {
        self.l_phi
    }
}

#[derive(Clone, Debug)]
pub enum InteractionSpec {
    Closed(ClosedForm),
    Spectral(CoefVec),
}

impl InteractionSpec {
    pub fn zero() -> Self {
        InteractionSpec::Closed(ClosedForm::zero())
    }

    /// Spectral interaction; the coefficients must satisfy the sieve's ℓ1 constraint.
    pub fn spectral(coeffs: CoefVec) -> Result<Self> {
        if !coeffs.is_feasible(1e-12) {
            return Err(Error::Config(format!(
                "spectral interaction violates the l1 budget: mass {} > {}",
                coeffs.l1_mass(),
                coeffs.sieve.l1_radius()
            )));
        }
        Ok(InteractionSpec::Spectral(coeffs))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InteractionSpec::Closed(c) => c.eval(x),
            InteractionSpec::Spectral(c) => c.eval(x),
        }
    }

    pub fn k_phi(&self) -> f64 {
        match self {
            InteractionSpec::Closed(c) => c.k_phi(),
            InteractionSpec::Spectral(c) => c.sup_bound(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            InteractionSpec::Closed(c) => c.k_phi() == 0.0,
            InteractionSpec::Spectral(c) => c.is_zero(),
        }
    }
}

/// `(1/N) Σ_j φ(x_i − x_j)`, self-term included.
pub fn drift_pairwise(phi: &InteractionSpec, positions: &[f64], i: usize) -> f64 {
    drift_against(phi, positions[i], positions)
}

fn drift_against(phi: &InteractionSpec, x: f64, reference: &[f64]) -> f64 {
    let s: f64 = reference.iter().map(|y| phi.eval(x - y)).sum();
    s / reference.len() as f64
}

/// `(1/N) Σ_j w_j exp(−i n·step·x_j)` for `n = 0..=n_max` (`w_j = 1` when absent).
/// Reduction order is fixed, so the result does not depend on the thread pool.
pub fn exp_moments(step: f64, n_max: usize, xs: &[f64], weights: Option<&[f64]>) -> Vec<Complex64> {
    let n = xs.len();
    let partials: Vec<Vec<Complex64>> = xs
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n_max + 1];
            for (j, &x) in chunk.iter().enumerate() {
                let w = weights.map_or(1.0, |w| w[c * CHUNK + j]);
                let z = Complex64::cis(-step * x);
                let mut p = Complex64::new(w, 0.0);
                for a in acc.iter_mut() {
                    *a += p;
                    p *= z;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Complex64::new(0.0, 0.0); n_max + 1];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    let inv = 1.0 / n as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    total
}

/// `S_k = (1/N) Σ_j exp(−i ω_k X_j)`, `k = 0..=D`, for one time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSnapshot {
    pub sieve: FourierSieve,
    pub sums: Vec<Complex64>,
}

impl SpectralSnapshot {
    pub fn new(sieve: &FourierSieve, positions: &[f64]) -> Self {
        SpectralSnapshot { sieve: sieve.clone(), sums: exp_moments(sieve.step(), sieve.dim(), positions, None) }
    }

    /// The analytic convolution field `A^{-1/2} Σ_k c_k e^{iω_k x} S_k` at `x`.
    fn field(&self, coeffs: &CoefVec, x: f64) -> Complex64 {
        let z = Complex64::cis(self.sieve.step() * x);
        let mut p = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, s) in coeffs.coeffs.iter().zip(&self.sums) {
            acc += c * p * s;
            p *= z;
        }
        acc / self.sieve.half_period().sqrt()
    }
}

fn check_snapshot(coeffs: &CoefVec, snapshot: &SpectralSnapshot) -> Result<()> {
    if !coeffs.sieve.same_basis(&snapshot.sieve) || coeffs.sieve.dim() > snapshot.sieve.dim() {
        return Err(Error::Config("coefficients and snapshot are on different sieves".into()));
    }
    Ok(())
}

/// `(f ⋆ μ^N)(x)` from precomputed snapshot sums, in `O(D)`.
pub fn drift_spectral(coeffs: &CoefVec, snapshot: &SpectralSnapshot, x: f64) -> Result<f64> {
    check_snapshot(coeffs, snapshot)?;
    Ok(snapshot.field(coeffs, x).re)
}

/// Complex field `A^{-1/2} Σ_k c_k e^{iω_k x} S_k` whose real part is the convolution.
pub fn field_spectral(coeffs: &CoefVec, snapshot: &SpectralSnapshot, x: f64) -> Result<Complex64> {
    check_snapshot(coeffs, snapshot)?;
    Ok(snapshot.field(coeffs, x))
}

/// Drift of every point in `xs` against the empirical measure of `reference`.
fn drift_field(phi: &InteractionSpec, xs: &[f64], reference: &[f64]) -> Vec<f64> {
    if phi.is_zero() {
        return vec![0.0; xs.len()];
    }
    match phi {
        InteractionSpec::Spectral(c) => {
            let snap = SpectralSnapshot::new(&c.sieve, reference);
            xs.par_iter().map(|&x| snap.field(c, x).re).collect()
        }
        InteractionSpec::Closed(_) => xs.par_iter().map(|&x| drift_against(phi, x, reference)).collect(),
    }
}

/// Particle trajectories on a uniform grid, stored particle-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    positions: Vec<f64>,
    increments: Option<Vec<f64>>,
    config: SimConfig,
}

impl PathEnsemble {
    /// Assembles an ensemble from raw arrays (`N×(M+1)` positions, `N×M` increments).
    pub fn from_parts(config: SimConfig, positions: Vec<f64>, increments: Option<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        let (n, m) = (config.n_particles, config.n_steps);
        if positions.len() != n * (m + 1) {
            return Err(Error::Format(format!("expected {} positions, got {}", n * (m + 1), positions.len())));
        }
        if let Some(inc) = &increments {
            if inc.len() != n * m {
                return Err(Error::Format(format!("expected {} increments, got {}", n * m, inc.len())));
            }
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite position".into()));
        }
        let dt = config.dt();
        let times = (0..=m).map(|k| k as f64 * dt).collect();
        let mut config = config;
        config.store_increments = increments.is_some();
        Ok(PathEnsemble { times, positions, increments, config })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_particles(&self) -> usize {
        self.config.n_particles
    }

    pub fn n_steps(&self) -> usize {
        self.config.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn increments(&self) -> Option<&[f64]> {
        self.increments.as_deref()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.n_steps() + 1;
        &self.positions[i * w..(i + 1) * w]
    }

    pub fn position(&self, i: usize, m: usize) -> f64 {
        self.positions[i * (self.n_steps() + 1) + m]
    }

    pub fn increment(&self, i: usize, m: usize) -> Option<f64> {
        self.increments.as_ref().map(|inc| inc[i * self.n_steps() + m])
    }

    /// All particle positions at grid index `m`.
    pub fn snapshot(&self, m: usize) -> Vec<f64> {
        let w = self.n_steps() + 1;
        (0..self.n_particles()).map(|i| self.positions[i * w + m]).collect()
    }

    /// `ΔX^i_m = X^i_{m+1} − X^i_m` for all particles.
    pub fn displacement(&self, m: usize) -> Vec<f64> {
        let w = self.n_steps() + 1;
        (0..self.n_particles()).map(|i| self.positions[i * w + m + 1] - self.positions[i * w + m]).collect()
    }

    /// Brownian increments at step `m`, if stored.
    pub fn increment_slice(&self, m: usize) -> Option<Vec<f64>> {
        let inc = self.increments.as_ref()?;
        let w = self.n_steps();
        Some((0..self.n_particles()).map(|i| inc[i * w + m]).collect())
    }
}

struct Engine {
    config: SimConfig,
    rngs: Vec<ChaCha8Rng>,
    cur: Vec<f64>,
    dw: Vec<f64>,
    positions: Vec<f64>,
    increments: Option<Vec<f64>>,
}

impl Engine {
    fn start(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let (n, m) = (config.n_particles, config.n_steps);
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| rng::stream(config.seed, i as u64)).collect();
        let cur: Vec<f64> = rngs
            .par_iter_mut()
            .map(|r| {
                let z: f64 = StandardNormal.sample(r);
                config.zeta * z
            })
            .collect();
        let mut positions = vec![0.0; n * (m + 1)];
        positions.par_chunks_mut(m + 1).zip(cur.par_iter()).for_each(|(row, x)| row[0] = *x);
        let increments = config.store_increments.then(|| vec![0.0; n * m]);
        Ok(Engine { config: config.clone(), rngs, cur, dw: vec![0.0; n], positions, increments })
    }

    fn advance(&mut self, m: usize, drift: &[f64]) -> Result<()> {
        let dt = self.config.dt();
        let sqrt_dt = dt.sqrt();
        let sigma = self.config.sigma;
        self.dw.par_iter_mut().zip(self.rngs.par_iter_mut()).for_each(|(d, r)| {
            let z: f64 = StandardNormal.sample(r);
            *d = sqrt_dt * z;
        });
        self.cur
            .par_iter_mut()
            .zip(drift.par_iter())
            .zip(self.dw.par_iter())
            .for_each(|((x, b), w)| *x = *x + b * dt + sigma * w);
        if let Some(bad) = self.cur.iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: m + 1, particle: bad });
        }
        let w = self.config.n_steps + 1;
        self.positions.par_chunks_mut(w).zip(self.cur.par_iter()).for_each(|(row, x)| row[m + 1] = *x);
        if let Some(inc) = &mut self.increments {
            let w = self.config.n_steps;
            inc.par_chunks_mut(w).zip(self.dw.par_iter()).for_each(|(row, d)| row[m] = *d);
        }
        Ok(())
    }

    fn finish(self) -> Result<PathEnsemble> {
        PathEnsemble::from_parts(self.config, self.positions, self.increments)
    }
}

/// Simulates the interacting system. Spectral interactions use the `O(N·D)`
/// factorized drift, closed forms the `O(N²)` pairwise sum.
pub fn simulate_particles(config: &SimConfig, phi: &InteractionSpec) -> Result<PathEnsemble> {
    let mut eng = Engine::start(config)?;
    for m in 0..config.n_steps {
        let drift = drift_field(phi, &eng.cur, &eng.cur);
        eng.advance(m, &drift)?;
    }
    eng.finish()
}

/// Simulates `N` independent paths whose drift at `t_m` is `φ` convolved with
/// the pilot's empirical measure at `t_m`.
pub fn simulate_mean_field(config: &SimConfig, phi: &InteractionSpec, pilot: &PathEnsemble) -> Result<PathEnsemble> {
    config.validate()?;
    let pc = pilot.config();
    if !config.same_grid(pc) {
        return Err(Error::Config(format!(
            "pilot grid (T={}, M={}) differs from requested grid (T={}, M={})",
            pc.horizon, pc.n_steps, config.horizon, config.n_steps
        )));
    }
    if pc.sigma != config.sigma || pc.zeta != config.zeta {
        return Err(Error::Config("pilot was generated with different sigma or zeta".into()));
    }
    if pc.n_particles < 10 * config.n_particles {
        log::warn!("pilot has {} particles, fewer than 10x the {} requested", pc.n_particles, config.n_particles);
    }
    let mut eng = Engine::start(config)?;
    for m in 0..config.n_steps {
        let reference = pilot.snapshot(m);
        let drift = drift_field(phi, &eng.cur, &reference);
        eng.advance(m, &drift)?;
    }
    eng.finish()
}

/// Replays the Euler recursion from stored increments; `None` if they were not stored.
pub fn replay(paths: &PathEnsemble, phi: &InteractionSpec) -> Option<Vec<f64>> {
    let cfg = paths.config();
    let (n, m) = (cfg.n_particles, cfg.n_steps);
    let dt = cfg.dt();
    let mut out = vec![0.0; n * (m + 1)];
    let mut cur = paths.snapshot(0);
    for (i, x) in cur.iter().enumerate() {
        out[i * (m + 1)] = *x;
    }
    for step in 0..m {
        let dw = paths.increment_slice(step)?;
        let drift = drift_field(phi, &cur, &cur);
        for i in 0..n {
            cur[i] = cur[i] + drift[i] * dt + cfg.sigma * dw[i];
            out[i * (m + 1) + step + 1] = cur[i];
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_two_point_sine() {
        let phi = InteractionSpec::Closed(ClosedForm::sine(1.0));
        let v = drift_pairwise(&phi, &[0.0, std::f64::consts::FRAC_PI_2], 0);
        assert!((v + 0.5).abs() < 1e-15);
        assert_eq!(drift_pairwise(&InteractionSpec::zero(), &[1.0, 2.0], 1), 0.0);
    }

    #[test]
    fn closed_form_rejects_understated_bound() {
        assert!(ClosedForm::new("bad", Arc::new(|x: f64| 2.0 * x.sin()), 1.0, 2.0).is_err());
        assert!(ClosedForm::new("ok", Arc::new(|x: f64| x.cos()), 1.0, 1.0).is_ok());
    }

    #[test]
    fn one_step_by_hand() {
        let cfg = SimConfig::new(2, 0.5, 0.7, 1.0, 11).with_steps(1).with_increments(true);
        let phi = InteractionSpec::Closed(ClosedForm::sine(1.0));
        let p = simulate_particles(&cfg, &phi).unwrap();
        let (x0, x1) = (p.position(0, 0), p.position(1, 0));
        let drift0 = (0.0f64.sin() + (x0 - x1).sin()) / 2.0;
        let expect = x0 + drift0 * 0.5 + 0.7 * p.increment(0, 0).unwrap();
        assert_eq!(p.position(0, 1), expect);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SimConfig::new(4, 1.0, 0.0, 1.0, 0);
        assert!(matches!(simulate_particles(&cfg, &InteractionSpec::zero()), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = SimConfig::new(3, 1.0, 1.0, 1.0, 5).with_steps(4);
        let huge = ClosedForm::new("huge", Arc::new(|_| f64::MAX), f64::MAX, 0.0).unwrap();
        let err = simulate_particles(&cfg, &InteractionSpec::Closed(huge)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 1, .. }), "{err}");
    }
}
