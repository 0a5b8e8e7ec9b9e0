//! Population-side quantities: marginal laws `μ_t` and their transforms, the
//! Gram matrix `Ψ`, the norms `‖·‖_⋆` and `‖·‖_⋆⋆`, best approximations and
//! the numerical checks of the eigenvalue and approximation bounds.
//!
//! Fourier convention: `μ̂(u) = ∫ exp(iux) μ(dx)`, so `e_k ⋆ μ = e_k · μ̂(−ω_k)`.
//!
//! Two independent routes evaluate the forms. The *spectral* route works on
//! trigonometric polynomials with frequencies on a lattice `m·step` and
//! integrates in `x` analytically through `μ̂`. The *quadrature* route uses
//! Gauss–Legendre in space against the density and handles closed-form
//! functions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::empirics::real_form;
use crate::error::{Error, Result};
use crate::estimators::{ErmSettings, QuadraticProblem};
use crate::io::MatrixBlob;
use crate::linalg::{symmetric_eigen, HermitianEigen};
use crate::sieve::{CoefVec, FourierSieve};
use crate::sim::{exp_moments, ClosedForm, InteractionSpec, PathEnsemble};
use crate::CMatrix;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite trapezoid nodes on `[0, horizon]` with weights normalized to sum to 1.
pub fn trapezoid(horizon: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let h = 1.0 / (n - 1) as f64;
    let times = (0..n).map(|k| horizon * k as f64 * h).collect();
    let weights = (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect();
    (times, weights)
}

const TAIL_Z: f64 = 5.730_728_868_236_19;

/// Marginal laws of the mean-field process.
#[derive(Clone, Debug)]
pub enum DensityOracle {
    /// `μ_t = N(0, ζ² + σ²t)`, exact when `φ ≡ 0`; `σ = 0` gives the stationary law `μ_0`.
    Gaussian { zeta: f64, sigma: f64, horizon: f64 },
    /// Empirical characteristic function and Gaussian KDE of a pilot ensemble,
    /// linearly interpolated between grid times.
    Pilot { paths: Arc<PathEnsemble>, bandwidths: Vec<f64> },
}

impl DensityOracle {
    pub fn gaussian(zeta: f64, sigma: f64, horizon: f64) -> Result<Self> {
        if !(zeta > 0.0 && sigma >= 0.0 && horizon > 0.0) {
            return Err(Error::Config("gaussian oracle needs zeta > 0, sigma >= 0, T > 0".into()));
        }
        Ok(DensityOracle::Gaussian { zeta, sigma, horizon })
    }

    /// Pilot oracle with Silverman's rule per time step.
    pub fn pilot(paths: Arc<PathEnsemble>) -> Self {
        let bandwidths = (0..=paths.n_steps()).map(|m| silverman(&paths.snapshot(m))).collect();
        DensityOracle::Pilot { paths, bandwidths }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            DensityOracle::Gaussian { horizon, .. } => *horizon,
            DensityOracle::Pilot { paths, .. } => paths.config().horizon,
        }
    }

    /// Standard deviation of the initial law.
    pub fn zeta(&self) -> f64 {
        match self {
            DensityOracle::Gaussian { zeta, .. } => *zeta,
            DensityOracle::Pilot { paths, .. } => paths.config().zeta,
        }
    }

    fn variance(&self, t: f64) -> f64 {
        match self {
            DensityOracle::Gaussian { zeta, sigma, .. } => zeta * zeta + sigma * sigma * t,
            DensityOracle::Pilot { .. } => unreachable!("variance is only closed-form for the gaussian oracle"),
        }
    }

    /// Neighbouring grid indices and interpolation weight for time `t`.
    fn bracket(paths: &PathEnsemble, t: f64) -> (usize, usize, f64) {
        let m = paths.n_steps();
        let s = (t / paths.dt()).clamp(0.0, m as f64);
        let m0 = (s.floor() as usize).min(m);
        let m1 = (m0 + 1).min(m);
        (m0, m1, s - m0 as f64)
    }

    pub fn density(&self, t: f64, x: f64) -> f64 {
        match self {
            DensityOracle::Gaussian { .. } => {
                let v = self.variance(t);
                (-x * x / (2.0 * v)).exp() / (2.0 * PI * v).sqrt()
            }
            DensityOracle::Pilot { paths, bandwidths } => {
                let (m0, m1, w) = Self::bracket(paths, t);
                let kde = |m: usize| {
                    let h = bandwidths[m];
                    let n = paths.n_particles();
                    let s: f64 = (0..n).map(|i| (-0.5 * ((x - paths.position(i, m)) / h).powi(2)).exp()).sum();
                    s / (n as f64 * h * (2.0 * PI).sqrt())
                };
                if w == 0.0 {
                    kde(m0)
                } else {
                    (1.0 - w) * kde(m0) + w * kde(m1)
                }
            }
        }
    }

    pub fn fourier(&self, t: f64, u: f64) -> Complex64 {
        match self {
            DensityOracle::Gaussian { .. } => Complex64::new((-0.5 * u * u * self.variance(t)).exp(), 0.0),
            DensityOracle::Pilot { paths, .. } => {
                let (m0, m1, w) = Self::bracket(paths, t);
                let ecf = |m: usize| exp_moments(-u, 1, &paths.snapshot(m), None)[1];
                if w == 0.0 {
                    ecf(m0)
                } else {
                    ecf(m0) * (1.0 - w) + ecf(m1) * w
                }
            }
        }
    }

    /// `μ̂_t(m·step)` for `m = 0..=m_max`.
    pub fn fourier_lattice(&self, t: f64, step: f64, m_max: usize) -> Vec<Complex64> {
        match self {
            DensityOracle::Gaussian { .. } => {
                let v = self.variance(t);
                (0..=m_max).map(|m| Complex64::new((-0.5 * (m as f64 * step).powi(2) * v).exp(), 0.0)).collect()
            }
            DensityOracle::Pilot { paths, .. } => {
                let (m0, m1, w) = Self::bracket(paths, t);
                // exp_moments uses exp(−i·n·step·x); the ECF is its conjugate.
                let ecf = |m: usize| -> Vec<Complex64> {
                    exp_moments(step, m_max, &paths.snapshot(m), None).into_iter().map(|z| z.conj()).collect()
                };
                let a = ecf(m0);
                if w == 0.0 {
                    return a;
                }
                let b = ecf(m1);
                a.iter().zip(&b).map(|(p, q)| p * (1.0 - w) + q * w).collect()
            }
        }
    }

    /// Mass of `μ_t` outside `[-w, w]`.
    pub fn mass_outside(&self, t: f64, w: f64) -> f64 {
        match self {
            DensityOracle::Gaussian { .. } => erfc(w / (2.0 * self.variance(t)).sqrt()),
            DensityOracle::Pilot { paths, bandwidths } => {
                let (m0, m1, a) = Self::bracket(paths, t);
                let tail = |m: usize| {
                    let h = bandwidths[m];
                    let n = paths.n_particles();
                    let s: f64 = (0..n)
                        .map(|i| {
                            let x = paths.position(i, m);
                            0.5 * erfc((w - x) / (h * 2f64.sqrt())) + 0.5 * erfc((w + x) / (h * 2f64.sqrt()))
                        })
                        .sum();
                    s / n as f64
                };
                (1.0 - a) * tail(m0) + a * tail(m1)
            }
        }
    }

    /// Symmetric window whose complement carries less than `1e-8` of every marginal.
    pub fn default_window(&self) -> f64 {
        match self {
            DensityOracle::Gaussian { .. } => TAIL_Z * self.variance(self.horizon()).sqrt(),
            DensityOracle::Pilot { paths, bandwidths } => {
                let xmax = paths.positions().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                let hmax = bandwidths.iter().fold(0.0_f64, |m, h| m.max(*h));
                xmax + 7.0 * hmax
            }
        }
    }

    /// `‖μ_t‖_∞`.
    pub fn sup_density(&self, t: f64) -> f64 {
        match self {
            DensityOracle::Gaussian { .. } => 1.0 / (2.0 * PI * self.variance(t)).sqrt(),
            DensityOracle::Pilot { .. } => {
                let w = self.default_window();
                (0..=1024).map(|k| self.density(t, -w + 2.0 * w * k as f64 / 1024.0)).fold(0.0, f64::max)
            }
        }
    }

    /// Transform table on the lattice `m·step`, `m ≤ m_max`, at `n_time` trapezoid nodes.
    pub fn table(&self, step: f64, m_max: usize, n_time: usize) -> TransformTable {
        let (times, weights) = trapezoid(self.horizon(), n_time.max(2));
        let values = times.par_iter().map(|&t| self.fourier_lattice(t, step, m_max)).collect();
        TransformTable { step, m_max, times, weights, values }
    }
}

fn silverman(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(1e-12)
}

/// `μ̂_t(m·step)` at trapezoid nodes, with time weights summing to 1.
#[derive(Clone, Debug)]
pub struct TransformTable {
    pub step: f64,
    pub m_max: usize,
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<Complex64>>,
}

impl TransformTable {
    /// `μ̂_{t_i}(m·step)` for signed `m`.
    pub fn get(&self, i: usize, m: isize) -> Complex64 {
        if m >= 0 {
            self.values[i][m as usize]
        } else {
            self.values[i][(-m) as usize].conj()
        }
    }
}

/// Real trigonometric polynomial `x ↦ Re Σ_m a_m exp(i m·step·x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeFn {
    pub step: f64,
    pub amps: Vec<Complex64>,
}

impl LatticeFn {
    pub fn from_coefs(c: &CoefVec) -> Self {
        let s = 1.0 / c.sieve.half_period().sqrt();
        LatticeFn { step: c.sieve.step(), amps: c.coeffs.iter().map(|z| z * s).collect() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amps.iter().enumerate().map(|(m, a)| (a * Complex64::cis(m as f64 * self.step * x)).re).sum()
    }

    /// Highest nonzero lattice index (0 for the zero function).
    pub fn degree(&self) -> usize {
        self.amps.iter().rposition(|a| a.norm() > 0.0).unwrap_or(0)
    }

    /// Same function on the finer lattice `step`, which must divide `self.step`.
    pub fn on_step(&self, step: f64) -> Result<LatticeFn> {
        let ratio = self.step / step;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
            return Err(Error::Config(format!(
                "frequency lattices are not commensurate (step {} vs {})",
                self.step, step
            )));
        }
        let r = r as usize;
        let mut amps = vec![Complex64::new(0.0, 0.0); self.degree() * r + 1];
        for (m, a) in self.amps.iter().enumerate().take(self.degree() + 1) {
            amps[m * r] = *a;
        }
        Ok(LatticeFn { step, amps })
    }

    /// `α·self + β·other` on the finer of the two lattices.
    pub fn combine(&self, alpha: f64, other: &LatticeFn, beta: f64) -> Result<LatticeFn> {
        let step = if self.degree() == 0 && self.amps.iter().all(|a| a.norm() == 0.0) {
            other.step
        } else if other.degree() == 0 && other.amps.iter().all(|a| a.norm() == 0.0) {
            self.step
        } else {
            self.step.min(other.step)
        };
        let a = self.on_step(step).or_else(|_| zero_if_trivial(self, step))?;
        let b = other.on_step(step).or_else(|_| zero_if_trivial(other, step))?;
        let n = a.amps.len().max(b.amps.len());
        let get = |v: &[Complex64], k: usize| v.get(k).copied().unwrap_or_default();
        Ok(LatticeFn { step, amps: (0..n).map(|k| get(&a.amps, k) * alpha + get(&b.amps, k) * beta).collect() })
    }
}

fn zero_if_trivial(f: &LatticeFn, step: f64) -> Result<LatticeFn> {
    if f.amps.iter().skip(1).all(|a| a.norm() == 0.0) {
        Ok(LatticeFn { step, amps: f.amps.first().copied().into_iter().collect() })
    } else {
        f.on_step(step)
    }
}

fn aligned(table: &TransformTable, f: &LatticeFn) -> Result<LatticeFn> {
    let g = zero_if_trivial(f, table.step)?;
    if 2 * g.degree() > table.m_max {
        return Err(Error::Config(format!("transform table too short: need {} lattice points", 2 * g.degree())));
    }
    Ok(g)
}

/// `⟨f, g⟩_⋆` on a common lattice.
pub fn star_cross(f: &LatticeFn, g: &LatticeFn, table: &TransformTable) -> Result<f64> {
    let f = aligned(table, f)?;
    let g = aligned(table, g)?;
    let mut total = 0.0;
    for (i, w) in table.weights.iter().enumerate() {
        let fa: Vec<Complex64> = f.amps.iter().enumerate().map(|(j, a)| a * table.get(i, -(j as isize))).collect();
        let ga: Vec<Complex64> = g.amps.iter().enumerate().map(|(k, a)| a * table.get(i, -(k as isize))).collect();
        let mut acc = 0.0;
        for (j, fj) in fa.iter().enumerate() {
            if fj.norm() == 0.0 {
                continue;
            }
            for (k, gk) in ga.iter().enumerate() {
                let diff = table.get(i, k as isize - j as isize);
                let sum = table.get(i, (j + k) as isize);
                acc += 0.5 * (fj.conj() * gk * diff).re + 0.5 * (fj * gk * sum).re;
            }
        }
        total += w * acc;
    }
    Ok(total)
}

/// `⟨f, g⟩_⋆⋆ = (1/T) ∫ E[f(X−Y) g(X−Y)] dt` with `X, Y ~ μ_t` independent.
pub fn star_star_cross(f: &LatticeFn, g: &LatticeFn, table: &TransformTable) -> Result<f64> {
    let f = aligned(table, f)?;
    let g = aligned(table, g)?;
    let mut total = 0.0;
    for (i, w) in table.weights.iter().enumerate() {
        let mut acc = 0.0;
        for (j, a) in f.amps.iter().enumerate() {
            if a.norm() == 0.0 {
                continue;
            }
            for (k, b) in g.amps.iter().enumerate() {
                let diff = table.get(i, k as isize - j as isize).norm_sqr();
                let sum = table.get(i, (j + k) as isize).norm_sqr();
                acc += 0.5 * (a.conj() * b).re * diff + 0.5 * (a * b).re * sum;
            }
        }
        total += w * acc;
    }
    Ok(total)
}

/// A real function usable by the quadrature route.
#[derive(Clone, Copy, Debug)]
pub enum Func<'a> {
    Coef(&'a CoefVec),
    Closed(&'a ClosedForm),
}

impl<'a> Func<'a> {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Func::Coef(c) => c.eval(x),
            Func::Closed(c) => c.eval(x),
        }
    }
}

impl<'a> From<&'a InteractionSpec> for Func<'a> {
    fn from(s: &'a InteractionSpec) -> Self {
        match s {
            InteractionSpec::Closed(c) => Func::Closed(c),
            InteractionSpec::Spectral(c) => Func::Coef(c),
        }
    }
}

impl<'a> From<&'a CoefVec> for Func<'a> {
    fn from(c: &'a CoefVec) -> Self {
        Func::Coef(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub space_nodes: usize,
    pub time_nodes: usize,
    /// Half-width of the space window; derived from the oracle when absent.
    pub window: Option<f64>,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec { space_nodes: 256, time_nodes: 64, window: None }
    }
}

struct Grid {
    times: Vec<f64>,
    tw: Vec<f64>,
    xs: Vec<f64>,
    xw: Vec<f64>,
}

fn grid(oracle: &DensityOracle, quad: &QuadSpec) -> Result<Grid> {
    let w = quad.window.unwrap_or_else(|| oracle.default_window());
    let (times, tw) = trapezoid(oracle.horizon(), quad.time_nodes.max(2));
    for &t in &times {
        let out = oracle.mass_outside(t, w);
        if out > 1e-6 {
            return Err(Error::Domain(format!("window [-{w}, {w}] misses {out:e} of the mass at t = {t}")));
        }
    }
    let (nodes, weights) = gauss_legendre(quad.space_nodes);
    Ok(Grid { times, tw, xs: nodes.iter().map(|u| u * w).collect(), xw: weights.iter().map(|v| v * w).collect() })
}

/// `(f ⋆ μ_t)(x)` at every space node.
fn conv_nodes(f: Func<'_>, oracle: &DensityOracle, t: f64, g: &Grid, dens: &[f64]) -> Vec<f64> {
    match f {
        Func::Coef(c) => {
            let s = 1.0 / c.sieve.half_period().sqrt();
            let amps: Vec<Complex64> = c
                .coeffs
                .iter()
                .enumerate()
                .map(|(k, a)| a * s * oracle.fourier(t, -c.sieve.omega(k)))
                .collect();
            g.xs
                .iter()
                .map(|&x| amps.iter().enumerate().map(|(k, a)| (a * Complex64::cis(c.sieve.omega(k) * x)).re).sum())
                .collect()
        }
        Func::Closed(_) => g
            .xs
            .iter()
            .map(|&x| g.xs.iter().zip(&g.xw).zip(dens).map(|((y, w), d)| w * d * f.eval(x - y)).sum())
            .collect(),
    }
}

/// `⟨f, g⟩_⋆ = (1/T) ∫∫ (f⋆μ_t)(g⋆μ_t) μ_t dx dt` by tensor quadrature.
pub fn star_inner(f: Func<'_>, g: Func<'_>, oracle: &DensityOracle, quad: &QuadSpec) -> Result<f64> {
    let gr = grid(oracle, quad)?;
    let parts: Vec<f64> = gr
        .times
        .par_iter()
        .zip(&gr.tw)
        .map(|(&t, &tw)| {
            let dens: Vec<f64> = gr.xs.iter().map(|&x| oracle.density(t, x)).collect();
            let a = conv_nodes(f, oracle, t, &gr, &dens);
            let b = conv_nodes(g, oracle, t, &gr, &dens);
            tw * (0..gr.xs.len()).map(|i| gr.xw[i] * a[i] * b[i] * dens[i]).sum::<f64>()
        })
        .collect();
    Ok(parts.iter().sum())
}

/// `‖f‖²_⋆⋆ = (1/T) ∫∫∫ f(x−y)² μ_t(x) μ_t(y) dx dy dt` by tensor quadrature.
pub fn star_star_norm_sq(f: Func<'_>, oracle: &DensityOracle, quad: &QuadSpec) -> Result<f64> {
    let gr = grid(oracle, quad)?;
    let parts: Vec<f64> = gr
        .times
        .par_iter()
        .zip(&gr.tw)
        .map(|(&t, &tw)| {
            let dens: Vec<f64> = gr.xs.iter().map(|&x| oracle.density(t, x)).collect();
            let mut s = 0.0;
            for (i, &x) in gr.xs.iter().enumerate() {
                let mut inner = 0.0;
                for (j, &y) in gr.xs.iter().enumerate() {
                    let v = f.eval(x - y);
                    inner += gr.xw[j] * dens[j] * v * v;
                }
                s += gr.xw[i] * dens[i] * inner;
            }
            tw * s
        })
        .collect();
    Ok(parts.iter().sum())
}

/// Young-type bound `‖f‖²_{L²} · (1/T) ∫ ‖μ_t‖_∞ dt`.
pub fn young_bound(l2_norm_sq: f64, oracle: &DensityOracle, n_time: usize) -> f64 {
    let (times, w) = trapezoid(oracle.horizon(), n_time.max(2));
    l2_norm_sq * times.iter().zip(&w).map(|(&t, w)| w * oracle.sup_density(t)).sum::<f64>()
}

/// Population Gram matrix on a sieve.
#[derive(Clone, Debug)]
pub struct PsiOracle {
    /// `Ψ[j][k] = ⟨conj(e_j⋆μ) (e_k⋆μ)⟩_⋆`.
    pub matrix: CMatrix,
    /// `Φ[j][k] = ⟨(e_j⋆μ)(e_k⋆μ)⟩_⋆`.
    pub pseudo: CMatrix,
    pub inv_sqrt: CMatrix,
    pub op_norm_inv: f64,
    pub eigenvalues: Vec<f64>,
    pub sieve: FourierSieve,
    pub n_time: usize,
}

fn gram_from_table(table: &TransformTable, n: usize, half_period: f64) -> (CMatrix, CMatrix) {
    let mut psi = CMatrix::zeros(n, n);
    let mut phi = CMatrix::zeros(n, n);
    for (i, w) in table.weights.iter().enumerate() {
        for j in 0..n {
            for k in 0..n {
                let (ji, ki) = (j as isize, k as isize);
                psi[(j, k)] += table.get(i, ji) * table.get(i, -ki) * table.get(i, ki - ji) * *w;
                phi[(j, k)] += table.get(i, -ji) * table.get(i, -ki) * table.get(i, ji + ki) * *w;
            }
        }
    }
    let s = Complex64::new(1.0 / (2.0 * half_period), 0.0);
    let mut psi = psi * s;
    for j in 0..n {
        psi[(j, j)].im = 0.0;
    }
    (psi, phi * s)
}

/// `Ψ` by composite trapezoid in time of the triple-transform products.
pub fn psi_matrix(oracle: &DensityOracle, sieve: &FourierSieve, n_time: usize) -> Result<PsiOracle> {
    if n_time < 2 {
        return Err(Error::Config("time quadrature needs at least 2 nodes".into()));
    }
    psi_from_table(&oracle.table(sieve.step(), 2 * sieve.dim(), n_time), sieve)
}

/// `Ψ` from a precomputed table on the sieve's lattice with `m_max >= 2D`.
pub fn psi_from_table(table: &TransformTable, sieve: &FourierSieve) -> Result<PsiOracle> {
    if (table.step - sieve.step()).abs() > 1e-12 * sieve.step() || table.m_max < 2 * sieve.dim() {
        return Err(Error::Config("transform table does not cover the sieve".into()));
    }
    let (matrix, pseudo) = gram_from_table(table, sieve.dim() + 1, sieve.half_period());
    let eig = HermitianEigen::new(&matrix);
    if !(eig.min() > 0.0) {
        return Err(Error::Quadrature { eigenvalue: eig.min() });
    }
    Ok(PsiOracle {
        inv_sqrt: eig.inv_sqrt(),
        op_norm_inv: 1.0 / eig.min(),
        eigenvalues: eig.values.clone(),
        matrix,
        pseudo,
        sieve: sieve.clone(),
        n_time: table.times.len(),
    })
}

impl PsiOracle {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "sieve": self.sieve,
            "psi": MatrixBlob::encode(&self.matrix),
            "pseudo": MatrixBlob::encode(&self.pseudo),
            "eigenvalues": self.eigenvalues,
            "op_norm_inv": self.op_norm_inv,
            "n_time": self.n_time,
        })
    }
}

/// Real feature for coordinate `r` of `(Re θ_0, Re θ_1, Im θ_1, …)`: `Re e_k` or `−Im e_k`.
fn feature(sieve: &FourierSieve, r: usize) -> CoefVec {
    let mut c = CoefVec::zeros(sieve.clone());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if r == 0 {
        c.coeffs[0] = Complex64::new(s, 0.0);
    } else {
        let k = r.div_ceil(2);
        c.coeffs[k] = if r % 2 == 1 { Complex64::new(s, 0.0) } else { Complex64::new(0.0, s) };
    }
    c
}

#[derive(Clone, Debug)]
pub struct BestApprox {
    pub coeffs: CoefVec,
    /// `‖φ_⋆ − φ‖²_⋆`.
    pub error_sq: f64,
    /// `‖φ‖²_⋆`.
    pub phi_norm_sq: f64,
    /// Largest `|⟨φ − φ_⋆, u⟩_⋆|` over the real basis features.
    pub orthogonality: f64,
}

fn lattice_system(lat: &LatticeFn, table: &TransformTable, sieve: &FourierSieve) -> Result<(crate::RMatrix, DVector<f64>, f64)> {
    let n = sieve.dim() + 1;
    let (psi, pseudo) = gram_from_table(table, n, sieve.half_period());
    let (g, _) = real_form(&psi, &pseudo, &vec![Complex64::new(0.0, 0.0); n]);
    let mut b = DVector::zeros(2 * sieve.dim() + 1);
    for r in 0..b.len() {
        b[r] = star_cross(&LatticeFn::from_coefs(&feature(sieve, r)), lat, table)?;
    }
    Ok((g, b, star_cross(lat, lat, table)?))
}

type ProjectionSystem = (crate::RMatrix, DVector<f64>, f64, Option<(TransformTable, LatticeFn)>);

/// Projection data `(G_⋆, b, ‖φ‖²_⋆)` for `φ` on `sieve`.
fn projection_system(
    phi: &InteractionSpec,
    oracle: &DensityOracle,
    sieve: &FourierSieve,
    quad: &QuadSpec,
) -> Result<ProjectionSystem> {
    let n = sieve.dim() + 1;
    let dim = 2 * sieve.dim() + 1;
    let lattice = match phi {
        InteractionSpec::Spectral(c) => LatticeFn::from_coefs(c).on_step(sieve.step()).ok(),
        InteractionSpec::Closed(c) if c.k_phi() == 0.0 => Some(LatticeFn { step: sieve.step(), amps: vec![] }),
        InteractionSpec::Closed(_) => None,
    };
    if let Some(lat) = lattice {
        let m_max = 2 * lat.degree().max(sieve.dim());
        let table = oracle.table(sieve.step(), m_max, quad.time_nodes);
        let (g, b, norm) = lattice_system(&lat, &table, sieve)?;
        return Ok((g, b, norm, Some((table, lat))));
    }
    let psi = psi_matrix(oracle, sieve, quad.time_nodes)?;
    let (g, _) = real_form(&psi.matrix, &psi.pseudo, &vec![Complex64::new(0.0, 0.0); n]);
    let f = Func::from(phi);
    let feats: Vec<CoefVec> = (0..dim).map(|r| feature(sieve, r)).collect();
    let b: Vec<f64> = feats.iter().map(|u| star_inner(Func::Coef(u), f, oracle, quad)).collect::<Result<_>>()?;
    let norm = star_inner(f, f, oracle, quad)?;
    Ok((g, DVector::from_vec(b), norm, None))
}

/// `⋆`-orthogonal projection of `φ` onto the span of the sieve.
pub fn best_approx(phi: &InteractionSpec, oracle: &DensityOracle, sieve: &FourierSieve, quad: &QuadSpec) -> Result<BestApprox> {
    let (g, b, norm, lattice) = projection_system(phi, oracle, sieve, quad)?;
    project(g, b, norm, sieve, lattice.as_ref().map(|(t, l)| (t, l)))
}

/// [`best_approx`] for a function on the sieve's lattice, reusing a table with `m_max >= 2·max(degree, D)`.
pub fn best_approx_on_table(phi: &LatticeFn, table: &TransformTable, sieve: &FourierSieve) -> Result<BestApprox> {
    let (g, b, norm) = lattice_system(phi, table, sieve)?;
    project(g, b, norm, sieve, Some((table, phi)))
}

fn project(
    g: crate::RMatrix,
    b: DVector<f64>,
    norm: f64,
    sieve: &FourierSieve,
    lattice: Option<(&TransformTable, &LatticeFn)>,
) -> Result<BestApprox> {
    let (vals, vecs) = symmetric_eigen(&g);
    let lmax = vals.last().copied().unwrap_or(0.0);
    if !(lmax > 0.0) {
        return Err(Error::Conditioning { condition: f64::INFINITY });
    }
    let mut x = DVector::zeros(b.len());
    let mut explained = 0.0;
    for (k, &lam) in vals.iter().enumerate() {
        if lam > 1e-14 * lmax {
            let v = vecs.column(k);
            let p = v.dot(&b);
            x.axpy(p / lam, &v, 1.0);
            explained += p * p / lam;
        }
    }
    let coeffs = CoefVec::from_real_coords(sieve.clone(), x.as_slice())?;
    let resid = &b - &g * &x;
    let orthogonality = resid.amax();
    let error_sq = match lattice {
        Some((table, lat)) => {
            let diff = LatticeFn::from_coefs(&coeffs).combine(1.0, lat, -1.0)?;
            star_cross(&diff, &diff, table)?.max(0.0)
        }
        None => (norm - explained).max(0.0),
    };
    Ok(BestApprox { coeffs, error_sq, phi_norm_sq: norm, orthogonality })
}

/// Best approximation within the ℓ1 ball of the sieve, reusing the ERM solver on `(G_⋆, b)`.
pub fn best_approx_constrained(
    phi: &InteractionSpec,
    oracle: &DensityOracle,
    sieve: &FourierSieve,
    quad: &QuadSpec,
    settings: &ErmSettings,
) -> Result<BestApprox> {
    let (g, b, norm, _) = projection_system(phi, oracle, sieve, quad)?;
    let problem = QuadraticProblem::for_sieve(g.clone(), b.clone(), sieve);
    let sol = problem.solve(settings)?;
    let coeffs = CoefVec::from_real_coords(sieve.clone(), sol.x.as_slice())?;
    let resid = &b - &g * &sol.x;
    Ok(BestApprox { coeffs, error_sq: (norm + sol.objective).max(0.0), phi_norm_sq: norm, orthogonality: resid.amax() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenBoundReport {
    pub lambda_min: f64,
    /// Closed-form bound as printed.
    pub bound: f64,
    pub satisfied: bool,
    /// Bound re-derived consistently for the sieve's frequency scale.
    pub derived_bound: f64,
    pub derived_satisfied: bool,
}

/// Smallest eigenvalue of `Ψ` against the closed-form lower bounds, given
/// certificates `μ_t(x) ≥ g1(t) exp(−x²/c1)` and `μ̂_t(u) ≥ g2(t) exp(−u²/c2)`.
pub fn check_eigen_bound(
    oracle: &DensityOracle,
    sieve: &FourierSieve,
    c1: f64,
    c2: f64,
    g1: &dyn Fn(f64) -> f64,
    g2: &dyn Fn(f64) -> f64,
    n_time: usize,
) -> Result<EigenBoundReport> {
    let psi = psi_matrix(oracle, sieve, n_time)?;
    let horizon = oracle.horizon();
    let (times, w) = trapezoid(horizon, n_time.max(2));
    let integral = horizon * times.iter().zip(&w).map(|(&t, w)| w * g1(t) * g2(t).powi(2)).sum::<f64>();
    let (a, d) = (sieve.half_period(), sieve.dim() as f64);
    let bound = (-2.0 * d * d / (c2 * a * a)).exp() * (-a * a / c1).exp() / (2.0 * (2.0 * PI).sqrt() * horizon) * integral;
    let s = sieve.scale().factor();
    let derived_bound = PI / (s * horizon)
        * (-2.0 * s * s * d * d / (c2 * a * a)).exp()
        * (-PI * PI * a * a / (s * s * c1)).exp()
        * integral;
    let lambda_min = psi.lambda_min();
    Ok(EigenBoundReport {
        lambda_min,
        bound,
        satisfied: lambda_min >= bound,
        derived_bound,
        derived_satisfied: lambda_min >= derived_bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// `‖φ_⋆ − φ‖²_⋆⋆`.
    pub lhs: f64,
    /// `(1 + A⁻¹ D⁴ ‖Ψ⁻¹‖² exp(−3 ω_D² ζ²/2)) · (Σ_{k>D} |c_k|)²`.
    pub rhs: f64,
    pub bracket: f64,
    pub tail_l1: f64,
    /// `lhs / rhs` (0 when both vanish).
    pub ratio: f64,
    pub satisfied: bool,
}

/// Approximation error in the `⋆⋆` norm against the constant-free tail bound.
/// `phi` must be on the same basis as `sieve`, with more modes.
pub fn check_tail_bound(phi: &CoefVec, oracle: &DensityOracle, sieve: &FourierSieve, n_time: usize) -> Result<TailReport> {
    if !phi.sieve.same_basis(sieve) {
        return Err(Error::Config("phi must share the sieve's half-period and scale".into()));
    }
    let d = sieve.dim();
    let quad = QuadSpec { time_nodes: n_time, ..QuadSpec::default() };
    let spec = InteractionSpec::Spectral(phi.clone());
    let best = best_approx(&spec, oracle, sieve, &quad)?;
    let lat = LatticeFn::from_coefs(phi);
    let diff = LatticeFn::from_coefs(&best.coeffs).combine(1.0, &lat, -1.0)?;
    let table = oracle.table(sieve.step(), 2 * diff.degree().max(1), n_time);
    let lhs = star_star_cross(&diff, &diff, &table)?.max(0.0);
    let tail_l1: f64 = phi.coeffs.iter().skip(d + 1).map(|c| c.norm()).sum();
    let psi = psi_matrix(oracle, sieve, n_time)?;
    let zeta = oracle.zeta();
    let omega_d = sieve.omega(d);
    let bracket = 1.0
        + (d as f64).powi(4) / sieve.half_period() * psi.op_norm_inv.powi(2) * (-1.5 * omega_d * omega_d * zeta * zeta).exp();
    let rhs = bracket * tail_l1 * tail_l1;
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(TailReport { lhs, rhs, bracket, tail_l1, ratio, satisfied: ratio.is_finite() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub zeta: f64,
    pub sigma: f64,
    pub k_phi: f64,
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub density_upper: f64,
    pub density_lower: f64,
    pub fourier_upper: f64,
}

/// Gaussian envelopes for the marginal density and transform at `(t, x, u)`.
pub fn gaussian_envelopes(t: f64, x: f64, u: f64, p: &EnvelopeParams) -> Envelopes {
    let (z2, s2) = (p.zeta * p.zeta, p.sigma * p.sigma);
    let k2 = p.k_phi * p.k_phi / s2;
    let v = z2 + s2 * t;
    let density_upper = (0.5 * k2 * p.horizon).exp() / (2.0 * PI * v).sqrt() * (-x * x / (2.0 * v)).exp();
    let density_lower = (-k2 * t).exp() / (4.0 * (PI * (z2 + 0.5 * s2 * t)).sqrt()) * (-x * x / (2.0 * z2 + s2 * t)).exp();
    Envelopes { density_upper, density_lower, fourier_upper: (-0.5 * u * u * z2).exp() }
}

/// The lower density bound exactly as printed (σ = 1); it is not a valid bound.
pub fn printed_density_lower(t: f64, x: f64, zeta: f64, k_phi: f64) -> f64 {
    let z2 = zeta * zeta;
    (-k_phi * k_phi * t).exp() / (2.0 * PI * (z2 + 0.5 * t)).sqrt() * (-x * x / (2.0 * z2 + t)).exp()
}
