//! Data-side quantities: empirical bilinear forms, the contrast `γ_N`, its
//! martingale remainder `γ′_N`, and the Gram system `(Ψ_N, Z_N, L_N)`.
//!
//! All time integrals are left-endpoint sums on the simulation grid, which
//! makes `γ_N(f) + γ′_N(f) + ‖φ‖²_N = ‖f − φ‖²_N` an exact algebraic identity.
//!
//! Functions are real, so the forms act on `Re[(f ⋆ μ^N)]`. The Hermitian
//! matrix `Ψ_N[j][k] = ⟨conj(E_j) E_k⟩_N` alone does not determine the real
//! quadratic form; the pseudo-Gram `Φ_N[j][k] = ⟨E_j E_k⟩_N` completes it
//! (`E_k = e_k ⋆ μ^N` evaluated at the particles).

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{complex_pairs, from_pairs, MatrixBlob};
use crate::sieve::{CoefVec, FourierSieve};
use crate::sim::{exp_moments, field_spectral, InteractionSpec, PathEnsemble, SpectralSnapshot};
use crate::{CMatrix, RMatrix};

/// `(f ⋆ μ^N_{t_m})(X^i_{t_m})` for all particles, as the analytic field whose
/// real part is the convolution.
pub fn conv_field(f: &CoefVec, paths: &PathEnsemble, m: usize) -> Vec<Complex64> {
    let xs = paths.snapshot(m);
    let snap = SpectralSnapshot::new(&f.sieve, &xs);
    xs.par_iter().map(|&x| field_spectral(f, &snap, x).expect("snapshot built on f's sieve")).collect()
}

fn conv_real(f: &CoefVec, xs: &[f64]) -> Vec<f64> {
    let snap = SpectralSnapshot::new(&f.sieve, xs);
    xs.iter().map(|&x| field_spectral(f, &snap, x).expect("snapshot built on f's sieve").re).collect()
}

/// `(φ ⋆ μ^N)(x_i)`; spectral interactions use the same factorized evaluator as the simulator.
fn conv_phi(phi: &InteractionSpec, xs: &[f64]) -> Vec<f64> {
    match phi {
        InteractionSpec::Spectral(c) => conv_real(c, xs),
        InteractionSpec::Closed(_) if phi.is_zero() => vec![0.0; xs.len()],
        InteractionSpec::Closed(_) => {
            let n = xs.len() as f64;
            xs.iter().map(|&x| xs.iter().map(|&y| phi.eval(x - y)).sum::<f64>() / n).collect()
        }
    }
}

/// `Σ_m g(m)` over steps `0..M`, summed in step order.
fn sum_steps(paths: &PathEnsemble, g: impl Fn(usize) -> f64 + Sync + Send) -> f64 {
    let parts: Vec<f64> = (0..paths.n_steps()).into_par_iter().map(g).collect();
    parts.iter().sum()
}

/// `⟨f, g⟩_N = (1/(NT)) Σ_i Σ_{m<M} Re(f⋆μ^N)(X^i) Re(g⋆μ^N)(X^i) Δ`.
pub fn empirical_inner(f: &CoefVec, g: &CoefVec, paths: &PathEnsemble) -> f64 {
    let scale = paths.dt() / (paths.n_particles() as f64 * paths.config().horizon);
    scale
        * sum_steps(paths, |m| {
            let xs = paths.snapshot(m);
            let a = conv_real(f, &xs);
            let b = conv_real(g, &xs);
            a.iter().zip(&b).map(|(u, v)| u * v).sum()
        })
}

/// `γ_N(f) = ‖f‖²_N − (2/(NT)) Σ_i Σ_m (f⋆μ^N)(X^i_{t_m}) ΔX^i_m`.
pub fn gamma_loss(f: &CoefVec, paths: &PathEnsemble) -> f64 {
    let nt = paths.n_particles() as f64 * paths.config().horizon;
    let dt = paths.dt();
    sum_steps(paths, |m| {
        let xs = paths.snapshot(m);
        let dx = paths.displacement(m);
        let a = conv_real(f, &xs);
        a.iter().zip(&dx).map(|(u, d)| u * u * dt - 2.0 * u * d).sum()
    }) / nt
}

/// `γ′_N(f) = (2σ/(NT)) Σ_i Σ_m (f⋆μ^N)(X^i_{t_m}) ΔW^i_m`; needs stored increments.
pub fn gamma_prime(f: &CoefVec, paths: &PathEnsemble) -> Result<f64> {
    if paths.increments().is_none() {
        return Err(Error::Capability("gamma_prime needs stored Brownian increments".into()));
    }
    let cfg = paths.config();
    let nt = cfg.n_particles as f64 * cfg.horizon;
    Ok(2.0 * cfg.sigma / nt
        * sum_steps(paths, |m| {
            let xs = paths.snapshot(m);
            let dw = paths.increment_slice(m).expect("increments checked above");
            let a = conv_real(f, &xs);
            a.iter().zip(&dw).map(|(u, w)| u * w).sum()
        }))
}

/// `‖f − φ‖²_N`.
pub fn empirical_norm_sq(f: &CoefVec, phi: &InteractionSpec, paths: &PathEnsemble) -> f64 {
    let scale = paths.dt() / (paths.n_particles() as f64 * paths.config().horizon);
    scale
        * sum_steps(paths, |m| {
            let xs = paths.snapshot(m);
            let a = conv_real(f, &xs);
            let b = conv_phi(phi, &xs);
            a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum()
        })
}

/// `‖φ‖²_N`.
pub fn phi_norm_sq(phi: &InteractionSpec, paths: &PathEnsemble) -> f64 {
    let scale = paths.dt() / (paths.n_particles() as f64 * paths.config().horizon);
    scale
        * sum_steps(paths, |m| {
            let b = conv_phi(phi, &paths.snapshot(m));
            b.iter().map(|v| v * v).sum()
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramSource {
    pub n_particles: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub sigma: f64,
    pub zeta: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramSystem {
    /// `Ψ_N[j][k] = ⟨conj(E_j) E_k⟩_N`, Hermitian PSD.
    pub psi_n: CMatrix,
    /// `Φ_N[j][k] = ⟨E_j E_k⟩_N`, complex symmetric.
    pub pseudo_n: CMatrix,
    /// `Z_N[j] = (1/(NT)) Σ_i Σ_m conj(E_j(X^i_{t_m})) ΔX^i_m`.
    pub z_n: Vec<Complex64>,
    pub l_n: f64,
    pub sieve: FourierSieve,
    pub source: GramSource,
}

/// Assembles `Ψ_N`, `Φ_N`, `Z_N` from exponential moments in `O(N·M·D + M·D²)`.
pub fn assemble_gram(paths: &PathEnsemble, sieve: &FourierSieve) -> GramSystem {
    let d = sieve.dim();
    let n = d + 1;
    let a = sieve.half_period();
    let step = sieve.step();
    let horizon = paths.config().horizon;
    let w_psi = paths.dt() / (horizon * 2.0 * a);
    let w_z = 1.0 / (horizon * (2.0 * a).sqrt());
    let per_step: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> = (0..paths.n_steps())
        .into_par_iter()
        .map(|m| {
            let xs = paths.snapshot(m);
            let dx = paths.displacement(m);
            let r = exp_moments(step, 2 * d, &xs, None);
            let w = exp_moments(step, d, &xs, Some(&dx));
            let q = |k: isize| if k >= 0 { r[k as usize].conj() } else { r[(-k) as usize] };
            let mut psi = vec![Complex64::new(0.0, 0.0); n * n];
            let mut phi = vec![Complex64::new(0.0, 0.0); n * n];
            for j in 0..n {
                let rj = r[j];
                for k in 0..n {
                    psi[j * n + k] = rj.conj() * r[k] * q(k as isize - j as isize);
                    phi[j * n + k] = rj * r[k] * r[j + k].conj();
                }
            }
            let z = (0..n).map(|j| r[j].conj() * w[j]).collect();
            (psi, phi, z)
        })
        .collect();
    let mut psi = vec![Complex64::new(0.0, 0.0); n * n];
    let mut phi = vec![Complex64::new(0.0, 0.0); n * n];
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    for (p, f, zz) in per_step {
        psi.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        phi.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        z.iter_mut().zip(zz).for_each(|(a, b)| *a += b);
    }
    let mut psi_n = CMatrix::from_row_slice(n, n, &psi) * Complex64::new(w_psi, 0.0);
    for j in 0..n {
        psi_n[(j, j)].im = 0.0;
        for k in (j + 1)..n {
            let avg = 0.5 * (psi_n[(j, k)] + psi_n[(k, j)].conj());
            psi_n[(j, k)] = avg;
            psi_n[(k, j)] = avg.conj();
        }
    }
    let pseudo_n = CMatrix::from_row_slice(n, n, &phi) * Complex64::new(w_psi, 0.0);
    let z_n = z.into_iter().map(|v| v * w_z).collect();
    let cfg = paths.config();
    GramSystem {
        psi_n,
        pseudo_n,
        z_n,
        l_n: sieve.l_n(),
        sieve: sieve.clone(),
        source: GramSource {
            n_particles: cfg.n_particles,
            n_steps: cfg.n_steps,
            horizon: cfg.horizon,
            sigma: cfg.sigma,
            zeta: cfg.zeta,
            seed: cfg.seed,
        },
    }
}

/// Index of `Re θ_k` and `Im θ_k` in the real coordinate vector.
pub fn real_index(k: usize) -> (usize, Option<usize>) {
    if k == 0 {
        (0, None)
    } else {
        (2 * k - 1, Some(2 * k))
    }
}

/// Real quadratic form `(G, h)` over coordinates `(Re θ_0, Re θ_1, Im θ_1, …)`
/// from a Hermitian Gram matrix and its pseudo-Gram companion.
pub fn real_form(psi: &CMatrix, pseudo: &CMatrix, z: &[Complex64]) -> (RMatrix, DVector<f64>) {
    let n = psi.nrows();
    let dim = 2 * n - 1;
    let mut g = RMatrix::zeros(dim, dim);
    let mut h = DVector::zeros(dim);
    for j in 0..n {
        let (rj, ij) = real_index(j);
        for k in 0..n {
            let (rk, ik) = real_index(k);
            let p = psi[(j, k)];
            let f = pseudo[(j, k)];
            g[(rj, rk)] = 0.5 * (p.re + f.re);
            if let Some(ik) = ik {
                g[(rj, ik)] = -0.5 * (f.im + p.im);
            }
            if let Some(ij) = ij {
                // Im E_j Re E_k = ½ Im(E_j E_k) − ½ Im(conj(E_j) E_k).
                g[(ij, rk)] = -0.5 * (f.im - p.im);
                if let Some(ik) = ik {
                    g[(ij, ik)] = 0.5 * (p.re - f.re);
                }
            }
        }
        h[rj] = z[j].re;
        if let Some(ij) = ij {
            h[ij] = z[j].im;
        }
    }
    let sym = (&g + g.transpose()) * 0.5;
    (sym, h)
}

impl GramSystem {
    pub fn dim(&self) -> usize {
        self.sieve.dim()
    }

    /// `(G, h)` with `γ_N(f) = xᵀ G x − 2 hᵀ x` for the real coordinates `x` of `f`.
    pub fn real_system(&self) -> (RMatrix, DVector<f64>) {
        real_form(&self.psi_n, &self.pseudo_n, &self.z_n)
    }

    /// `γ_N(f)` through the quadratic form.
    pub fn objective(&self, f: &CoefVec) -> f64 {
        let (g, h) = self.real_system();
        let x = DVector::from_vec(f.real_coords());
        (x.transpose() * &g * &x)[(0, 0)] - 2.0 * h.dot(&x)
    }

    /// `θᴴ Ψ_N θ − 2 Re θᴴ Z_N`, the contrast of the analytic extension.
    pub fn hermitian_objective(&self, theta: &[Complex64]) -> f64 {
        let t = DVector::from_column_slice(theta);
        let z = DVector::from_column_slice(&self.z_n);
        (t.adjoint() * &self.psi_n * &t)[(0, 0)].re - 2.0 * t.dotc(&z).re
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GramJson {
            sieve: self.sieve.clone(),
            psi_n: MatrixBlob::encode(&self.psi_n),
            pseudo_n: MatrixBlob::encode(&self.pseudo_n),
            z_n: complex_pairs(&self.z_n),
            l_n: self.l_n,
            source: self.source.clone(),
        })
        .expect("gram system serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let g: GramJson = serde_json::from_value(v.clone()).map_err(|e| Error::Format(e.to_string()))?;
        let psi_n = g.psi_n.decode()?;
        let pseudo_n = g.pseudo_n.decode()?;
        let n = g.sieve.dim() + 1;
        if psi_n.shape() != (n, n) || pseudo_n.shape() != (n, n) || g.z_n.len() != n {
            return Err(Error::Format("gram system shapes do not match the sieve".into()));
        }
        Ok(GramSystem { psi_n, pseudo_n, z_n: from_pairs(&g.z_n), l_n: g.l_n, sieve: g.sieve, source: g.source })
    }
}

#[derive(Serialize, Deserialize)]
struct GramJson {
    sieve: FourierSieve,
    psi_n: MatrixBlob,
    pseudo_n: MatrixBlob,
    z_n: Vec<[f64; 2]>,
    l_n: f64,
    source: GramSource,
}
