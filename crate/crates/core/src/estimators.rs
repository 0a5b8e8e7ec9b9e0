//! Estimators of the interaction function: ℓ1-constrained empirical risk
//! minimization, plain least squares, and the truncated least-squares rule,
//! together with the good events `Λ_N` and `Ω_N`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::empirics::GramSystem;
use crate::error::{Error, Result};
use crate::linalg::{relative_residual, solve_pd, symmetric_eigen, HermitianEigen};
use crate::sieve::{project_group_l1, CoefVec, FourierSieve, L1Scope};
use crate::{CMatrix, RMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    FrankWolfe,
    ProjectedGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmSettings {
    pub max_iters: usize,
    /// Relative optimality tolerance: duality gap (bounded sets) or gradient norm (unbounded).
    pub tol: f64,
    pub solver: Solver,
    /// Projected-gradient step as a multiple of `1/L`.
    pub step_scale: f64,
    /// Adaptive momentum restart for projected gradient.
    pub restart: bool,
}

impl Default for ErmSettings {
    fn default() -> Self {
        ErmSettings { max_iters: 1_000_000, tol: 1e-9, solver: Solver::ProjectedGradient, step_scale: 1.0, restart: true }
    }
}

impl ErmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale <= 1.0) {
            return Err(Error::Config("step_scale must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub duality_gap: Option<f64>,
    /// `‖Ψ_N⁻¹‖_op` of the Hermitian Gram matrix (infinite if singular).
    pub inv_op_norm: f64,
    pub l_n: f64,
    /// Condition number of the real quadratic form.
    pub condition: f64,
    pub lambda_statistic: Option<f64>,
    pub lambda_cutoff: Option<f64>,
    pub growth_bound: Option<f64>,
    pub lambda_n: Option<bool>,
    pub solver: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateResult {
    pub coeffs: CoefVec,
    pub truncated: bool,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    pub fn to_json(&self) -> serde_json::Value {
        let coeffs: Vec<serde_json::Value> = self
            .coeffs
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| serde_json::json!({"k": k, "re": c.re, "im": c.im}))
            .collect();
        serde_json::json!({
            "sieve": self.coeffs.sieve,
            "coeffs": coeffs,
            "truncated": self.truncated,
            "diagnostics": self.diagnostics,
        })
    }
}

/// `q(x) = xᵀ G x − 2 hᵀ x` over `{|x_0| ≤ cap, Σ_groups ‖x_g‖ ≤ radius}`,
/// where groups are `(x_{2k−1}, x_{2k})`, and under [`L1Scope::All`] also `x_0`.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    pub g: RMatrix,
    pub h: DVector<f64>,
    pub radius: f64,
    pub cap: f64,
    pub scope: L1Scope,
}

/// Result of a quadratic solve.
#[derive(Clone, Debug)]
pub struct QuadSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gap: Option<f64>,
}

impl QuadraticProblem {
    /// Constraint set of `sieve` expressed in real orthonormal coordinates (`θ = √2 c`).
    pub fn for_sieve(g: RMatrix, h: DVector<f64>, sieve: &FourierSieve) -> Self {
        let r = std::f64::consts::SQRT_2 * sieve.l1_radius();
        QuadraticProblem { g, h, radius: r, cap: r, scope: sieve.l1_scope() }
    }

    pub fn unconstrained(g: RMatrix, h: DVector<f64>) -> Self {
        QuadraticProblem { g, h, radius: f64::INFINITY, cap: f64::INFINITY, scope: L1Scope::Modes }
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    fn bounded(&self) -> bool {
        self.radius.is_finite() && (self.cap.is_finite() || self.scope == L1Scope::All)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.g * x)) - 2.0 * self.h.dot(x)
    }

    fn groups(&self) -> usize {
        (self.n() - 1) / 2
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        let m = self.groups();
        let mut z: Vec<Complex64> = Vec::with_capacity(m + 1);
        if self.scope == L1Scope::All {
            z.push(Complex64::new(x[0], 0.0));
        } else {
            out[0] = x[0].clamp(-self.cap, self.cap);
        }
        for k in 0..m {
            z.push(Complex64::new(x[2 * k + 1], x[2 * k + 2]));
        }
        project_group_l1(&mut z, self.radius);
        let off = if self.scope == L1Scope::All {
            out[0] = z[0].re;
            1
        } else {
            0
        };
        for k in 0..m {
            out[2 * k + 1] = z[k + off].re;
            out[2 * k + 2] = z[k + off].im;
        }
        out
    }

    /// Vertex of the feasible set minimizing `⟨grad, s⟩`, as sparse `(index, value)` pairs.
    fn lmo(&self, grad: &DVector<f64>) -> Vec<(usize, f64)> {
        let m = self.groups();
        let mut best = (0.0, None::<usize>);
        let norm_k = |k: usize| (grad[2 * k + 1].powi(2) + grad[2 * k + 2].powi(2)).sqrt();
        for k in 0..m {
            let v = norm_k(k);
            if v > best.0 {
                best = (v, Some(k));
            }
        }
        let mut s = Vec::with_capacity(3);
        match self.scope {
            L1Scope::Modes => {
                if grad[0] != 0.0 {
                    s.push((0, -self.cap * grad[0].signum()));
                }
                if let (v, Some(k)) = best {
                    s.push((2 * k + 1, -self.radius * grad[2 * k + 1] / v));
                    s.push((2 * k + 2, -self.radius * grad[2 * k + 2] / v));
                }
            }
            L1Scope::All => {
                if grad[0].abs() >= best.0 {
                    if grad[0] != 0.0 {
                        s.push((0, -self.radius * grad[0].signum()));
                    }
                } else if let (v, Some(k)) = best {
                    s.push((2 * k + 1, -self.radius * grad[2 * k + 1] / v));
                    s.push((2 * k + 2, -self.radius * grad[2 * k + 2] / v));
                }
            }
        }
        s
    }

    /// Frank–Wolfe duality gap `⟨∇q(x), x − s⟩` (an upper bound on `q(x) − q*`).
    pub fn gap(&self, x: &DVector<f64>) -> f64 {
        let grad = (&self.g * x - &self.h) * 2.0;
        let s = self.lmo(&grad);
        grad.dot(x) - s.iter().map(|&(i, v)| grad[i] * v).sum::<f64>()
    }

    pub fn solve(&self, settings: &ErmSettings) -> Result<QuadSolution> {
        settings.validate()?;
        match settings.solver {
            Solver::FrankWolfe if self.bounded() => Ok(self.frank_wolfe(settings)),
            _ => Ok(self.projected_gradient(settings)),
        }
    }

    fn frank_wolfe(&self, settings: &ErmSettings) -> QuadSolution {
        let n = self.n();
        let mut x = DVector::zeros(n);
        let mut gx = DVector::zeros(n);
        let mut iterations = 0;
        let mut converged = false;
        let mut gap = f64::INFINITY;
        for it in 0..settings.max_iters {
            iterations = it + 1;
            if it % 64 == 63 {
                gx = &self.g * &x;
            }
            let grad = (&gx - &self.h) * 2.0;
            let s = self.lmo(&grad);
            gap = grad.dot(&x) - s.iter().map(|&(i, v)| grad[i] * v).sum::<f64>();
            let q = x.dot(&gx) - 2.0 * self.h.dot(&x);
            if gap <= settings.tol * (1.0 + q.abs()) {
                converged = true;
                break;
            }
            let mut gs = DVector::zeros(n);
            for &(i, v) in &s {
                gs.axpy(v, &self.g.column(i), 1.0);
            }
            let mut d = -&x;
            for &(i, v) in &s {
                d[i] += v;
            }
            let gd = gs - &gx;
            let curv = d.dot(&gd);
            let gamma = if curv > 0.0 { (gap / (2.0 * curv)).min(1.0) } else { 1.0 };
            x.axpy(gamma, &d, 1.0);
            gx.axpy(gamma, &gd, 1.0);
        }
        let objective = self.objective(&x);
        QuadSolution { x, objective, iterations, converged, gap: Some(gap.max(0.0)) }
    }

    fn projected_gradient(&self, settings: &ErmSettings) -> QuadSolution {
        let n = self.n();
        let (vals, _) = symmetric_eigen(&self.g);
        let lmax = vals.last().copied().unwrap_or(0.0).max(0.0);
        let bounded = self.bounded();
        if lmax == 0.0 {
            // Linear objective: the minimizer sits on the boundary (or anywhere if h = 0).
            let x = if self.h.norm() == 0.0 || !bounded {
                DVector::zeros(n)
            } else {
                let s = self.lmo(&(-&self.h * 2.0));
                let mut x = DVector::zeros(n);
                for (i, v) in s {
                    x[i] = v;
                }
                x
            };
            let objective = self.objective(&x);
            let gap = bounded.then(|| self.gap(&x));
            return QuadSolution { x, objective, iterations: 1, converged: true, gap };
        }
        let step = settings.step_scale / (2.0 * lmax);
        let mut x = self.project(&DVector::zeros(n));
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let scale = 1.0 + self.h.norm();
        let mut iterations = 0;
        let mut converged = false;
        let mut gap = None;
        for it in 0..settings.max_iters {
            iterations = it + 1;
            let grad = (&self.g * &y - &self.h) * 2.0;
            let x_new = self.project(&(&y - grad * step));
            // Gradient restart test; objective comparisons lose precision near the optimum.
            if settings.restart && (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
                t = 1.0;
                y = x_new.clone();
            } else {
                let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
                t = t_new;
            }
            x = x_new;
            if it % 8 == 0 {
                if bounded {
                    let g = self.gap(&x);
                    gap = Some(g);
                    if g <= settings.tol * (1.0 + self.objective(&x).abs()) {
                        converged = true;
                        break;
                    }
                } else {
                    let grad_x = (&self.g * &x - &self.h) * 2.0;
                    let mapped = (&x - self.project(&(&x - &grad_x * step))) / step;
                    if mapped.norm() <= settings.tol * scale {
                        converged = true;
                        break;
                    }
                }
            }
        }
        if bounded {
            gap = Some(self.gap(&x).max(0.0));
        }
        QuadSolution { objective: self.objective(&x), x, iterations, converged, gap }
    }
}

fn hermitian_inv_norm(psi: &CMatrix) -> f64 {
    let lmin = HermitianEigen::new(psi).min();
    if lmin > 0.0 {
        1.0 / lmin
    } else {
        f64::INFINITY
    }
}

/// ℓ1-constrained empirical risk minimizer over the sieve of `gram`.
pub fn erm_compact(gram: &GramSystem, settings: &ErmSettings) -> Result<EstimateResult> {
    let (g, h) = gram.real_system();
    let (vals, _) = symmetric_eigen(&g);
    let lmax = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lmin = vals.first().copied().unwrap_or(0.0);
    if lmin < -1e-10 * lmax {
        return Err(Error::Data(format!("Gram form is not PSD: smallest eigenvalue {lmin:e}")));
    }
    let problem = QuadraticProblem::for_sieve(g, h, &gram.sieve);
    let sol = problem.solve(settings)?;
    let coeffs = CoefVec::from_real_coords(gram.sieve.clone(), sol.x.as_slice())?.project_l1();
    let solver = match settings.solver {
        Solver::FrankWolfe if problem.bounded() => "frank-wolfe",
        _ => "projected-gradient",
    };
    if !sol.converged {
        log::warn!("ERM stopped after {} iterations without meeting tol {} (gap {:?}, objective {:e})", sol.iterations, settings.tol, sol.gap, sol.objective);
    }
    Ok(EstimateResult {
        coeffs,
        truncated: false,
        diagnostics: Diagnostics {
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
            duality_gap: sol.gap,
            inv_op_norm: hermitian_inv_norm(&gram.psi_n),
            l_n: gram.l_n,
            condition: if lmin > 0.0 { lmax / lmin } else { f64::INFINITY },
            solver: solver.into(),
            ..Diagnostics::default()
        },
    })
}

/// `1/√ε`: largest condition number accepted by the direct solvers.
pub const MAX_CONDITION: f64 = 67_108_864.0;

fn solve_checked(g: &RMatrix, h: &DVector<f64>) -> Result<DVector<f64>> {
    let (vals, _) = symmetric_eigen(g);
    let lmin = vals.first().copied().unwrap_or(0.0);
    let lmax = vals.last().copied().unwrap_or(0.0);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning { condition });
    }
    let x = solve_pd(g, h).ok_or(Error::Conditioning { condition })?;
    if relative_residual(g, &x, h) > 1e-10 {
        return Err(Error::Conditioning { condition });
    }
    Ok(x)
}

/// Least-squares coefficients: the unconstrained minimizer of `γ_N` over the sieve span.
pub fn lse(gram: &GramSystem) -> Result<CoefVec> {
    let (g, h) = gram.real_system();
    let x = solve_checked(&g, &h)?;
    CoefVec::from_real_coords(gram.sieve.clone(), x.as_slice())
}

/// `Ψ_N⁻¹ Z_N` in complex arithmetic (the minimizer of the analytic contrast).
pub fn hermitian_lse(gram: &GramSystem) -> Result<CoefVec> {
    let eig = HermitianEigen::new(&gram.psi_n);
    let condition = eig.condition();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Conditioning { condition });
    }
    let z = DVector::from_column_slice(&gram.z_n);
    let theta = solve_pd(&gram.psi_n, &z).ok_or(Error::Conditioning { condition })?;
    if relative_residual(&gram.psi_n, &theta, &z) > 1e-10 {
        return Err(Error::Conditioning { condition });
    }
    CoefVec::from_theta(gram.sieve.clone(), theta.as_slice())
}

/// Threshold rule for the truncated estimator, `c_{η,T} = 1/(72ηT)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub eta: f64,
    pub horizon: f64,
}

impl Truncation {
    /// Requires `η ≥ 5`.
    pub fn new(eta: f64, horizon: f64) -> Result<Self> {
        if !(eta >= 5.0) {
            return Err(Error::Config(format!("eta must be at least 5 (got {eta}); use Truncation::with_override")));
        }
        Truncation::with_override(eta, horizon)
    }

    /// Any `η > 0`.
    pub fn with_override(eta: f64, horizon: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("T must be positive, got {horizon}")));
        }
        Ok(Truncation { eta, horizon })
    }

    pub fn c_eta_t(&self) -> f64 {
        1.0 / (72.0 * self.eta * self.horizon)
    }

    /// `c_{η,T} N T / log(N T)`.
    pub fn cutoff(&self, n: usize) -> Result<f64> {
        let nt = n as f64 * self.horizon;
        if !(nt > 1.0) {
            return Err(Error::Domain(format!("N*T = {nt} <= 1 leaves the threshold undefined")));
        }
        Ok(self.c_eta_t() * nt / nt.ln())
    }

    /// The growth bound on the population quantity, `c_{η,T} N T / (4 log(N T))`.
    pub fn growth_bound(&self, n: usize) -> Result<f64> {
        Ok(self.cutoff(n)? / 4.0)
    }
}

/// `L_N² ‖M⁻¹‖²_op` for a Hermitian `M`.
pub fn lambda_statistic(l_n: f64, psi: &CMatrix) -> f64 {
    let inv = hermitian_inv_norm(psi);
    l_n * l_n * inv * inv
}

/// Least squares kept only on `Λ_N = {L_N² ‖Ψ_N⁻¹‖²_op ≤ c_{η,T} NT/log(NT)}`, zero otherwise.
pub fn truncated_lse(gram: &GramSystem, rule: &Truncation) -> Result<EstimateResult> {
    let n = gram.source.n_particles;
    let cutoff = rule.cutoff(n)?;
    let inv = hermitian_inv_norm(&gram.psi_n);
    let stat = gram.l_n * gram.l_n * inv * inv;
    let keep = stat <= cutoff;
    let coeffs = if keep { lse(gram)? } else { CoefVec::zeros(gram.sieve.clone()) };
    let (g, _) = gram.real_system();
    let (vals, _) = symmetric_eigen(&g);
    let lmin = vals.first().copied().unwrap_or(0.0);
    Ok(EstimateResult {
        diagnostics: Diagnostics {
            objective: gram.objective(&coeffs),
            iterations: 0,
            converged: true,
            duality_gap: None,
            inv_op_norm: inv,
            l_n: gram.l_n,
            condition: if lmin > 0.0 { vals.last().unwrap() / lmin } else { f64::INFINITY },
            lambda_statistic: Some(stat),
            lambda_cutoff: Some(cutoff),
            growth_bound: Some(cutoff / 4.0),
            lambda_n: Some(keep),
            solver: "direct".into(),
        },
        coeffs,
        truncated: !keep,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Events {
    pub lambda_n: bool,
    pub omega_n: bool,
    /// Eigenvalues of `Ψ^{-1/2} Ψ_N Ψ^{-1/2}`, ascending.
    pub spectrum: Vec<f64>,
    pub lambda_statistic: f64,
    pub lambda_cutoff: f64,
    /// `L_N² ‖Ψ⁻¹‖²_op` for the population matrix.
    pub growth_statistic: f64,
    pub growth_bound: f64,
}

impl Events {
    pub fn growth_holds(&self) -> bool {
        self.growth_statistic <= self.growth_bound
    }
}

/// `Λ_N` from the truncation inequality; `Ω_N` iff the whitened spectrum lies in `[1/2, 3/2]`.
pub fn event_indicators(gram: &GramSystem, psi_oracle: &CMatrix, rule: &Truncation) -> Result<Events> {
    if psi_oracle.shape() != gram.psi_n.shape() {
        return Err(Error::Config("oracle and empirical Gram matrices differ in size".into()));
    }
    let eig = HermitianEigen::new(psi_oracle);
    if !(eig.min() > 0.0) {
        return Err(Error::Domain(format!("oracle Gram matrix is not positive definite (eigenvalue {:e})", eig.min())));
    }
    let w = eig.inv_sqrt();
    let whitened = &w * &gram.psi_n * &w;
    let spectrum = HermitianEigen::new(&whitened).values;
    let omega_n = spectrum.iter().all(|&v| (0.5..=1.5).contains(&v));
    let cutoff = rule.cutoff(gram.source.n_particles)?;
    let stat = lambda_statistic(gram.l_n, &gram.psi_n);
    let a4 = gram.l_n * gram.l_n / (eig.min() * eig.min());
    Ok(Events {
        lambda_n: stat <= cutoff,
        omega_n,
        spectrum,
        lambda_statistic: stat,
        lambda_cutoff: cutoff,
        growth_statistic: a4,
        growth_bound: cutoff / 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_constant() {
        let r = Truncation::new(5.0, 1.0).unwrap();
        assert!((r.c_eta_t() - 1.0 / 360.0).abs() < 1e-18);
        assert!(Truncation::new(4.0, 1.0).is_err());
        assert!(Truncation::with_override(4.0, 1.0).is_ok());
        assert!(matches!(r.cutoff(1), Err(Error::Domain(_))));
    }

    #[test]
    fn projection_respects_cap_and_radius() {
        let g = RMatrix::identity(5, 5);
        let p = QuadraticProblem { g, h: DVector::zeros(5), radius: 1.0, cap: 0.5, scope: L1Scope::Modes };
        let x = p.project(&DVector::from_vec(vec![2.0, 3.0, 4.0, 0.0, 0.0]));
        assert_eq!(x[0], 0.5);
        assert!(((x[1] * x[1] + x[2] * x[2]).sqrt() - 1.0).abs() < 1e-14);
    }
}
