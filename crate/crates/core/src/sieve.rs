//! Fourier sieves `S(A, D)`, coefficient vectors and dimension schedules.
//!
//! A [`CoefVec`] `c_0..c_D` on half-period `A` represents the real function
//! `x ↦ Re[A^{-1/2} Σ_k c_k exp(i ω_k x)]`. Gram quantities use the
//! orthonormal basis `e_k = (2A)^{-1/2} exp(i ω_k x)`, whose coordinates are
//! `θ_k = √2 c_k`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frequency spacing of the exponential basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyScale {
    /// `ω_k = πk/A`: the basis is `2A`-periodic.
    #[default]
    Periodic,
    /// `ω_k = k/A`.
    Transform,
}

impl FrequencyScale {
    pub fn factor(self) -> f64 {
        match self {
            FrequencyScale::Periodic => PI,
            FrequencyScale::Transform => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(FrequencyScale::Periodic),
            "transform" => Ok(FrequencyScale::Transform),
            other => Err(Error::Config(format!("unknown frequency scale `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrequencyScale::Periodic => "periodic",
            FrequencyScale::Transform => "transform",
        }
    }
}

/// Which coefficients the ℓ1 budget `√A·K_φ` covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum L1Scope {
    /// `Σ_{k≥1} |c_k| ≤ √A·K_φ`, with `|c_0| ≤ √A·K_φ` as a separate cap.
    #[default]
    Modes,
    /// `Σ_{k≥0} |c_k| ≤ √A·K_φ`.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSieve {
    half_period: f64,
    dim: usize,
    k_phi: f64,
    #[serde(default)]
    scale: FrequencyScale,
    #[serde(default)]
    l1_scope: L1Scope,
}

impl FourierSieve {
    /// Modes `k = 0..=dim` on half-period `half_period`, with ℓ1 budget `√A·k_phi`
    /// (`k_phi` may be infinite for an unconstrained space).
    pub fn new(half_period: f64, dim: usize, k_phi: f64) -> Result<Self> {
        if !(half_period.is_finite() && half_period > 0.0) {
            return Err(Error::Config(format!("half-period must be positive, got {half_period}")));
        }
        if k_phi.is_nan() || k_phi <= 0.0 {
            return Err(Error::Config(format!("K_phi must be positive, got {k_phi}")));
        }
        Ok(FourierSieve { half_period, dim, k_phi, scale: FrequencyScale::Periodic, l1_scope: L1Scope::Modes })
    }

    pub fn with_scale(mut self, scale: FrequencyScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_l1_scope(mut self, scope: L1Scope) -> Self {
        self.l1_scope = scope;
        self
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_k_phi(mut self, k_phi: f64) -> Self {
        self.k_phi = k_phi;
        self
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_phi(&self) -> f64 {
        self.k_phi
    }

    pub fn scale(&self) -> FrequencyScale {
        self.scale
    }

    pub fn l1_scope(&self) -> L1Scope {
        self.l1_scope
    }

    /// Spacing `ω_1` between consecutive basis frequencies.
    pub fn step(&self) -> f64 {
        self.scale.factor() / self.half_period
    }

    pub fn omega(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.step()
    }

    /// ℓ1 radius `√A·K_φ` in the `c` normalization.
    pub fn l1_radius(&self) -> f64 {
        self.half_period.sqrt() * self.k_phi
    }

    /// `L_N = Σ_k ‖e_k‖²_∞ = D/(2A)`.
    pub fn l_n(&self) -> f64 {
        self.dim as f64 / (2.0 * self.half_period)
    }

    /// Requirements for a sieve used as an estimation space.
    pub fn check_class(&self) -> Result<()> {
        if self.half_period <= 1.0 {
            return Err(Error::Config(format!("S(A,D) needs A > 1, got {}", self.half_period)));
        }
        if self.dim == 0 {
            return Err(Error::Config("S(A,D) needs D >= 1".into()));
        }
        Ok(())
    }

    /// Same basis functions for the shared modes (equal `A` and scale).
    pub fn same_basis(&self, other: &FourierSieve) -> bool {
        self.scale == other.scale && (self.half_period - other.half_period).abs() <= 1e-12 * self.half_period
    }

    /// `e_k(x) = (2A)^{-1/2} exp(i ω_k x)`.
    pub fn basis(&self, k: usize, x: f64) -> Complex64 {
        Complex64::from_polar((2.0 * self.half_period).powf(-0.5), self.omega(k) * x)
    }
}

/// A real function on a sieve, stored as complex coefficients `c_0..c_D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefVec {
    pub sieve: FourierSieve,
    pub coeffs: Vec<Complex64>,
}

impl CoefVec {
    pub fn new(sieve: FourierSieve, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != sieve.dim + 1 {
            return Err(Error::Config(format!("expected {} coefficients, got {}", sieve.dim + 1, coeffs.len())));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Data("non-finite coefficient".into()));
        }
        Ok(CoefVec { sieve, coeffs })
    }

    pub fn zeros(sieve: FourierSieve) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); sieve.dim + 1];
        CoefVec { sieve, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// `Re[A^{-1/2} Σ_k c_k exp(i ω_k x)]`. The phase of each term is reduced
    /// modulo the period before the trigonometric call.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_complex(x).re
    }

    /// The analytic field `A^{-1/2} Σ_k c_k exp(i ω_k x)`.
    pub fn eval_complex(&self, x: f64) -> Complex64 {
        let period = self.sieve.period();
        let xr = x - period * (x / period).round();
        let step = self.sieve.step();
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate() {
            acc += c * Complex64::cis(k as f64 * step * xr);
        }
        acc / self.sieve.half_period.sqrt()
    }

    /// `Σ_{k≥1} |c_k|`.
    pub fn l1_mass(&self) -> f64 {
        self.coeffs.iter().skip(1).map(|c| c.norm()).sum()
    }

    /// `A^{-1/2} Σ_k |c_k|`, an upper bound on the sup-norm.
    pub fn sup_bound(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum::<f64>() / self.sieve.half_period.sqrt()
    }

    /// Membership in the ℓ1 ball (with relative slack `tol`).
    pub fn is_feasible(&self, tol: f64) -> bool {
        let r = self.sieve.l1_radius();
        if !r.is_finite() {
            return true;
        }
        let slack = r * (1.0 + tol);
        match self.sieve.l1_scope {
            L1Scope::Modes => self.l1_mass() <= slack && self.coeffs[0].norm() <= slack,
            L1Scope::All => self.l1_mass() + self.coeffs[0].norm() <= slack,
        }
    }

    /// Euclidean projection onto the ℓ1 ball of the sieve. Under [`L1Scope::Modes`]
    /// `c_0` is left unchanged.
    pub fn project_l1(&self) -> CoefVec {
        let r = self.sieve.l1_radius();
        let mut out = self.clone();
        let start = match self.sieve.l1_scope {
            L1Scope::Modes => 1,
            L1Scope::All => 0,
        };
        project_group_l1(&mut out.coeffs[start..], r);
        out
    }

    /// Orthonormal-basis coordinates `θ_k = √2 c_k`.
    pub fn theta(&self) -> Vec<Complex64> {
        self.coeffs.iter().map(|c| c * std::f64::consts::SQRT_2).collect()
    }

    pub fn from_theta(sieve: FourierSieve, theta: &[Complex64]) -> Result<Self> {
        CoefVec::new(sieve, theta.iter().map(|t| t / std::f64::consts::SQRT_2).collect())
    }

    /// Real coordinates `(Re θ_0, Re θ_1, Im θ_1, …)`. `Im θ_0` does not affect the
    /// represented function and is dropped.
    pub fn real_coords(&self) -> Vec<f64> {
        let theta = self.theta();
        let mut x = Vec::with_capacity(2 * self.sieve.dim + 1);
        x.push(theta[0].re);
        for t in &theta[1..] {
            x.push(t.re);
            x.push(t.im);
        }
        x
    }

    pub fn from_real_coords(sieve: FourierSieve, x: &[f64]) -> Result<Self> {
        if x.len() != 2 * sieve.dim + 1 {
            return Err(Error::Config(format!("expected {} real coordinates, got {}", 2 * sieve.dim + 1, x.len())));
        }
        let mut theta = vec![Complex64::new(x[0], 0.0)];
        for k in 0..sieve.dim {
            theta.push(Complex64::new(x[1 + 2 * k], x[2 + 2 * k]));
        }
        CoefVec::from_theta(sieve, &theta)
    }

    /// Coefficient-wise difference on the same sieve.
    pub fn sub(&self, other: &CoefVec) -> Result<CoefVec> {
        if !self.sieve.same_basis(&other.sieve) {
            return Err(Error::Config("coefficient vectors live on different sieves".into()));
        }
        let n = self.coeffs.len().max(other.coeffs.len());
        let get = |v: &[Complex64], k: usize| v.get(k).copied().unwrap_or_default();
        let coeffs = (0..n).map(|k| get(&self.coeffs, k) - get(&other.coeffs, k)).collect();
        Ok(CoefVec { sieve: self.sieve.clone().with_dim(n - 1), coeffs })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# A={} D={} Kphi={} scale={}",
            self.sieve.half_period,
            self.sieve.dim,
            self.sieve.k_phi,
            self.sieve.scale.name()
        )?;
        writeln!(w, "k,re,im")?;
        for (k, c) in self.coeffs.iter().enumerate() {
            writeln!(w, "{},{},{}", k, c.re, c.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty coefficient file".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("missing `# A=.. D=.. Kphi=..` header".into()))?;
        let (mut a, mut d, mut k, mut scale) = (None, None, None, FrequencyScale::Periodic);
        for tok in header.split_whitespace() {
            let (key, val) = tok.split_once('=').ok_or_else(|| Error::Format(format!("bad header token `{tok}`")))?;
            let num = || val.parse::<f64>().map_err(|_| Error::Format(format!("bad value in `{tok}`")));
            match key {
                "A" => a = Some(num()?),
                "D" => d = Some(val.parse::<usize>().map_err(|_| Error::Format(format!("bad value in `{tok}`")))?),
                "Kphi" => k = Some(num()?),
                "scale" => scale = FrequencyScale::parse(val).map_err(|e| Error::Format(e.to_string()))?,
                _ => {}
            }
        }
        let (a, d, k) = match (a, d, k) {
            (Some(a), Some(d), Some(k)) => (a, d, k),
            _ => return Err(Error::Format("header must define A, D and Kphi".into())),
        };
        let sieve = FourierSieve::new(a, d, k)?.with_scale(scale);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); d + 1];
        let mut seen = vec![false; d + 1];
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "k,re,im" {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("expected `k,re,im`, got `{line}`")));
            }
            let bad = || Error::Format(format!("unparsable row `{line}`"));
            let idx: usize = parts[0].trim().parse().map_err(|_| bad())?;
            let re: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let im: f64 = parts[2].trim().parse().map_err(|_| bad())?;
            if idx > d {
                return Err(Error::Format(format!("mode {idx} exceeds D={d}")));
            }
            coeffs[idx] = Complex64::new(re, im);
            seen[idx] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Format("coefficient rows missing".into()));
        }
        CoefVec::new(sieve, coeffs)
    }
}

/// Projects complex entries onto `{Σ |z_k| ≤ radius}` in place.
pub fn project_group_l1(z: &mut [Complex64], radius: f64) {
    let moduli: Vec<f64> = z.iter().map(|c| c.norm()).collect();
    let total: f64 = moduli.iter().sum();
    if !radius.is_finite() || total <= radius {
        return;
    }
    let shrink = simplex_threshold(&moduli, radius);
    for (c, m) in z.iter_mut().zip(&moduli) {
        let new = (m - shrink).max(0.0);
        *c = if *m > 0.0 { *c * (new / m) } else { Complex64::new(0.0, 0.0) };
    }
}

/// Soft threshold `τ` with `Σ max(m_k − τ, 0) = radius` for nonnegative `m` whose sum exceeds `radius`.
pub fn simplex_threshold(m: &[f64], radius: f64) -> f64 {
    let mut sorted = m.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - radius) / (j + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    tau.max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ScheduleMode {
    Rate { zeta: f64, horizon: f64, delta: f64 },
    EigenBound { a_a: f64, a_d: f64 },
    Fixed,
}

/// Half-period and dimension for sample size `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub half_period: f64,
    pub dim: usize,
    pub mode: ScheduleMode,
}

/// Ceiling that ignores rounding noise just above an integer.
fn ceil_tol(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_n(n: f64) -> Result<()> {
    if !(n >= 2.0) || !n.is_finite() {
        return Err(Error::Domain(format!("schedules need N >= 2, got {n}")));
    }
    Ok(())
}

/// `A_N = √(2(ζ²+T) log N)`, `D_N = ⌈√((2+δ)(ζ²+T)/ζ²) log N⌉`.
pub fn schedule_rate(n: f64, zeta: f64, horizon: f64, delta: f64) -> Result<Schedule> {
    check_n(n)?;
    if !(zeta > 0.0 && horizon > 0.0 && delta > 0.0) {
        return Err(Error::Domain("zeta, T and delta must be positive".into()));
    }
    let v = zeta * zeta + horizon;
    let log_n = n.ln();
    let half_period = (2.0 * v * log_n).sqrt();
    let dim = ceil_tol(((2.0 + delta) * v / (zeta * zeta)).sqrt() * log_n).max(1);
    Ok(Schedule { half_period, dim, mode: ScheduleMode::Rate { zeta, horizon, delta } })
}

/// `A_N = a_A √(log N)`, `D_N = ⌈a_D log N⌉`.
pub fn schedule_eigen_bound(n: f64, a_a: f64, a_d: f64) -> Result<Schedule> {
    check_n(n)?;
    if !(a_a > 0.0 && a_d > 0.0) {
        return Err(Error::Domain("a_A and a_D must be positive".into()));
    }
    let log_n = n.ln();
    Ok(Schedule {
        half_period: a_a * log_n.sqrt(),
        dim: ceil_tol(a_d * log_n).max(1),
        mode: ScheduleMode::EigenBound { a_a, a_d },
    })
}

/// Balanced ergodic-case constants: `a_D²ζ²/a_A² = a_A²/(2ζ²) = (1−ε)/4`.
pub fn eigen_bound_constants(zeta: f64, eps: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("epsilon must lie in [0, 1), got {eps}")));
    }
    if !(zeta > 0.0) {
        return Err(Error::Domain("zeta must be positive".into()));
    }
    let a_a2 = (1.0 - eps) * zeta * zeta / 2.0;
    let a_d2 = (1.0 - eps) * a_a2 / (4.0 * zeta * zeta);
    Ok((a_a2.sqrt(), a_d2.sqrt()))
}

/// The admissibility inequality `2a_D²ζ²/a_A² + a_A²/ζ² < 1`.
pub fn eigen_bound_admissible(a_a: f64, a_d: f64, zeta: f64) -> bool {
    2.0 * a_d * a_d * zeta * zeta / (a_a * a_a) + a_a * a_a / (zeta * zeta) < 1.0
}

impl Schedule {
    pub fn sieve(&self, k_phi: f64, scale: FrequencyScale) -> Result<FourierSieve> {
        Ok(FourierSieve::new(self.half_period, self.dim, k_phi)?.with_scale(scale))
    }

    /// Smallest multiple of `base` that is at least `A_N`, so that a function
    /// on half-period `base` lies in the span of the scheduled sieve.
    pub fn commensurate_half_period(&self, base: f64) -> f64 {
        let ratio = self.half_period / base;
        base * (ceil_tol(ratio).max(1) as f64)
    }
}
