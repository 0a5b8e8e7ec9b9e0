//! Dense Hermitian linear algebra.
//!
//! Gram matrices of Fourier bases under Gaussian laws are graded: their
//! eigenvalues span many orders of magnitude. The cyclic Jacobi method with a
//! relative off-diagonal test computes small eigenvalues of such positive
//! definite matrices to high relative accuracy, which QR-type solvers do not.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

use crate::{CMatrix, RMatrix};

const MAX_SWEEPS: usize = 80;

/// Eigen-decomposition `A = V diag(values) V^H`, values ascending.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(a: &CMatrix) -> Self {
        assert!(a.is_square(), "eigen-decomposition needs a square matrix");
        let n = a.nrows();
        // Row-major working copy, symmetrized.
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = if i == j {
                    Complex64::new(a[(i, i)].re, 0.0)
                } else {
                    0.5 * (a[(i, j)] + a[(j, i)].conj())
                };
            }
        }
        let mut v = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            v[i * n + i] = Complex64::new(1.0, 0.0);
        }
        let eps = f64::EPSILON;
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    let mag = apq.norm();
                    if mag == 0.0 {
                        continue;
                    }
                    let app = m[p * n + p].re;
                    let aqq = m[q * n + q].re;
                    if mag <= eps * (app * aqq).abs().sqrt() {
                        m[p * n + q] = Complex64::new(0.0, 0.0);
                        m[q * n + p] = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    rotated = true;
                    let phase = apq / mag;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let ph_c = phase.conj();
                    // Columns: A <- A J with J = diag(1, conj(phase)) R.
                    for k in 0..n {
                        let akp = m[k * n + p];
                        let akq = m[k * n + q];
                        m[k * n + p] = c * akp - s * ph_c * akq;
                        m[k * n + q] = s * akp + c * ph_c * akq;
                    }
                    // Rows: A <- J^H A.
                    for k in 0..n {
                        let apk = m[p * n + k];
                        let aqk = m[q * n + k];
                        m[p * n + k] = c * apk - s * phase * aqk;
                        m[q * n + k] = s * apk + c * phase * aqk;
                    }
                    m[p * n + p] = Complex64::new(app - t * mag, 0.0);
                    m[q * n + q] = Complex64::new(aqq + t * mag, 0.0);
                    m[p * n + q] = Complex64::new(0.0, 0.0);
                    m[q * n + p] = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * ph_c * vkq;
                        v[k * n + q] = s * vkp + c * ph_c * vkq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[i * n + i].re.total_cmp(&m[j * n + j].re));
        let values = order.iter().map(|&i| m[i * n + i].re).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
        HermitianEigen { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// Spectral condition number; infinite when the smallest eigenvalue is not positive.
    pub fn condition(&self) -> f64 {
        if self.min() <= 0.0 {
            f64::INFINITY
        } else {
            self.max() / self.min()
        }
    }

    /// `V f(Λ) V^H` for a scalar map `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut out = CMatrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            let col = self.vectors.column(k);
            for i in 0..n {
                let vi = col[i] * w;
                for j in 0..n {
                    out[(i, j)] += vi * col[j].conj();
                }
            }
        }
        out
    }

    pub fn inv_sqrt(&self) -> CMatrix {
        self.map(|l| 1.0 / l.sqrt())
    }

    /// Minimum-norm solution, discarding eigenvalues below `rcond * max`.
    pub fn pseudo_solve(&self, b: &DVector<Complex64>, rcond: f64) -> DVector<Complex64> {
        let cut = rcond * self.max().abs();
        let mut x = DVector::zeros(b.len());
        for (k, &lam) in self.values.iter().enumerate() {
            if lam > cut {
                let col = self.vectors.column(k);
                let coef = col.dotc(b) / lam;
                x += col * coef;
            }
        }
        x
    }
}

/// Real symmetric eigen-decomposition through the complex routine.
pub fn symmetric_eigen(a: &RMatrix) -> (Vec<f64>, RMatrix) {
    let eig = HermitianEigen::new(&to_complex(a));
    let vectors = RMatrix::from_fn(a.nrows(), a.ncols(), |i, j| eig.vectors[(i, j)].re);
    (eig.values, vectors)
}

pub fn to_complex(a: &RMatrix) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Cholesky solve followed by iterative refinement. `None` if the matrix is not
/// numerically positive definite.
pub fn solve_pd<T: ComplexField + Copy>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    let chol = a.clone().cholesky()?;
    let mut x = chol.solve(b);
    for _ in 0..3 {
        let r = b - a * &x;
        x += chol.solve(&r);
    }
    Some(x)
}

/// Relative residual `‖A x − b‖ / ‖b‖` (absolute when `b = 0`).
pub fn relative_residual<T: ComplexField + Copy>(a: &DMatrix<T>, x: &DVector<T>, b: &DVector<T>) -> f64
where
    T::RealField: Into<f64>,
{
    let r: f64 = (a * x - b).norm().into();
    let nb: f64 = b.norm().into();
    if nb > 0.0 {
        r / nb
    } else {
        r
    }
}

/// Largest singular value of a Hermitian matrix.
pub fn hermitian_op_norm(a: &CMatrix) -> f64 {
    let eig = HermitianEigen::new(a);
    eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_by_two_eigenvalues() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3.
        let a = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
        let eig = HermitianEigen::new(&a);
        assert!((eig.values[0] - 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 3.0).abs() < 1e-14);
        let recon = eig.map(|l| l);
        assert!((recon - a).norm() < 1e-13);
    }

    #[test]
    fn graded_matrix_small_eigenvalue_is_relatively_accurate() {
        // D A D with D = diag(1, 1e-8, 1e-16) and A well conditioned: the
        // smallest eigenvalue is ~1e-32 and must come out positive and accurate.
        let base = RMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.2, 0.5, 2.0, 0.3, 0.2, 0.3, 2.0]);
        let d = [1.0, 1e-8, 1e-16];
        let graded = RMatrix::from_fn(3, 3, |i, j| d[i] * base[(i, j)] * d[j]);
        let (vals, _) = symmetric_eigen(&graded);
        assert!(vals[0] > 0.0);
        // Leading order: smallest eigenvalue = d3^2 / (A^{-1})_{33}.
        let inv = base.clone().try_inverse().unwrap();
        let expect = 1e-32 / inv[(2, 2)];
        assert!(((vals[0] - expect) / expect).abs() < 1e-6, "{} vs {}", vals[0], expect);
    }

    #[test]
    fn inv_sqrt_whitens() {
        let a = CMatrix::from_row_slice(
            3,
            3,
            &[c(3.0, 0.0), c(1.0, 0.5), c(0.0, -0.2), c(1.0, -0.5), c(2.0, 0.0), c(0.3, 0.1), c(0.0, 0.2), c(0.3, -0.1), c(1.5, 0.0)],
        );
        let eig = HermitianEigen::new(&a);
        let w = eig.inv_sqrt();
        let id = &w * &a * &w;
        assert!((id - CMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn refined_solve() {
        let a = RMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_pd(&a, &b).unwrap();
        assert!(relative_residual(&a, &x, &b) < 1e-15);
        assert!(solve_pd(&RMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), &b).is_none());
    }
}
