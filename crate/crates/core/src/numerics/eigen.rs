//! Cyclic Jacobi eigensolver for small dense Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot `a_pq`, then applies the
//! real symmetric Schur rotation. Sweeps run in row-cyclic order until the
//! off-diagonal Frobenius mass drops below `1e-15·‖A‖_F`.

use num_complex::Complex64;

use super::matrix::{ComplexMatrix, RealMatrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with the matching unitary eigenvector matrix
/// (eigenvectors are the columns).
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V diag(λ) V†`
    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_values(|x| Complex64::new(x, 0.0))
    }

    /// `V diag(f(λ)) V†`
    pub fn map_values(&self, f: impl Fn(f64) -> Complex64) -> ComplexMatrix {
        let n = self.values.len();
        let v = &self.vectors;
        let fv: Vec<Complex64> = self.values.iter().map(|&x| f(x)).collect();
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * fv[k] * v[(j, k)].conj()).sum()
        })
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

/// Diagonalizes a Hermitian matrix `M = V diag(λ) V†`.
pub fn hermitian_eigendecomposition(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let scale = m.max_abs();
    let defect = m.hermiticity_defect();
    if defect > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NonHermitianInput { defect, scale });
    }
    let n = m.rows();
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let total = a.frobenius_norm();
    if total == 0.0 {
        return Ok(sorted(vec![0.0; n], v));
    }

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let values = (0..n).map(|i| a[(i, i)].re).collect();
    Ok(sorted(values, v))
}

fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    if mag <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
        a[(p, q)] = Complex64::new(0.0, 0.0);
        a[(q, p)] = Complex64::new(0.0, 0.0);
        return;
    }
    // phase e^{-iφ} with a_pq = |a_pq| e^{iφ}
    let phase = (apq / mag).conj();
    let tau = (aqq - app) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    // J restricted to (p, q): [[c, s], [-s e^{-iφ}, c e^{-iφ}]]
    let j_pp = Complex64::new(c, 0.0);
    let j_pq = Complex64::new(s, 0.0);
    let j_qp = phase * (-s);
    let j_qq = phase * c;
    let n = a.rows();

    // A ← A J
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * j_pp + akq * j_qp;
        a[(k, q)] = akp * j_pq + akq * j_qq;
    }
    // A ← J† A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = j_pp.conj() * apk + j_qp.conj() * aqk;
        a[(q, k)] = j_pq.conj() * apk + j_qq.conj() * aqk;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
    // V ← V J
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * j_pp + vkq * j_qp;
        v[(k, q)] = vkp * j_pq + vkq * j_qq;
    }
}

fn sorted(values: Vec<f64>, vectors: ComplexMatrix) -> HermitianEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let sorted_vectors = ComplexMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    HermitianEigen {
        values: sorted_values,
        vectors: sorted_vectors,
    }
}

/// `exp(−iθH)` for Hermitian `H`.
pub fn unitary_exp(h: &ComplexMatrix, theta: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eigendecomposition(h)?;
    Ok(eig.map_values(|x| Complex64::from_polar(1.0, -theta * x)))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &ComplexMatrix) -> Result<f64> {
    Ok(hermitian_eigendecomposition(m)?.min_value())
}

/// Spectral norm `‖A‖₂ = sqrt(λ_max(A†A))`.
pub fn operator_norm(a: &ComplexMatrix) -> f64 {
    let ata = a.dagger().matmul(a);
    hermitian_eigendecomposition(&ata.hermitian_part())
        .map(|e| e.max_value().max(0.0).sqrt())
        .unwrap_or(f64::NAN)
}

/// Symmetric real eigendecomposition; eigenvectors as the columns of a real matrix.
pub fn symmetric_eigendecomposition(m: &RealMatrix) -> Result<(Vec<f64>, RealMatrix)> {
    let eig = hermitian_eigendecomposition(&m.to_complex())?;
    let n = m.rows();
    // For real symmetric input the Jacobi rotations stay real up to the pivot phase ±1.
    let vectors = RealMatrix::from_fn(n, n, |i, j| eig.vectors[(i, j)].re);
    Ok((eig.values, vectors))
}

/// Inverse and determinant of a symmetric positive-definite real matrix.
/// Returns `None` when the smallest eigenvalue is below `1e-12·λ_max`.
pub fn spd_inverse(m: &RealMatrix) -> Result<Option<(RealMatrix, f64)>> {
    let (values, vectors) = symmetric_eigendecomposition(m)?;
    let max = values.first().copied().unwrap_or(0.0);
    if values.iter().any(|&x| x <= 1e-12 * max.abs()) || max <= 0.0 {
        return Ok(None);
    }
    let n = m.rows();
    let inv = RealMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| vectors[(i, k)] * vectors[(j, k)] / values[k]).sum()
    });
    let det = values.iter().product();
    Ok(Some((inv, det)))
}
