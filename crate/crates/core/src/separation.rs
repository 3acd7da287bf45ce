//! Output recombination to equal, uncorrelated detector noise, and the
//! per-detector operators built on it.
//!
//! New outputs `s′ = T s` with `T = √S Λ^{−1/2} Oᵀ`, where `S_det = O Λ Oᵀ` and
//! `S` is the geometric mean of `Λ`. Counting fields transform as `χ = Tᵀ χ′`,
//! which fixes
//!
//! ```text
//! S′_det = T S_det Tᵀ = S·I,   a′_cross = T a_cross,   S′_cross = S_cross Tᵀ,   K′ = T K.
//! ```
//!
//! Operator noises and susceptibilities are untouched.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{dissipator, lindblad_from_coefficients, lindblad_set, LindbladTerm, MeasurementSetup, NoiseData};
use crate::numerics::eigen::{hermitian_eigendecomposition, symmetric_eigendecomposition};
use crate::numerics::{ComplexMatrix, RealMatrix};

#[derive(Clone, Debug)]
pub struct SeparatedSetup {
    /// The setup in the new outputs; its detector noise is `S·I`.
    pub base: MeasurementSetup,
    pub noise_scale: f64,
    /// `s_new = T s_old`
    pub transform: RealMatrix,
    pub inverse_transform: RealMatrix,
    pub b_ops: Vec<ComplexMatrix>,
    pub d_ops: Vec<ComplexMatrix>,
    pub r_ops: Vec<ComplexMatrix>,
}

impl SeparatedSetup {
    pub fn n_detectors(&self) -> usize {
        self.base.n_detectors()
    }

    /// Original outputs from new ones, `s = T⁻¹ s′`.
    pub fn to_original(&self, s_new: &[f64]) -> Vec<f64> {
        self.inverse_transform.matvec(s_new)
    }

    pub fn to_separated(&self, s_old: &[f64]) -> Vec<f64> {
        self.transform.matvec(s_old)
    }
}

/// Per-detector operators of a separated setup.
#[derive(Clone, Debug)]
pub struct DetectorOperators {
    /// `B_i = K_i/S`
    pub b: Vec<ComplexMatrix>,
    /// `D_i = a_iα O_α`
    pub d: Vec<ComplexMatrix>,
    /// `R_i = 2 S_iα O_α`
    pub r: Vec<ComplexMatrix>,
    /// `K_i = Σ_α (S_αi − i a_iα/2) O_α`
    pub k: Vec<ComplexMatrix>,
}

fn combine(ops: &[ComplexMatrix], coeff: impl Fn(usize) -> Complex64, dim: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(dim, dim);
    for (a, o) in ops.iter().enumerate() {
        out.axpy(coeff(a), o);
    }
    out
}

fn operators_for(setup: &MeasurementSetup, scale: f64) -> DetectorOperators {
    let dim = setup.dim();
    let ops = &setup.measured_ops;
    let noise = &setup.noise;
    let n = setup.n_detectors();
    let k = setup.drift_operators();
    DetectorOperators {
        b: k.iter().map(|k| k.scale_real(1.0 / scale)).collect(),
        d: (0..n)
            .map(|i| combine(ops, |a| Complex64::new(noise.a_cross_at(i, a), 0.0), dim))
            .collect(),
        r: (0..n)
            .map(|i| combine(ops, |a| Complex64::new(2.0 * noise.s_cross_at(a, i), 0.0), dim))
            .collect(),
        k,
    }
}

pub fn separate(setup: &MeasurementSetup) -> Result<SeparatedSetup> {
    let noise = &setup.noise;
    let n = noise.n_detectors();
    let s_det = &noise.s_det;
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || s_det[(i, j)] == 0.0));
    // A diagonal noise matrix keeps the output order and signs.
    let (values, vectors) = if diagonal {
        ((0..n).map(|i| s_det[(i, i)]).collect(), RealMatrix::identity(n))
    } else {
        symmetric_eigendecomposition(s_det)?
    };
    let max = values.iter().copied().fold(0.0, f64::max);
    if values.iter().any(|&v| !(v > 1e-12 * max)) {
        return Err(Error::SingularNoise);
    }
    let scale = (values.iter().map(|v| v.ln()).sum::<f64>() / n as f64).exp();
    let transform = RealMatrix::from_fn(n, n, |k, i| (scale / values[k]).sqrt() * vectors[(i, k)]);
    let inverse_transform = RealMatrix::from_fn(n, n, |i, k| vectors[(i, k)] * (values[k] / scale).sqrt());

    let new_det = transform.matmul(s_det).matmul(&transform.transpose());
    let defect = new_det.max_abs_diff(&RealMatrix::identity(n).scaled(scale));
    if defect > 1e-12 * scale.max(1.0) * 10.0 {
        return Err(Error::InvalidInput(format!("separation left off-diagonal noise {defect:e}")));
    }
    let m = noise.n_operators();
    let s_cross = if m == 0 {
        RealMatrix::zeros(0, n)
    } else {
        noise.s_cross.matmul(&transform.transpose())
    };
    let a_cross = if m == 0 { RealMatrix::zeros(n, 0) } else { transform.matmul(&noise.a_cross) };
    let new_noise = NoiseData::new(
        RealMatrix::identity(n).scaled(scale),
        s_cross,
        noise.s_op.clone(),
        a_cross,
        noise.a_op.clone(),
    )?;
    let base = MeasurementSetup::new(
        setup.hamiltonian.clone(),
        setup.measured_ops.clone(),
        new_noise,
        format!("{} (separated)", setup.label),
    )?;
    let ops = operators_for(&base, scale);
    Ok(SeparatedSetup {
        base,
        noise_scale: scale,
        transform,
        inverse_transform,
        b_ops: ops.b,
        d_ops: ops.d,
        r_ops: ops.r,
    })
}

pub fn build_detector_operators(separated: &SeparatedSetup) -> DetectorOperators {
    operators_for(&separated.base, separated.noise_scale)
}

/// Residual decoherence `C_αβ − C_αi C_iβ/S` left after the measurement minimum.
pub fn residual_coupling(separated: &SeparatedSetup) -> ComplexMatrix {
    let noise = &separated.base.noise;
    let cross = noise.cross_coupling();
    &noise.operator_coupling() - &cross.matmul(&cross.dagger()).scale_real(1.0 / separated.noise_scale)
}

/// Lindblad channels of the residual decoherence.
pub fn residual_lindblad(separated: &SeparatedSetup) -> Result<Vec<LindbladTerm>> {
    lindblad_from_coefficients(&residual_coupling(separated), &separated.base.measured_ops, "residual decoherence")
}

/// `S Σ_i (B_i ρ B_i† − ½{B_i†B_i, ρ})`
pub fn measurement_dissipator(separated: &SeparatedSetup, rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(rho.rows(), rho.cols());
    for b in &separated.b_ops {
        let term = LindbladTerm::new(1.0, b.clone());
        out += &term.dissipate(rho).scale_real(separated.noise_scale);
    }
    out
}

/// Largest deviation between the B-operator form of the s-independent generator
/// (measurement part plus residual decoherence) and the operator-block Lindblad set.
/// Fails when the residual decoherence is not positive semidefinite.
pub fn equivalent_generator_check(separated: &SeparatedSetup, samples: &[ComplexMatrix]) -> Result<f64> {
    let residual = residual_lindblad(separated)?;
    let full = lindblad_set(&separated.base)?;
    let mut worst: f64 = 0.0;
    for rho in samples {
        let mut lhs = measurement_dissipator(separated, rho);
        lhs += &dissipator(&residual, rho);
        let rhs = dissipator(&full, rho);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    Ok(worst)
}

/// Smallest eigenvalue of the residual decoherence matrix.
pub fn residual_margin(separated: &SeparatedSetup) -> Result<f64> {
    if separated.base.n_operators() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(hermitian_eigendecomposition(&residual_coupling(separated).hermitian_part())?.min_value())
}

trait Scaled {
    fn scaled(self, factor: f64) -> Self;
}

impl Scaled for RealMatrix {
    fn scaled(self, factor: f64) -> Self {
        RealMatrix::from_fn(self.rows(), self.cols(), |i, j| self[(i, j)] * factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcs::cumulants;
    use crate::model::minimum_decoherence_margin;
    use crate::numerics::{pauli, I};
    use crate::test_support::{random_density_matrix, random_valid_setup};

    fn one(x: f64) -> RealMatrix {
        RealMatrix::from_rows(&[&[x]])
    }

    fn sz_setup(s_cross: f64, a: f64, s_op: f64) -> MeasurementSetup {
        let noise = NoiseData::new(one(1.0), one(s_cross), one(s_op), one(a), RealMatrix::zeros(1, 1)).unwrap();
        MeasurementSetup::new(ComplexMatrix::zeros(2, 2), vec![pauli()[2].clone()], noise, "sz").unwrap()
    }

    #[test]
    fn equal_noise_is_left_alone() {
        let mut s = random_valid_setup(1, 2, 1, 2);
        s.noise.s_det = RealMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]);
        s.noise.s_op[(0, 0)] += 10.0;
        let sep = separate(&s).unwrap();
        assert!(sep.transform.max_abs_diff(&RealMatrix::identity(2)) < 1e-15);
        assert_eq!(sep.noise_scale, 2.0);
        assert_eq!(sep.base.noise, s.noise);
    }

    #[test]
    fn correlated_pair_scale() {
        let rho = 0.6;
        let noise = NoiseData::free(RealMatrix::from_rows(&[&[1.0, rho], &[rho, 1.0]])).unwrap();
        let s = MeasurementSetup::new(ComplexMatrix::zeros(1, 1), vec![], noise, "pair").unwrap();
        let sep = separate(&s).unwrap();
        assert!((sep.noise_scale - (1.0 - rho * rho).sqrt()).abs() < 1e-14);
        let back = sep.transform.matmul(&sep.inverse_transform);
        assert!(back.max_abs_diff(&RealMatrix::identity(2)) < 1e-14);
    }

    #[test]
    fn singular_noise_rejected() {
        let noise = NoiseData::free(RealMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        let s = MeasurementSetup::new(ComplexMatrix::zeros(1, 1), vec![], noise, "singular").unwrap();
        assert!(matches!(separate(&s), Err(Error::SingularNoise)));
    }

    #[test]
    fn operator_identities() {
        for seed in 0..10 {
            let sep = separate(&random_valid_setup(seed, 2, 2, 3)).unwrap();
            let ops = build_detector_operators(&sep);
            for i in 0..2 {
                let half = (&ops.r[i] - &ops.d[i].scale(I)).scale_real(0.5);
                assert!(ops.k[i].max_abs_diff(&half) < 1e-14);
                assert!(ops.k[i].max_abs_diff(&ops.b[i].scale_real(sep.noise_scale)) < 1e-14);
                assert!(ops.d[i].is_hermitian() && ops.r[i].is_hermitian());
            }
        }
    }

    #[test]
    fn limits_of_b() {
        let pure_cross = separate(&sz_setup(0.4, 0.0, 1.0)).unwrap();
        assert!(pure_cross.b_ops[0].hermiticity_defect() == 0.0);
        let sep = separate(&sz_setup(0.0, 1.0, 1.0)).unwrap();
        let b = &sep.b_ops[0];
        assert!(b.max_abs_diff(&pauli()[2].scale(-I * 0.5)) < 1e-15);
        assert!(b.dagger().max_abs_diff(&b.scale_real(-1.0)) < 1e-15);
    }

    #[test]
    fn cumulants_transform_covariantly() {
        for seed in 0..4 {
            let s = random_valid_setup(seed + 20, 2, 2, 2);
            let rho0 = random_density_matrix(seed, 2);
            let sep = separate(&s).unwrap();
            let before = cumulants(&s, &rho0, 1.3).unwrap();
            let after = cumulants(&sep.base, &rho0, 1.3).unwrap();
            let t = &sep.transform;
            let mean = t.matvec(&before.mean);
            let cov = RealMatrix::from_fn(2, 2, |i, j| before.covariance[i][j]);
            let cov = t.matmul(&cov).matmul(&t.transpose());
            for i in 0..2 {
                assert!((after.mean[i] - mean[i]).abs() < 1e-9);
                for j in 0..2 {
                    assert!((after.covariance[i][j] - cov[(i, j)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn residual_is_invariant_and_matches_margin() {
        for seed in 0..10 {
            let s = random_valid_setup(seed, 2, 2, 2);
            let sep = separate(&s).unwrap();
            let direct = minimum_decoherence_margin(&s).unwrap();
            assert!((residual_margin(&sep).unwrap() - direct).abs() < 1e-10);
            assert!(direct >= -1e-10);
        }
    }

    #[test]
    fn dual_path_generator() {
        let samples: Vec<_> = (0..20).map(|k| random_density_matrix(k, 3)).collect();
        for seed in 0..5 {
            let sep = separate(&random_valid_setup(seed, 2, 2, 3)).unwrap();
            assert!(equivalent_generator_check(&sep, &samples).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn saturated_setup_has_no_residual() {
        let a = 1.3;
        let sep = separate(&sz_setup(0.0, a, a * a / 4.0)).unwrap();
        assert!(residual_lindblad(&sep).unwrap().is_empty());
        let samples: Vec<_> = (0..5).map(|k| random_density_matrix(k, 2)).collect();
        assert!(equivalent_generator_check(&sep, &samples).unwrap() <= 1e-10);
    }

    #[test]
    fn null_measurement() {
        let sep = separate(&sz_setup(0.0, 0.0, 0.0)).unwrap();
        let rho = random_density_matrix(3, 2);
        assert_eq!(measurement_dissipator(&sep, &rho).max_abs(), 0.0);
        assert_eq!(equivalent_generator_check(&sep, &[rho]).unwrap(), 0.0);
    }
}
