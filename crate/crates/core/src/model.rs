//! Measurement setups and their consistency conditions.
//!
//! A setup couples a `d`-level system (Hamiltonian `H_q`, measured Hermitian
//! operators `O_α`, α = 1..M) to `N` detectors through real zero-frequency
//! noises and susceptibilities:
//!
//! | block     | shape | meaning                              |
//! |-----------|-------|--------------------------------------|
//! | `s_det`   | N×N   | detector noise `S_ij`                |
//! | `s_cross` | M×N   | cross noise `S_αi = S_iα`            |
//! | `s_op`    | M×M   | operator noise `S_αβ`                |
//! | `a_cross` | N×M   | detector response `a_iα`             |
//! | `a_op`    | M×M   | operator susceptibility `a_αβ`       |
//!
//! `a_ij` and `a_αi` vanish identically and have no field.
//!
//! On the combined index (detectors first, then operators) the matrix
//! `C_ab = S_ab + i(a_ba − a_ab)/2` must be positive semidefinite.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::eigen::{hermitian_eigendecomposition, spd_inverse};
use crate::numerics::{re, ComplexMatrix, RealMatrix, I};

/// Relative tolerance for the (strict in theory) inequalities.
pub const INEQUALITY_TOLERANCE: f64 = 1e-12;
/// Band inside which a satisfied inequality is flagged as saturated.
pub const SATURATION_BAND: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseData {
    pub s_det: RealMatrix,
    pub s_cross: RealMatrix,
    pub s_op: RealMatrix,
    pub a_cross: RealMatrix,
    pub a_op: RealMatrix,
}

impl NoiseData {
    pub fn new(
        s_det: RealMatrix,
        s_cross: RealMatrix,
        s_op: RealMatrix,
        a_cross: RealMatrix,
        a_op: RealMatrix,
    ) -> Result<Self> {
        let noise = Self {
            s_det,
            s_cross,
            s_op,
            a_cross,
            a_op,
        };
        noise.check_shapes()?;
        Ok(noise)
    }

    /// Detectors only, nothing measured.
    pub fn free(s_det: RealMatrix) -> Result<Self> {
        let n = s_det.rows();
        Self::new(
            s_det,
            RealMatrix::zeros(0, n),
            RealMatrix::zeros(0, 0),
            RealMatrix::zeros(n, 0),
            RealMatrix::zeros(0, 0),
        )
    }

    pub fn n_detectors(&self) -> usize {
        self.s_det.rows()
    }

    pub fn n_operators(&self) -> usize {
        self.s_op.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.s_det.rows();
        let m = self.s_op.rows();
        let expect = |name: &str, mat: &RealMatrix, rows: usize, cols: usize| {
            if mat.rows() != rows || mat.cols() != cols {
                // serde turns an empty block into 0×0 regardless of the intended width
                if rows * cols == 0 && mat.rows() * mat.cols() == 0 {
                    return Ok(());
                }
                Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    mat.rows(),
                    mat.cols()
                )))
            } else {
                Ok(())
            }
        };
        if n == 0 {
            return Err(Error::InvalidInput("at least one detector is required".into()));
        }
        expect("s_det", &self.s_det, n, n)?;
        expect("s_cross", &self.s_cross, m, n)?;
        expect("s_op", &self.s_op, m, m)?;
        expect("a_cross", &self.a_cross, n, m)?;
        expect("a_op", &self.a_op, m, m)?;
        for (name, mat) in [
            ("s_det", &self.s_det),
            ("s_cross", &self.s_cross),
            ("s_op", &self.s_op),
            ("a_cross", &self.a_cross),
            ("a_op", &self.a_op),
        ] {
            if !mat.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    /// `S_αi`, zero when the block is empty.
    pub fn s_cross_at(&self, alpha: usize, i: usize) -> f64 {
        if self.s_cross.rows() == 0 {
            0.0
        } else {
            self.s_cross[(alpha, i)]
        }
    }

    /// `a_iα`, zero when the block is empty.
    pub fn a_cross_at(&self, i: usize, alpha: usize) -> f64 {
        if self.a_cross.cols() == 0 {
            0.0
        } else {
            self.a_cross[(i, alpha)]
        }
    }

    fn a_op_at(&self, alpha: usize, beta: usize) -> f64 {
        if self.a_op.rows() == 0 {
            0.0
        } else {
            self.a_op[(alpha, beta)]
        }
    }

    /// Operator block `C_αβ = S_αβ + i(a_βα − a_αβ)/2`.
    pub fn operator_coupling(&self) -> ComplexMatrix {
        let m = self.n_operators();
        ComplexMatrix::from_fn(m, m, |a, b| {
            Complex64::new(self.s_op[(a, b)], 0.5 * (self.a_op_at(b, a) - self.a_op_at(a, b)))
        })
    }

    /// Cross block `C_αi = S_αi + i a_iα/2` (M×N).
    pub fn cross_coupling(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.n_operators(), self.n_detectors(), |a, i| {
            Complex64::new(self.s_cross_at(a, i), 0.5 * self.a_cross_at(i, a))
        })
    }
}

/// System plus detector data. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSetup {
    pub hamiltonian: ComplexMatrix,
    pub measured_ops: Vec<ComplexMatrix>,
    pub noise: NoiseData,
    pub label: String,
}

impl MeasurementSetup {
    pub fn new(
        hamiltonian: ComplexMatrix,
        measured_ops: Vec<ComplexMatrix>,
        noise: NoiseData,
        label: impl Into<String>,
    ) -> Result<Self> {
        let d = hamiltonian.rows();
        if d == 0 || !hamiltonian.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "hamiltonian must be square with d ≥ 1, got {}x{}",
                hamiltonian.rows(),
                hamiltonian.cols()
            )));
        }
        for (k, op) in measured_ops.iter().enumerate() {
            if op.rows() != d || op.cols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "measured operator {k} is {}x{}, system dimension is {d}",
                    op.rows(),
                    op.cols()
                )));
            }
            if !op.is_finite() {
                return Err(Error::NonFinite(format!("measured operator {k}")));
            }
        }
        if !hamiltonian.is_finite() {
            return Err(Error::NonFinite("hamiltonian".into()));
        }
        noise.check_shapes()?;
        if noise.n_operators() != measured_ops.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise data describes {} operators, {} given",
                noise.n_operators(),
                measured_ops.len()
            )));
        }
        Ok(Self {
            hamiltonian,
            measured_ops,
            noise,
            label: label.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.rows()
    }

    pub fn n_detectors(&self) -> usize {
        self.noise.n_detectors()
    }

    pub fn n_operators(&self) -> usize {
        self.measured_ops.len()
    }

    /// Detector drift operators `K_i = Σ_α (S_αi − i a_iα/2) O_α`.
    pub fn drift_operators(&self) -> Vec<ComplexMatrix> {
        (0..self.n_detectors())
            .map(|i| {
                let mut k = ComplexMatrix::zeros(self.dim(), self.dim());
                for (a, op) in self.measured_ops.iter().enumerate() {
                    let coeff = Complex64::new(self.noise.s_cross_at(a, i), -0.5 * self.noise.a_cross_at(i, a));
                    k.axpy(coeff, op);
                }
                k
            })
            .collect()
    }
}

/// `C_ab = S_ab + i(a_ba − a_ab)/2` on the combined index, detectors first.
pub fn build_big_c(noise: &NoiseData) -> ComplexMatrix {
    let n = noise.n_detectors();
    let m = noise.n_operators();
    let cross = noise.cross_coupling();
    let ops = noise.operator_coupling();
    ComplexMatrix::from_fn(n + m, n + m, |a, b| match (a < n, b < n) {
        (true, true) => re(noise.s_det[(a, b)]),
        (false, true) => cross[(a - n, b)],
        (true, false) => cross[(b - n, a)].conj(),
        (false, false) => ops[(a - n, b - n)],
    })
}

/// One named inequality or structural check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    /// Satisfied only at the boundary (within the saturation band).
    pub saturated: bool,
}

impl Check {
    fn inequality(name: impl Into<String>, margin: f64, scale: f64) -> Self {
        let scale = scale.abs().max(f64::MIN_POSITIVE);
        let passed = margin.is_finite() && margin >= -INEQUALITY_TOLERANCE * scale
            || margin == f64::INFINITY;
        Self {
            name: name.into(),
            passed,
            margin,
            saturated: passed && margin.abs() <= SATURATION_BAND * scale,
        }
    }

    fn structural(name: impl Into<String>, defect: f64, scale: f64) -> Self {
        let scale = scale.abs().max(f64::MIN_POSITIVE);
        Self {
            name: name.into(),
            passed: defect <= 1e-12 * scale,
            margin: -defect,
            saturated: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Reported but not part of `overall`.
    pub informational: Vec<Check>,
    pub overall: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().chain(&self.informational).find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn warnings(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.saturated).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (c, tag) in self
            .checks
            .iter()
            .map(|c| (c, ""))
            .chain(self.informational.iter().map(|c| (c, " (informational)")))
        {
            let status = match (c.passed, c.saturated) {
                (false, _) => "FAIL",
                (true, true) => "SATURATED",
                (true, false) => "ok",
            };
            out.push_str(&format!("{status:>9}  {}{tag}  margin={:.6e}\n", c.name, c.margin));
        }
        out.push_str(&format!("overall: {}\n", if self.overall { "valid" } else { "INVALID" }));
        out
    }
}

pub const CHECK_HAMILTONIAN: &str = "hamiltonian hermiticity";
pub const CHECK_NOISE_SYMMETRY: &str = "noise symmetry";
pub const CHECK_DETECTOR_DIAGONAL: &str = "detector noise positivity";
pub const CHECK_OPERATOR_DIAGONAL: &str = "operator noise positivity";
pub const CHECK_PAIRWISE_DETECTOR: &str = "pairwise detector inequality";
pub const CHECK_DETECTOR_OPERATOR: &str = "detector-operator inequality";
pub const CHECK_DETECTOR_OPERATOR_QUARTER: &str = "detector-operator inequality (quarter form)";
pub const CHECK_BIG_C: &str = "big C positivity";
pub const CHECK_MIN_DECOHERENCE: &str = "minimum decoherence";

pub fn operator_check_name(alpha: usize) -> String {
    format!("measured operator {alpha} hermiticity")
}

/// Runs every consistency check; failures are reported, never returned as errors.
pub fn validate_setup(setup: &MeasurementSetup) -> ValidationReport {
    let noise = &setup.noise;
    let n = noise.n_detectors();
    let m = noise.n_operators();
    let mut checks = Vec::new();

    let h = &setup.hamiltonian;
    checks.push(Check::structural(CHECK_HAMILTONIAN, h.hermiticity_defect(), h.max_abs()));
    for (a, op) in setup.measured_ops.iter().enumerate() {
        checks.push(Check::structural(operator_check_name(a), op.hermiticity_defect(), op.max_abs()));
    }
    let sym_defect = noise.s_det.symmetry_defect().max(noise.s_op.symmetry_defect());
    checks.push(Check::structural(
        CHECK_NOISE_SYMMETRY,
        sym_defect,
        noise.s_det.max_abs().max(noise.s_op.max_abs()),
    ));

    let det_diag = (0..n).map(|i| noise.s_det[(i, i)]).fold(f64::INFINITY, f64::min);
    checks.push(Check::inequality(CHECK_DETECTOR_DIAGONAL, det_diag, noise.s_det.max_abs()));
    let op_diag = (0..m).map(|a| noise.s_op[(a, a)]).fold(f64::INFINITY, f64::min);
    checks.push(Check::inequality(CHECK_OPERATOR_DIAGONAL, op_diag, noise.s_op.max_abs()));

    let (mut pair_margin, mut pair_scale) = (f64::INFINITY, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = noise.s_det[(i, i)].abs() * noise.s_det[(j, j)].abs();
            let margin = noise.s_det[(i, i)] * noise.s_det[(j, j)] - noise.s_det[(i, j)].powi(2);
            if margin < pair_margin {
                pair_margin = margin;
                pair_scale = scale;
            }
        }
    }
    checks.push(Check::inequality(CHECK_PAIRWISE_DETECTOR, pair_margin, pair_scale));

    let mut paper = (f64::INFINITY, 1.0);
    let mut quarter = (f64::INFINITY, 1.0);
    for i in 0..n {
        for a in 0..m {
            let sii = noise.s_det[(i, i)];
            let saa = noise.s_op[(a, a)];
            let cross = noise.s_cross_at(a, i);
            let resp = noise.a_cross_at(i, a);
            let scale = (sii * saa).abs().max(cross * cross + resp * resp);
            let full = sii * saa - cross * cross - resp * resp;
            if full < paper.0 {
                paper = (full, scale);
            }
            let q = sii * saa - cross * cross - 0.25 * resp * resp;
            if q < quarter.0 {
                quarter = (q, scale);
            }
        }
    }
    checks.push(Check::inequality(CHECK_DETECTOR_OPERATOR, paper.0, paper.1));

    let big_c = build_big_c(noise);
    let c_scale = big_c.max_abs();
    match hermitian_eigendecomposition(&big_c) {
        Ok(e) => checks.push(Check::inequality(CHECK_BIG_C, e.min_value(), c_scale)),
        Err(_) => checks.push(Check {
            name: CHECK_BIG_C.into(),
            passed: false,
            margin: f64::NAN,
            saturated: false,
        }),
    }

    match minimum_decoherence_margin(setup) {
        Ok(margin) => checks.push(Check::inequality(CHECK_MIN_DECOHERENCE, margin, c_scale)),
        Err(_) => checks.push(Check {
            name: CHECK_MIN_DECOHERENCE.into(),
            passed: false,
            margin: f64::NAN,
            saturated: false,
        }),
    }

    let informational = vec![Check::inequality(CHECK_DETECTOR_OPERATOR_QUARTER, quarter.0, quarter.1)];
    let overall = checks.iter().all(|c| c.passed);
    ValidationReport {
        checks,
        informational,
        overall,
    }
}

/// A Lindblad channel `L_γ = √C_γ Σ_α Ψ^γ_α O_α`.
#[derive(Clone, Debug)]
pub struct LindbladTerm {
    pub rate: f64,
    pub op: ComplexMatrix,
    op_dag: ComplexMatrix,
    /// `L†L`
    pub gram: ComplexMatrix,
}

impl LindbladTerm {
    pub fn new(rate: f64, op: ComplexMatrix) -> Self {
        let op_dag = op.dagger();
        let gram = op_dag.matmul(&op);
        Self {
            rate,
            op,
            op_dag,
            gram,
        }
    }

    /// `L ρ L† − ½{L†L, ρ}`
    pub fn dissipate(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.op.matmul(rho).matmul(&self.op_dag);
        out.axpy(re(-0.5), &self.gram.anticommutator(rho));
        out
    }
}

/// Sum of the dissipators of `terms` applied to `rho`.
pub fn dissipator(terms: &[LindbladTerm], rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(rho.rows(), rho.cols());
    for t in terms {
        out += &t.dissipate(rho);
    }
    out
}

/// Diagonalizes a Hermitian coefficient matrix `c[β][α]` (coefficient of
/// `O_α ρ O_β`) into independent Lindblad channels.
pub fn lindblad_from_coefficients(coeff: &ComplexMatrix, ops: &[ComplexMatrix], context: &str) -> Result<Vec<LindbladTerm>> {
    if ops.is_empty() {
        return Ok(Vec::new());
    }
    let eig = hermitian_eigendecomposition(&coeff.hermitian_part())?;
    let scale = eig.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(Vec::new());
    }
    let d = ops[0].rows();
    let mut terms = Vec::new();
    for (g, &rate) in eig.values.iter().enumerate() {
        if rate < -1e-10 * scale {
            return Err(Error::NegativeEigenvalue {
                value: rate,
                scale,
                context: context.into(),
            });
        }
        if rate <= 1e-12 * scale {
            continue;
        }
        let amp = rate.sqrt();
        let mut op = ComplexMatrix::zeros(d, d);
        for (a, o) in ops.iter().enumerate() {
            op.axpy(eig.vectors[(a, g)].conj() * amp, o);
        }
        terms.push(LindbladTerm::new(rate, op));
    }
    Ok(terms)
}

/// Lindblad channels of the operator block `C_αβ`.
pub fn lindblad_set(setup: &MeasurementSetup) -> Result<Vec<LindbladTerm>> {
    lindblad_from_coefficients(&setup.noise.operator_coupling(), &setup.measured_ops, "operator coupling C_αβ")
}

/// Minimum measurement back-action `C_αi (S_det⁻¹)_ij C_jβ`.
pub fn measurement_minimum(noise: &NoiseData) -> Result<ComplexMatrix> {
    let (inv, _) = spd_inverse(&noise.s_det)?.ok_or(Error::SingularDetectorNoise)?;
    let cross = noise.cross_coupling();
    Ok(cross.matmul(&inv.to_complex()).matmul(&cross.dagger()))
}

/// Decoherence left over after the measurement minimum, `C_αβ − C_αi S⁻¹ C_iβ`.
pub fn residual_coupling(noise: &NoiseData) -> Result<ComplexMatrix> {
    Ok(&noise.operator_coupling() - &measurement_minimum(noise)?)
}

/// Smallest eigenvalue of the residual decoherence matrix. Positive means
/// strictly above the measurement minimum, zero means saturation.
pub fn minimum_decoherence_margin(setup: &MeasurementSetup) -> Result<f64> {
    if setup.n_operators() == 0 {
        return Ok(f64::INFINITY);
    }
    let residual = residual_coupling(&setup.noise)?;
    Ok(hermitian_eigendecomposition(&residual.hermitian_part())?.min_value())
}

/// Right-hand side of the unconditioned master equation,
/// `−i[H, ρ] + Σ_γ (L ρ L† − ½{L†L, ρ})`.
pub fn master_rhs(hamiltonian: &ComplexMatrix, terms: &[LindbladTerm], rho: &ComplexMatrix) -> ComplexMatrix {
    let mut out = hamiltonian.commutator(rho).scale(-I);
    out += &dissipator(terms, rho);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pauli;
    use crate::test_support::{random_density_matrix, random_valid_setup};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single(s_det: f64, s_cross: f64, s_op: f64, a: f64) -> MeasurementSetup {
        let [_, _, sz] = pauli();
        let noise = NoiseData::new(
            RealMatrix::from_rows(&[&[s_det]]),
            RealMatrix::from_rows(&[&[s_cross]]),
            RealMatrix::from_rows(&[&[s_op]]),
            RealMatrix::from_rows(&[&[a]]),
            RealMatrix::zeros(1, 1),
        )
        .unwrap();
        MeasurementSetup::new(ComplexMatrix::zeros(2, 2), vec![sz], noise, "test").unwrap()
    }

    #[test]
    fn big_c_substitution() {
        let s = single(1.0, 0.0, 1.0, 1.0);
        let cmat = build_big_c(&s.noise);
        let expected = ComplexMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, -0.5)], &[c(0.0, 0.5), c(1.0, 0.0)]]);
        assert!(cmat.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn big_c_without_susceptibilities_is_real() {
        let noise = NoiseData::new(
            RealMatrix::from_rows(&[&[1.0, 0.2], &[0.2, 2.0]]),
            RealMatrix::from_rows(&[&[0.1, 0.3]]),
            RealMatrix::from_rows(&[&[0.7]]),
            RealMatrix::zeros(2, 1),
            RealMatrix::zeros(1, 1),
        )
        .unwrap();
        let cmat = build_big_c(&noise);
        assert!(cmat.as_slice().iter().all(|z| z.im == 0.0));
        assert_eq!(cmat[(2, 1)], c(0.3, 0.0));
        assert_eq!(cmat[(1, 2)], c(0.3, 0.0));
    }

    #[test]
    fn big_c_is_hermitian_for_random_blocks() {
        for seed in 0..10 {
            let s = random_valid_setup(seed, 2, 2, 3);
            assert!(build_big_c(&s.noise).hermiticity_defect() == 0.0);
        }
    }

    #[test]
    fn detector_operator_failure() {
        let report = validate_setup(&single(1.0, 0.0, 1.0, 2.0));
        let chk = report.check(CHECK_DETECTOR_OPERATOR).unwrap();
        assert!(!chk.passed);
        assert!((chk.margin + 3.0).abs() < 1e-15);
        assert!(!report.overall);
    }

    #[test]
    fn detector_operator_paper_form_rejects_half() {
        let report = validate_setup(&single(1.0, 0.0, 0.5, 1.0));
        assert!(!report.check(CHECK_DETECTOR_OPERATOR).unwrap().passed);
        // the quarter form (and full positivity) would accept it
        assert!(report.check(CHECK_DETECTOR_OPERATOR_QUARTER).unwrap().passed);
        assert!(report.check(CHECK_BIG_C).unwrap().passed);
    }

    #[test]
    fn pairwise_detector_margin() {
        let noise = NoiseData::free(RealMatrix::from_rows(&[&[1.0, 0.9], &[0.9, 1.0]])).unwrap();
        let setup = MeasurementSetup::new(ComplexMatrix::zeros(1, 1), vec![], noise, "pair").unwrap();
        let report = validate_setup(&setup);
        let chk = report.check(CHECK_PAIRWISE_DETECTOR).unwrap();
        assert!(chk.passed);
        assert!((chk.margin - 0.19).abs() < 1e-14);
        assert!(report.overall);
    }

    #[test]
    fn saturation_is_flagged_not_failed() {
        let report = validate_setup(&single(1.0, 0.0, 1.0, 1.0));
        let chk = report.check(CHECK_DETECTOR_OPERATOR).unwrap();
        assert!(chk.passed && chk.saturated);
        assert!(report.overall);
        assert_eq!(report.warnings().len(), 1);
    }

    #[test]
    fn non_hermitian_hamiltonian_reported() {
        let mut s = single(1.0, 0.0, 1.0, 0.5);
        s.hamiltonian[(0, 1)] = c(1.0, 0.0);
        let report = validate_setup(&s);
        assert!(!report.check(CHECK_HAMILTONIAN).unwrap().passed);
        assert!(!report.overall);
    }

    #[test]
    fn validation_is_pure() {
        let s = random_valid_setup(3, 2, 2, 2);
        assert_eq!(validate_setup(&s), validate_setup(&s));
    }

    #[test]
    fn single_operator_lindblad() {
        let s = single(1.0, 0.0, 0.7, 0.0);
        let terms = lindblad_set(&s).unwrap();
        assert_eq!(terms.len(), 1);
        let [_, _, sz] = pauli();
        // sign of the eigenvector is free; compare L ⊗ L†-invariant quantities
        assert!((terms[0].rate - 0.7).abs() < 1e-15);
        assert!(terms[0].gram.max_abs_diff(&ComplexMatrix::identity(2).scale_real(0.7)) < 1e-14);
        let diag = terms[0].op[(0, 0)].norm();
        assert!((diag - 0.7f64.sqrt()).abs() < 1e-14);
        assert!((terms[0].op[(0, 0)] + terms[0].op[(1, 1)]).norm() < 1e-14);
        let _ = sz;
    }

    #[test]
    fn null_direction_is_dropped() {
        let [sx, _, sz] = pauli();
        let noise = NoiseData::new(
            RealMatrix::from_rows(&[&[1.0]]),
            RealMatrix::zeros(2, 1),
            RealMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]),
            RealMatrix::zeros(1, 2),
            RealMatrix::zeros(2, 2),
        )
        .unwrap();
        let s = MeasurementSetup::new(ComplexMatrix::zeros(2, 2), vec![sx, sz], noise, "rank1").unwrap();
        assert_eq!(lindblad_set(&s).unwrap().len(), 1);
    }

    /// Triple sum `−Σ_αβ [½(O_β O_α ρ + ρ O_β O_α) − O_α ρ O_β] C_βα`, with
    /// `C_βα = S_βα + i(a_αβ − a_βα)/2` written out from the definition of C.
    fn direct_operator_dissipator(s: &MeasurementSetup, rho: &ComplexMatrix) -> ComplexMatrix {
        let m = s.n_operators();
        let ops = &s.measured_ops;
        let mut out = ComplexMatrix::zeros(s.dim(), s.dim());
        for alpha in 0..m {
            for beta in 0..m {
                let sab = s.noise.s_op[(beta, alpha)];
                let cba = c(sab, 0.5 * (s.noise.a_op[(alpha, beta)] - s.noise.a_op[(beta, alpha)]));
                let ba = ops[beta].matmul(&ops[alpha]);
                let mut term = ba.matmul(rho) + rho.matmul(&ba);
                term = term.scale_real(0.5);
                term -= &ops[alpha].matmul(rho).matmul(&ops[beta]);
                out.axpy(-cba, &term);
            }
        }
        out
    }

    #[test]
    fn lindblad_set_reproduces_direct_form() {
        for seed in 0..20u64 {
            let s = random_valid_setup(seed, 1, 2, 3);
            let terms = lindblad_set(&s).unwrap();
            let rho = random_density_matrix(seed + 100, 3);
            let lhs = dissipator(&terms, &rho);
            let rhs = direct_operator_dissipator(&s, &rho);
            assert!(lhs.max_abs_diff(&rhs) <= 1e-10, "seed {seed}: {}", lhs.max_abs_diff(&rhs));
        }
    }

    #[test]
    fn negative_operator_block_rejected() {
        let s = single(1.0, 0.0, -0.5, 0.0);
        assert!(matches!(lindblad_set(&s), Err(Error::NegativeEigenvalue { .. })));
    }

    #[test]
    fn margin_without_cross_terms_is_operator_eigenvalue() {
        let s = single(1.0, 0.0, 0.8, 0.0);
        assert!((minimum_decoherence_margin(&s).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn margin_saturates_at_quarter_a_squared() {
        for a in [0.5, 1.0, 2.0] {
            let s = single(1.0, 0.0, a * a / 4.0, a);
            assert!(minimum_decoherence_margin(&s).unwrap().abs() <= 1e-10);
        }
    }

    #[test]
    fn singular_detector_noise() {
        let s = single(0.0, 0.0, 1.0, 0.0);
        assert!(matches!(minimum_decoherence_margin(&s), Err(Error::SingularDetectorNoise)));
    }

    #[test]
    fn margin_agrees_with_big_c_positivity() {
        // Schur complement: with S_det positive definite, big C ⪰ 0 ⇔ residual ⪰ 0.
        for seed in 0..40u64 {
            let s = random_valid_setup(seed, 2, 2, 2);
            let big = hermitian_eigendecomposition(&build_big_c(&s.noise)).unwrap().min_value();
            let margin = minimum_decoherence_margin(&s).unwrap();
            if big >= -1e-12 {
                assert!(margin >= -1e-10, "seed {seed}: big {big}, margin {margin}");
            } else {
                assert!(margin < 0.0);
            }
        }
    }

    #[test]
    fn subset_checks_are_necessary_for_big_c() {
        // Perturbed random setups: whenever big C is PSD, every 1- and 2-element check passes.
        for seed in 0..60u64 {
            let mut s = random_valid_setup(seed, 2, 2, 2);
            let shrink = 0.3 + 0.02 * (seed % 40) as f64;
            for a in 0..2 {
                s.noise.s_op[(a, a)] *= shrink;
            }
            let r = validate_setup(&s);
            if r.check(CHECK_BIG_C).unwrap().passed {
                assert!(r.check(CHECK_DETECTOR_DIAGONAL).unwrap().passed);
                assert!(r.check(CHECK_OPERATOR_DIAGONAL).unwrap().passed);
                assert!(r.check(CHECK_PAIRWISE_DETECTOR).unwrap().passed);
                assert!(r.check(CHECK_DETECTOR_OPERATOR_QUARTER).unwrap().passed);
            }
        }
    }
}
