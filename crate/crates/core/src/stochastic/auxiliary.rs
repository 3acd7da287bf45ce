use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::eigen::hermitian_eigendecomposition;
use crate::numerics::{pauli, ComplexMatrix, UniformAxis};

/// Half-width of the oscillator outcome grid.
pub const OSCILLATOR_C_MAX: f64 = 8.0;
/// Points of the oscillator outcome grid.
pub const OSCILLATOR_C_POINTS: usize = 1024;
/// Fock truncation used by the engines.
pub const DEFAULT_N_MAX: usize = 10;
/// Tolerance on the auxiliary relations.
pub const RELATION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    Qubit,
    Oscillator,
}

impl std::str::FromStr for AuxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qubit" => Ok(Self::Qubit),
            "oscillator" => Ok(Self::Oscillator),
            other => Err(Error::InvalidInput(format!("unknown auxiliary kind {other:?}"))),
        }
    }
}

/// How a readout of `ĉ` is represented.
#[derive(Clone, Debug)]
pub enum Outcomes {
    /// Eigenvalues of `ĉ` with their eigenvectors.
    Discrete { values: Vec<f64>, states: Vec<Vec<Complex64>> },
    /// Position-like readout: `⟨c|n⟩ = ψ_n(c)` tabulated on a grid.
    Continuous { axis: UniformAxis, n_max: usize },
}

/// Detector-modelling quantum system with readout `ĉ`, coupling `b̂` and state `R̂`.
#[derive(Clone, Debug)]
pub struct AuxiliarySystem {
    pub kind: Option<AuxKind>,
    pub c_op: ComplexMatrix,
    pub b_op: ComplexMatrix,
    pub init_state: ComplexMatrix,
    pub outcomes: Outcomes,
}

impl AuxiliarySystem {
    /// User-supplied auxiliary with discrete readout; outcomes are the eigenvalues of `c`.
    pub fn discrete(c_op: ComplexMatrix, b_op: ComplexMatrix, init_state: ComplexMatrix) -> Result<Self> {
        let dim = c_op.rows();
        for (name, m) in [("c", &c_op), ("b", &b_op), ("R", &init_state)] {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch(format!("auxiliary operator {name} must be {dim}x{dim}")));
            }
        }
        let eig = hermitian_eigendecomposition(&c_op)?;
        let states = (0..dim).map(|k| eig.vectors.column(k)).collect();
        Ok(Self {
            kind: None,
            c_op,
            b_op,
            init_state,
            outcomes: Outcomes::Discrete {
                values: eig.values,
                states,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.c_op.rows()
    }
}

/// `ĉ = σ_x`, `b̂ = (σ_x + iσ_y)/2`, `R̂ = |↑⟩⟨↑|`; outcomes `±1`.
pub fn make_qubit_aux() -> AuxiliarySystem {
    let [sx, sy, _] = pauli();
    let b = (&sx + &sy.scale(Complex64::i())).scale_real(0.5);
    let up = ComplexMatrix::real_diagonal(&[1.0, 0.0]);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)];
    let minus = vec![Complex64::new(s, 0.0), Complex64::new(-s, 0.0)];
    AuxiliarySystem {
        kind: Some(AuxKind::Qubit),
        c_op: sx,
        b_op: b,
        init_state: up,
        outcomes: Outcomes::Discrete {
            values: vec![1.0, -1.0],
            states: vec![plus, minus],
        },
    }
}

/// Oscillator truncated at Fock level `n_max` (dimension `n_max + 1`) in the vacuum,
/// `ĉ = b̂ + b̂†`, read out on `[−8, 8]` with 1024 points.
pub fn make_oscillator_aux(n_max: usize) -> Result<AuxiliarySystem> {
    if n_max < 3 {
        return Err(Error::TruncationTooSmall(format!("n_max = {n_max} < 3")));
    }
    let dim = n_max + 1;
    let b = ComplexMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            Complex64::new((j as f64).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let c = &b + &b.dagger();
    let mut vacuum = ComplexMatrix::zeros(dim, dim);
    vacuum[(0, 0)] = Complex64::new(1.0, 0.0);
    let aux = AuxiliarySystem {
        kind: Some(AuxKind::Oscillator),
        c_op: c,
        b_op: b,
        init_state: vacuum,
        outcomes: Outcomes::Continuous {
            axis: UniformAxis::symmetric(OSCILLATOR_C_MAX, OSCILLATOR_C_POINTS)?,
            n_max,
        },
    };
    let report = verify_relations(&aux);
    if !report.passed(RELATION_TOLERANCE) {
        return Err(Error::TruncationTooSmall(report.summary()));
    }
    Ok(aux)
}

pub fn make_aux(kind: AuxKind) -> Result<AuxiliarySystem> {
    match kind {
        AuxKind::Qubit => Ok(make_qubit_aux()),
        AuxKind::Oscillator => make_oscillator_aux(DEFAULT_N_MAX),
    }
}

/// Fock wavefunctions `ψ_0..ψ_{n_max}` of `ĉ = b̂ + b̂†` at `c`, normalized so that
/// `|ψ_0(c)|² = (2π)^{−1/2} e^{−c²/2}`.
pub fn hermite_functions(n_max: usize, c: f64) -> Vec<f64> {
    // ψ_n(c) = 2^{−1/4} φ_n(c/√2) with φ_n the standard oscillator eigenfunctions.
    let x = c / std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n_max + 1);
    let phi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(phi0);
    if n_max >= 1 {
        out.push(std::f64::consts::SQRT_2 * x * phi0);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    let scale = 2f64.powf(-0.25);
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub name: &'static str,
    pub value: Complex64,
    pub target: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationReport {
    pub entries: Vec<Relation>,
    pub max_deviation: f64,
}

impl RelationReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance
    }

    pub fn summary(&self) -> String {
        self.entries
            .iter()
            .map(|r| format!("⟨{}⟩ = {:.3e}{:+.3e}i (target {})", r.name, r.value.re, r.value.im, r.target))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Expectation values in `R̂` of the nine products the weak update relies on.
pub fn verify_relations(aux: &AuxiliarySystem) -> RelationReport {
    let c = &aux.c_op;
    let b = &aux.b_op;
    let bd = b.dagger();
    let r = &aux.init_state;
    let expect = |m: ComplexMatrix| m.matmul(r).trace();
    let cases: [(&'static str, ComplexMatrix, f64); 9] = [
        ("c c", c.matmul(c), 1.0),
        ("b b†", b.matmul(&bd), 1.0),
        ("b c", b.matmul(c), 1.0),
        ("c b†", c.matmul(&bd), 1.0),
        ("b b", b.matmul(b), 0.0),
        ("b† b†", bd.matmul(&bd), 0.0),
        ("c b", c.matmul(b), 0.0),
        ("b† c", bd.matmul(c), 0.0),
        ("b† b", bd.matmul(b), 0.0),
    ];
    let entries: Vec<Relation> = cases
        .into_iter()
        .map(|(name, m, target)| {
            let value = expect(m);
            Relation {
                name,
                value,
                target,
                deviation: (value - Complex64::new(target, 0.0)).norm(),
            }
        })
        .collect();
    let max_deviation = entries.iter().map(|e| e.deviation).fold(0.0, f64::max);
    RelationReport { entries, max_deviation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::distribution::gaussian;

    #[test]
    fn qubit_relations_exact() {
        let report = verify_relations(&make_qubit_aux());
        assert_eq!(report.max_deviation, 0.0, "{}", report.summary());
    }

    #[test]
    fn oscillator_relations() {
        let aux = make_oscillator_aux(4).unwrap();
        let report = verify_relations(&aux);
        assert!(report.max_deviation <= 1e-14);
        let vac = &aux.init_state;
        assert!((aux.c_op.matmul(&aux.c_op).matmul(vac).trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unhalved_qubit_b_fails() {
        let [sx, sy, _] = pauli();
        let b = &sx + &sy.scale(Complex64::i());
        let aux = AuxiliarySystem::discrete(sx, b, ComplexMatrix::real_diagonal(&[1.0, 0.0])).unwrap();
        let report = verify_relations(&aux);
        let bb = report.entries.iter().find(|e| e.name == "b b†").unwrap();
        assert!((bb.value.re - 4.0).abs() < 1e-15);
        assert!(!report.passed(RELATION_TOLERANCE));
    }

    #[test]
    fn truncation_floor() {
        assert!(matches!(make_oscillator_aux(2), Err(Error::TruncationTooSmall(_))));
    }

    #[test]
    fn vacuum_density_is_unit_gaussian() {
        for c in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let psi = hermite_functions(5, c);
            assert!((psi[0] * psi[0] - gaussian(c)).abs() < 1e-16);
        }
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let axis = UniformAxis::symmetric(OSCILLATOR_C_MAX, OSCILLATOR_C_POINTS).unwrap();
        let table: Vec<Vec<f64>> = (0..axis.points).map(|k| hermite_functions(10, axis.node(k))).collect();
        // Levels above four leak past the grid edge; the weak update barely populates them.
        for n in 0..=4 {
            for m in 0..=4 {
                let integral: f64 = (0..axis.points).map(|k| axis.weight(k) * table[k][n] * table[k][m]).sum();
                let target = if n == m { 1.0 } else { 0.0 };
                assert!((integral - target).abs() < 1e-8, "{n},{m}: {integral}");
            }
        }
    }

    #[test]
    fn c_acts_as_multiplication() {
        // c ψ_n = √n ψ_{n−1} + √(n+1) ψ_{n+1}
        let c = 0.37;
        let psi = hermite_functions(6, c);
        for n in 1..6 {
            let rhs = (n as f64).sqrt() * psi[n - 1] + ((n + 1) as f64).sqrt() * psi[n + 1];
            assert!((c * psi[n] - rhs).abs() < 1e-15);
        }
    }
}
