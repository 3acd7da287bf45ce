//! Dense complex linear algebra, time stepping and quadrature kernels.

pub mod distribution;
pub mod eigen;
pub mod matrix;
pub mod quadrature;
pub mod rk4;
pub mod rng;

pub use distribution::{Distribution, GridSpec};
pub use eigen::{hermitian_eigendecomposition, operator_norm, unitary_exp, HermitianEigen};
pub use matrix::{ComplexMatrix, RealMatrix};
pub use quadrature::{fourier_quadrature, inverse_transform, FourierValue, UniformAxis, UniformGrid};
pub use rk4::{rk4_step, try_rk4_step};
pub use rng::RngStream;

use num_complex::Complex64;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Pauli matrices σ_x, σ_y, σ_z.
pub fn pauli() -> [ComplexMatrix; 3] {
    let z = re(0.0);
    let o = re(1.0);
    [
        ComplexMatrix::from_rows(&[&[z, o], &[o, z]]),
        ComplexMatrix::from_rows(&[&[z, -I], &[I, z]]),
        ComplexMatrix::from_rows(&[&[o, z], &[z, -o]]),
    ]
}
