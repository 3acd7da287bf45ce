//! Random inputs shared by unit and integration tests.

use num_complex::Complex64;

use crate::model::{build_big_c, MeasurementSetup, NoiseData};
use crate::numerics::eigen::hermitian_eigendecomposition;
use crate::numerics::{ComplexMatrix, RealMatrix, RngStream};

fn symmetric_uniform(rng: &mut RngStream) -> f64 {
    2.0 * rng.uniform() - 1.0
}

pub fn random_hermitian(seed: u64, d: usize) -> ComplexMatrix {
    let mut rng = RngStream::new(seed, 0x4845_524d);
    let mut m = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = Complex64::new(symmetric_uniform(&mut rng), 0.0);
        for j in (i + 1)..d {
            let z = Complex64::new(symmetric_uniform(&mut rng), symmetric_uniform(&mut rng));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

/// Full-rank random density matrix `A A† / Tr`.
pub fn random_density_matrix(seed: u64, d: usize) -> ComplexMatrix {
    let mut rng = RngStream::new(seed, 0x5248_4f00);
    let a = ComplexMatrix::from_fn(d, d, |_, _| {
        Complex64::new(symmetric_uniform(&mut rng), symmetric_uniform(&mut rng))
    });
    let m = a.matmul(&a.dagger());
    let tr = m.trace().re;
    m.scale_real(1.0 / tr)
}

/// Random setup whose big C is strictly positive definite.
pub fn random_valid_setup(seed: u64, n: usize, m: usize, d: usize) -> MeasurementSetup {
    let mut rng = RngStream::new(seed, 0x5345_5455);
    let total = n + m;
    let g = RealMatrix::from_fn(total, total, |_, _| symmetric_uniform(&mut rng));
    let mut s = g.matmul(&g.transpose());
    let a_cross = RealMatrix::from_fn(n, m, |_, _| symmetric_uniform(&mut rng));
    let a_op = RealMatrix::from_fn(m, m, |_, _| 0.5 * symmetric_uniform(&mut rng));
    let block = |s: &RealMatrix, r0: usize, c0: usize, rows: usize, cols: usize| {
        RealMatrix::from_fn(rows, cols, |i, j| s[(r0 + i, c0 + j)])
    };
    let build = |s: &RealMatrix| {
        NoiseData::new(
            block(s, 0, 0, n, n),
            block(s, n, 0, m, n),
            block(s, n, n, m, m),
            a_cross.clone(),
            a_op.clone(),
        )
        .expect("consistent shapes")
    };
    let c = build_big_c(&build(&s));
    let lambda = hermitian_eigendecomposition(&c).expect("Hermitian").min_value();
    let shift = (0.1 - lambda).max(0.1);
    for k in 0..total {
        s[(k, k)] += shift;
    }
    let noise = build(&s);
    let hamiltonian = random_hermitian(seed ^ 0xa5a5, d);
    let ops = (0..m).map(|k| random_hermitian(seed.wrapping_mul(31).wrapping_add(k as u64 + 1), d)).collect();
    MeasurementSetup::new(hamiltonian, ops, noise, format!("random-{seed}")).expect("consistent setup")
}
