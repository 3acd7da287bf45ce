use num_complex::Complex64;

/// One classical fourth-order Runge–Kutta step of `dy/dt = f(y)`.
pub fn rk4_step(f: impl Fn(&[Complex64]) -> Vec<Complex64>, state: &[Complex64], dt: f64) -> Vec<Complex64> {
    try_rk4_step(|y| Ok::<_, std::convert::Infallible>(f(y)), state, dt)
        .unwrap_or_else(|never| match never {})
}

/// Fallible variant: any error from `f` aborts the step.
pub fn try_rk4_step<E>(
    f: impl Fn(&[Complex64]) -> Result<Vec<Complex64>, E>,
    state: &[Complex64],
    dt: f64,
) -> Result<Vec<Complex64>, E> {
    let n = state.len();
    let mut tmp = vec![Complex64::new(0.0, 0.0); n];

    let k1 = f(state)?;
    for i in 0..n {
        tmp[i] = state[i] + k1[i] * (0.5 * dt);
    }
    let k2 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = state[i] + k2[i] * (0.5 * dt);
    }
    let k3 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = state[i] + k3[i] * dt;
    }
    let k4 = f(&tmp)?;

    let w = dt / 6.0;
    Ok((0..n)
        .map(|i| state[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * w)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::eigen::unitary_exp;
    use crate::numerics::matrix::ComplexMatrix;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn integrate_decay(dt: f64, steps: usize) -> f64 {
        let mut y = vec![c(1.0)];
        for _ in 0..steps {
            y = rk4_step(|x| vec![-x[0]], &y, dt);
        }
        y[0].re
    }

    #[test]
    fn zero_field_is_identity() {
        let y = vec![c(1.5), Complex64::new(-2.0, 0.25)];
        let out = rk4_step(|x| vec![c(0.0); x.len()], &y, 0.3);
        assert_eq!(out, y);
    }

    #[test]
    fn exponential_decay() {
        let y = integrate_decay(0.1, 100);
        let exact = (-10.0f64).exp();
        // the per-step truncation h⁵/120 accumulates to ~1e-5 relative, well inside 1e-6 absolute
        assert!((y - exact).abs() < 1e-6, "abs err {}", y - exact);
        assert!(((y - exact) / exact).abs() < 2e-5);
    }

    #[test]
    fn fourth_order_convergence() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate_decay(0.1, 10) - exact).abs();
        let e2 = (integrate_decay(0.05, 20) - exact).abs();
        assert!(e1 / e2 >= 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn von_neumann_matches_closed_form() {
        let sz = ComplexMatrix::real_diagonal(&[1.0, -1.0]);
        let rho0 = ComplexMatrix::from_real_rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let dt = 1e-3;
        let mut y = rho0.as_slice().to_vec();
        let i = Complex64::new(0.0, 1.0);
        for _ in 0..1000 {
            y = rk4_step(
                |x| {
                    let r = ComplexMatrix::from_vec(2, 2, x.to_vec()).unwrap();
                    sz.commutator(&r).scale(-i).into_vec()
                },
                &y,
                dt,
            );
        }
        let out = ComplexMatrix::from_vec(2, 2, y).unwrap();
        let u = unitary_exp(&sz, 1.0).unwrap();
        let exact = u.sandwich(&rho0);
        assert!(out.max_abs_diff(&exact) < 1e-10);
        assert!((out.trace() - c(1.0)).norm() < 1e-10);
    }
}
