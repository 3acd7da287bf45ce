//! Counting-field evolution of the pseudo-density matrix.
//!
//! For counting fields `χ` the pseudo-density matrix obeys
//!
//! ```text
//! ∂ρ̃/∂t = −i[H, ρ̃] − ½ χ·S·χ ρ̃ + χ_i (K_i ρ̃ − ρ̃ K_i†) + Σ_γ (L_γ ρ̃ L_γ† − ½{L_γ†L_γ, ρ̃})
//! ```
//!
//! with `K_i = Σ_α (S_αi − i a_iα/2) O_α`. Its trace is the generating function,
//! and `P(s) = ∫ dχ/(2π)^N e^{i s·χ} Tr ρ̃(χ)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{lindblad_set, master_rhs, LindbladTerm, MeasurementSetup};
use crate::numerics::quadrature::inverse_transform;
use crate::numerics::{rk4_step, try_rk4_step, ComplexMatrix, Distribution, GridSpec, RealMatrix, UniformGrid};

/// Relative change per step above which evolution is aborted.
pub const STEP_GUARD: f64 = 0.1;
/// Target `rate·dt` for automatically chosen steps.
const STEP_RATE: f64 = 0.02;
const MIN_STEPS: usize = 50;

/// Precomputed operators of a setup.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub hamiltonian: ComplexMatrix,
    /// `K_i`, one per detector.
    pub drift_ops: Vec<ComplexMatrix>,
    drift_dag: Vec<ComplexMatrix>,
    pub lindblad: Vec<LindbladTerm>,
    pub s_det: RealMatrix,
}

impl Dynamics {
    pub fn new(setup: &MeasurementSetup) -> Result<Self> {
        let drift_ops = setup.drift_operators();
        let drift_dag = drift_ops.iter().map(ComplexMatrix::dagger).collect();
        Ok(Self {
            hamiltonian: setup.hamiltonian.clone(),
            drift_ops,
            drift_dag,
            lindblad: lindblad_set(setup)?,
            s_det: setup.noise.s_det.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.rows()
    }

    pub fn n_detectors(&self) -> usize {
        self.drift_ops.len()
    }

    /// Unconditioned generator `−i[H, ρ] + 𝓓(ρ)`.
    pub fn master(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        master_rhs(&self.hamiltonian, &self.lindblad, rho)
    }

    /// `K_i ρ − ρ K_i†`, the coefficient of `χ_i`.
    pub fn counting(&self, i: usize, rho: &ComplexMatrix) -> ComplexMatrix {
        self.drift_ops[i].matmul(rho) - rho.matmul(&self.drift_dag[i])
    }

    /// `½ χ·S·χ`
    pub fn gaussian_rate(&self, chi: &[f64]) -> f64 {
        let n = chi.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += chi[i] * self.s_det[(i, j)] * chi[j];
            }
        }
        0.5 * q
    }

    /// Right-hand side without the scalar Gaussian term.
    pub fn reduced_rhs(&self, rho: &ComplexMatrix, chi: &[f64]) -> ComplexMatrix {
        let mut out = self.master(rho);
        for (i, &c) in chi.iter().enumerate() {
            if c != 0.0 {
                out.axpy(Complex64::new(c, 0.0), &self.counting(i, rho));
            }
        }
        out
    }

    pub fn rhs(&self, rho: &ComplexMatrix, chi: &[f64]) -> ComplexMatrix {
        let mut out = self.reduced_rhs(rho, chi);
        out.axpy(Complex64::new(-self.gaussian_rate(chi), 0.0), rho);
        out
    }

    /// Crude bound on the spectral radius of the reduced generator.
    pub fn rate_bound(&self, chi: &[f64]) -> f64 {
        let h = 2.0 * self.hamiltonian.frobenius_norm();
        let k: f64 = chi
            .iter()
            .zip(&self.drift_ops)
            .map(|(c, k)| 2.0 * c.abs() * k.frobenius_norm())
            .sum();
        let l: f64 = self.lindblad.iter().map(|t| 2.0 * t.gram.frobenius_norm()).sum();
        h + k + l
    }

    /// Step size for evolving to `t` with `rate·dt ≤ 0.02` and at least 50 steps.
    pub fn default_step(&self, chi: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let rate = self.rate_bound(chi).max(1e-300);
        let steps = ((t * rate / STEP_RATE).ceil() as usize).max(MIN_STEPS);
        t / steps as f64
    }

    fn check_chi(&self, chi: &[f64]) -> Result<()> {
        if chi.len() != self.n_detectors() {
            return Err(Error::DimensionMismatch(format!(
                "χ has {} components for {} detectors",
                chi.len(),
                self.n_detectors()
            )));
        }
        if chi.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("χ".into()));
        }
        Ok(())
    }

    /// RK4 on `σ` with `ρ̃ = e^{−½χSχ t} σ`; the scalar factor is applied exactly.
    pub fn evolve(&self, rho0: &ComplexMatrix, chi: &[f64], t: f64, dt: f64) -> Result<ComplexMatrix> {
        self.check_chi(chi)?;
        check_time(t, dt)?;
        let d = self.dim();
        let steps = step_count(t, dt);
        let h = if steps == 0 { 0.0 } else { t / steps as f64 };
        let mut sigma = rho0.as_slice().to_vec();
        for _ in 0..steps {
            let next = rk4_step(
                |y| {
                    let m = ComplexMatrix::from_vec(d, d, y.to_vec()).expect("square state");
                    self.reduced_rhs(&m, chi).into_vec()
                },
                &sigma,
                h,
            );
            guard_step(&sigma, &next, h)?;
            sigma = next;
        }
        let factor = (-self.gaussian_rate(chi) * t).exp();
        Ok(ComplexMatrix::from_vec(d, d, sigma)?.scale_real(factor))
    }
}

pub(crate) fn check_time(t: f64, dt: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("t must be finite and ≥ 0, got {t}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Number of equal steps covering `t` with step at most `dt` (up to rounding).
pub(crate) fn step_count(t: f64, dt: f64) -> usize {
    let n = t / dt;
    let r = n.round();
    if (n - r).abs() <= 1e-9 * n.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn guard_step(before: &[Complex64], after: &[Complex64], dt: f64) -> Result<()> {
    let delta: f64 = before.iter().zip(after).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let scale = norm(before);
    if !delta.is_finite() {
        return Err(Error::NonFinite("pseudo-density evolution".into()));
    }
    if delta > STEP_GUARD * scale {
        return Err(Error::StepTooLarge {
            ratio: delta / scale,
            dt,
        });
    }
    Ok(())
}

/// Right-hand side of the counting-field equation at `chi`.
pub fn fcs_rhs(rho: &ComplexMatrix, chi: &[f64], setup: &MeasurementSetup) -> Result<ComplexMatrix> {
    let dynamics = Dynamics::new(setup)?;
    dynamics.check_chi(chi)?;
    Ok(dynamics.rhs(rho, chi))
}

pub fn evolve_pseudo_density(
    setup: &MeasurementSetup,
    rho0: &ComplexMatrix,
    chi: &[f64],
    t: f64,
    dt: f64,
) -> Result<ComplexMatrix> {
    check_state(setup, rho0)?;
    Dynamics::new(setup)?.evolve(rho0, chi, t, dt)
}

/// `Tr ρ̃(χ; t)` with an automatically chosen step.
pub fn generating_function(setup: &MeasurementSetup, rho0: &ComplexMatrix, chi: &[f64], t: f64) -> Result<Complex64> {
    check_state(setup, rho0)?;
    let dynamics = Dynamics::new(setup)?;
    let dt = dynamics.default_step(chi, t);
    Ok(dynamics.evolve(rho0, chi, t, dt)?.trace())
}

pub(crate) fn check_state(setup: &MeasurementSetup, rho: &ComplexMatrix) -> Result<()> {
    let d = setup.dim();
    if rho.rows() != d || rho.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "initial state is {}x{}, system dimension is {d}",
            rho.rows(),
            rho.cols()
        )));
    }
    if !rho.is_finite() {
        return Err(Error::NonFinite("initial state".into()));
    }
    Ok(())
}

/// Default χ-grid: `χ_max = 8/√(S_min t)`, 128 points per axis.
pub fn default_chi_grid(setup: &MeasurementSetup, t: f64) -> Result<GridSpec> {
    let (values, _) = crate::numerics::eigen::symmetric_eigendecomposition(&setup.noise.s_det)?;
    let s_min = values.last().copied().unwrap_or(0.0);
    if !(s_min > 0.0) || !(t > 0.0) {
        return Err(Error::SingularNoise);
    }
    Ok(GridSpec::new(8.0 / (s_min * t).sqrt(), 128))
}

/// `ρ̃(χ; t)` on every node of a χ-grid.
#[derive(Clone, Debug)]
pub struct PseudoDensityField {
    pub chi_grid: UniformGrid,
    pub matrices: Vec<ComplexMatrix>,
    pub time: f64,
}

impl PseudoDensityField {
    pub fn traces(&self) -> Vec<Complex64> {
        self.matrices.iter().map(ComplexMatrix::trace).collect()
    }
}

/// Evolves every χ node independently (in parallel); results stay in grid order.
pub fn pseudo_density_field(
    setup: &MeasurementSetup,
    rho0: &ComplexMatrix,
    t: f64,
    chi_grid: &UniformGrid,
) -> Result<PseudoDensityField> {
    check_state(setup, rho0)?;
    let dynamics = Dynamics::new(setup)?;
    if chi_grid.dims() != dynamics.n_detectors() {
        return Err(Error::DimensionMismatch(format!(
            "χ-grid has {} axes for {} detectors",
            chi_grid.dims(),
            dynamics.n_detectors()
        )));
    }
    // One step size for the whole grid, fixed by the largest |χ|.
    let corner: Vec<f64> = chi_grid.axes.iter().map(|a| a.start.abs().max(a.end().abs())).collect();
    let dt = dynamics.default_step(&corner, t);
    let matrices = (0..chi_grid.len())
        .into_par_iter()
        .map(|k| dynamics.evolve(rho0, &chi_grid.point(k), t, dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoDensityField {
        chi_grid: chi_grid.clone(),
        matrices,
        time: t,
    })
}

/// Output distribution plus the largest imaginary residue of the transform.
#[derive(Clone, Debug)]
pub struct FcsDistribution {
    pub distribution: Distribution,
    pub max_residue: f64,
}

pub fn output_distribution_fcs(
    setup: &MeasurementSetup,
    rho0: &ComplexMatrix,
    t: f64,
    chi: GridSpec,
    s: GridSpec,
) -> Result<FcsDistribution> {
    let n = setup.n_detectors();
    if n > 2 {
        return Err(Error::Unsupported(format!(
            "inverse transform is limited to N ≤ 2 detectors, got {n}; use cumulants instead"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let chi_grid = chi.grid(n)?;
    let s_grid = s.grid(n)?;
    let field = pseudo_density_field(setup, rho0, t, &chi_grid)?;
    let values = inverse_transform(&chi_grid, &field.traces(), &s_grid)?;
    let max_residue = values.iter().map(|v| v.residue().abs()).fold(0.0, f64::max);
    let density = values.iter().map(|v| v.density()).collect();
    Ok(FcsDistribution {
        distribution: Distribution::new(s_grid, density)?,
        max_residue,
    })
}

/// First two cumulants of the integrated outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Cumulants {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Mean and covariance from exact χ-derivatives of `ρ̃`, propagated alongside it.
///
/// With `σ = σ₀ + χ_i σ_i + ½ χ_i χ_j σ_ij + …`, `ln GF = −½χSχt + ln Tr σ` gives
/// `⟨s_i⟩ = i Tr σ_i` and `cov_ij = S_ij t − (Tr σ_ij − Tr σ_i Tr σ_j)`.
pub fn cumulants(setup: &MeasurementSetup, rho0: &ComplexMatrix, t: f64) -> Result<Cumulants> {
    check_state(setup, rho0)?;
    let dynamics = Dynamics::new(setup)?;
    let n = dynamics.n_detectors();
    let d = dynamics.dim();
    let dd = d * d;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let blocks = 1 + n + pairs.len();
    // The step depends only on the χ-independent generator, so recombining the
    // outputs linearly recombines the propagated derivatives exactly.
    let dt = dynamics.default_step(&vec![0.0; n], t);
    check_time(t, dt)?;
    let steps = step_count(t, dt);
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };

    let mut state = vec![Complex64::new(0.0, 0.0); blocks * dd];
    state[..dd].copy_from_slice(rho0.as_slice());
    let block = |y: &[Complex64], b: usize| ComplexMatrix::from_vec(d, d, y[b * dd..(b + 1) * dd].to_vec()).expect("square");
    let rhs = |y: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(y.len());
        let s0 = block(y, 0);
        out.extend(dynamics.master(&s0).into_vec());
        for i in 0..n {
            let si = block(y, 1 + i);
            let mut v = dynamics.master(&si);
            v += &dynamics.counting(i, &s0);
            out.extend(v.into_vec());
        }
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let sij = block(y, 1 + n + p);
            let mut v = dynamics.master(&sij);
            v += &dynamics.counting(i, &block(y, 1 + j));
            v += &dynamics.counting(j, &block(y, 1 + i));
            out.extend(v.into_vec());
        }
        Ok(out)
    };
    for _ in 0..steps {
        state = try_rk4_step(rhs, &state, h)?;
        if state.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite("cumulant propagation".into()));
        }
    }

    let tr = |b: usize| block(&state, b).trace();
    let first: Vec<Complex64> = (0..n).map(|i| tr(1 + i)).collect();
    let mean = first.iter().map(|m| (Complex64::i() * m).re).collect();
    let mut covariance = vec![vec![0.0; n]; n];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let connected = tr(1 + n + p) - first[i] * first[j];
        let c = dynamics.s_det[(i, j)] * t - connected.re;
        covariance[i][j] = c;
        covariance[j][i] = c;
    }
    Ok(Cumulants { mean, covariance })
}

/// Central finite differences of `ln GF` with step `h = 1e-3/√t`.
pub fn cumulants_finite_difference(setup: &MeasurementSetup, rho0: &ComplexMatrix, t: f64) -> Result<Cumulants> {
    check_state(setup, rho0)?;
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let dynamics = Dynamics::new(setup)?;
    let n = dynamics.n_detectors();
    let h = 1e-3 / t.sqrt();
    let dt = dynamics.default_step(&vec![2.0 * h; n], t);
    let ln_gf = |chi: &[f64]| -> Result<Complex64> { Ok(dynamics.evolve(rho0, chi, t, dt)?.trace().ln()) };
    let shifted = |pairs: &[(usize, f64)]| {
        let mut chi = vec![0.0; n];
        for &(k, x) in pairs {
            chi[k] += x;
        }
        ln_gf(&chi)
    };
    let g0 = shifted(&[])?;
    let mut mean = vec![0.0; n];
    let mut covariance = vec![vec![0.0; n]; n];
    for i in 0..n {
        let plus = shifted(&[(i, h)])?;
        let minus = shifted(&[(i, -h)])?;
        mean[i] = (Complex64::i() * (plus - minus) / (2.0 * h)).re;
        covariance[i][i] = -((plus - 2.0 * g0 + minus) / (h * h)).re;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let pp = shifted(&[(i, h), (j, h)])?;
            let pm = shifted(&[(i, h), (j, -h)])?;
            let mp = shifted(&[(i, -h), (j, h)])?;
            let mm = shifted(&[(i, -h), (j, -h)])?;
            let c = -((pp - pm - mp + mm) / (4.0 * h * h)).re;
            covariance[i][j] = c;
            covariance[j][i] = c;
        }
    }
    Ok(Cumulants { mean, covariance })
}
