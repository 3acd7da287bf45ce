//! Drift-diffusion of `ρ(s)` over output space and the closed-form solution for
//! commuting measured operators.
//!
//! ```text
//! ∂ρ/∂t = −i[H, ρ] + ½ S_ij ∂_i∂_j ρ + i(∂_iρ K_i† − K_i ∂_iρ) + Σ_γ (L_γ ρ L_γ† − ½{L_γ†L_γ, ρ})
//! ```
//!
//! This is the inverse Fourier image of the counting-field equation in [`crate::fcs`].

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fcs::{check_state, step_count, Dynamics};
use crate::model::MeasurementSetup;
use crate::numerics::eigen::{hermitian_eigendecomposition, operator_norm, spd_inverse};
use crate::numerics::{rk4_step, ComplexMatrix, Distribution, GridSpec, RealMatrix, UniformGrid, I};

/// Largest accepted `S_max·dt/h²`.
pub const CFL_LIMIT: f64 = 0.25;
/// Default width of the regularized initial delta, in grid spacings.
pub const DEFAULT_INITIAL_WIDTH: f64 = 2.0;

/// `ρ(s)` on a uniform grid: one d×d block per node, node-major.
#[derive(Clone, Debug)]
pub struct OutputField {
    pub grid: UniformGrid,
    pub dim: usize,
    pub data: Vec<Complex64>,
    pub time: f64,
}

impl OutputField {
    pub fn zeros(grid: UniformGrid, dim: usize) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); grid.len() * dim * dim];
        Self {
            grid,
            dim,
            data,
            time: 0.0,
        }
    }

    pub fn from_fn(grid: UniformGrid, dim: usize, mut f: impl FnMut(&[f64]) -> ComplexMatrix) -> Self {
        let mut field = Self::zeros(grid, dim);
        let d2 = dim * dim;
        for k in 0..field.grid.len() {
            let block = f(&field.grid.point(k));
            field.data[k * d2..(k + 1) * d2].copy_from_slice(block.as_slice());
        }
        field
    }

    pub fn block(&self, node: usize) -> ComplexMatrix {
        let d2 = self.dim * self.dim;
        ComplexMatrix::from_vec(self.dim, self.dim, self.data[node * d2..(node + 1) * d2].to_vec())
            .expect("block size")
    }

    pub fn blocks(&self) -> Vec<ComplexMatrix> {
        (0..self.grid.len()).map(|k| self.block(k)).collect()
    }

    /// Entry `(a, b)` of every block.
    pub fn component(&self, a: usize, b: usize) -> Vec<Complex64> {
        let d2 = self.dim * self.dim;
        (0..self.grid.len()).map(|k| self.data[k * d2 + a * self.dim + b]).collect()
    }

    /// `Σ_nodes Tr(block)·h^N`
    pub fn total_trace(&self) -> Complex64 {
        let d2 = self.dim * self.dim;
        let sum: Complex64 = (0..self.grid.len())
            .map(|k| (0..self.dim).map(|a| self.data[k * d2 + a * (self.dim + 1)]).sum::<Complex64>())
            .sum();
        sum * self.grid.cell_volume()
    }

    /// `∫ρ(s) ds`, the unconditioned density matrix.
    pub fn integrated(&self) -> ComplexMatrix {
        let d2 = self.dim * self.dim;
        let mut acc = vec![Complex64::new(0.0, 0.0); d2];
        for k in 0..self.grid.len() {
            for (a, x) in acc.iter_mut().zip(&self.data[k * d2..(k + 1) * d2]) {
                *a += x;
            }
        }
        ComplexMatrix::from_vec(self.dim, self.dim, acc)
            .expect("block size")
            .scale_real(self.grid.cell_volume())
    }
}

/// `P(s) = Re Tr ρ(s)`.
pub fn marginal(field: &OutputField) -> Distribution {
    let d2 = field.dim * field.dim;
    let density = (0..field.grid.len())
        .map(|k| (0..field.dim).map(|a| field.data[k * d2 + a * (field.dim + 1)].re).sum())
        .collect();
    Distribution {
        grid: field.grid.clone(),
        density,
    }
}

/// `out += c·a·b` for d×d row-major slices.
fn mul_acc(out: &mut [Complex64], a: &[Complex64], b: &[Complex64], d: usize, c: Complex64) {
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k] * c;
            if aik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
}

fn mul(a: &[Complex64], b: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    mul_acc(&mut out, a, b, d, Complex64::new(1.0, 0.0));
    out
}

/// Finite-difference generator on a fixed grid.
#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    grid: UniformGrid,
    d: usize,
    /// `−iH − ½Σ L†L`
    drift: Vec<Complex64>,
    drift_dag: Vec<Complex64>,
    jumps: Vec<(Vec<Complex64>, Vec<Complex64>)>,
    k_ops: Vec<Vec<Complex64>>,
    k_dag: Vec<Vec<Complex64>>,
    s_det: RealMatrix,
    strides: Vec<usize>,
}

impl DiffusionOperator {
    pub fn new(setup: &MeasurementSetup, grid: UniformGrid) -> Result<Self> {
        let n = setup.n_detectors();
        if grid.dims() != n {
            return Err(Error::DimensionMismatch(format!("s-grid has {} axes for {n} detectors", grid.dims())));
        }
        if n > 2 {
            return Err(Error::Unsupported(format!("drift-diffusion grids support N ≤ 2, got {n}")));
        }
        let dynamics = Dynamics::new(setup)?;
        let d = setup.dim();
        let mut drift = dynamics.hamiltonian.scale(-I);
        let mut jumps = Vec::new();
        for term in &dynamics.lindblad {
            drift.axpy(Complex64::new(-0.5, 0.0), &term.gram);
            jumps.push((term.op.as_slice().to_vec(), term.op.dagger().into_vec()));
        }
        let mut strides = vec![1; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * grid.axes[i + 1].points;
        }
        Ok(Self {
            d,
            drift_dag: drift.dagger().into_vec(),
            drift: drift.into_vec(),
            jumps,
            k_dag: dynamics.drift_ops.iter().map(|k| k.dagger().into_vec()).collect(),
            k_ops: dynamics.drift_ops.iter().map(|k| k.as_slice().to_vec()).collect(),
            s_det: dynamics.s_det,
            grid,
            strides,
        })
    }

    /// Time derivative of the flattened field.
    pub fn apply(&self, rho: &[Complex64]) -> Vec<Complex64> {
        let d = self.d;
        let d2 = d * d;
        let n = self.grid.dims();
        let zero = vec![Complex64::new(0.0, 0.0); d2];
        let mut out = vec![Complex64::new(0.0, 0.0); rho.len()];
        let one = Complex64::new(1.0, 0.0);

        let body = |(node, o): (usize, &mut [Complex64])| {
            let idx = self.grid.index(node);
            // Neighbour block at integer offsets per axis; zero outside the grid.
            let at = |offsets: &[isize]| -> &[Complex64] {
                let mut flat = node as isize;
                for (axis, &off) in offsets.iter().enumerate() {
                    let k = idx[axis] as isize + off;
                    if k < 0 || k >= self.grid.axes[axis].points as isize {
                        return &zero;
                    }
                    flat += off * self.strides[axis] as isize;
                }
                let f = flat as usize;
                &rho[f * d2..(f + 1) * d2]
            };
            let here = &rho[node * d2..(node + 1) * d2];

            mul_acc(o, &self.drift, here, d, one);
            mul_acc(o, here, &self.drift_dag, d, one);
            for (l, l_dag) in &self.jumps {
                let lr = mul(l, here, d);
                mul_acc(o, &lr, l_dag, d, one);
            }

            let mut off = vec![0isize; n];
            for i in 0..n {
                let h = self.grid.axes[i].step;
                off[i] = 1;
                let plus = at(&off);
                off[i] = -1;
                let minus = at(&off);
                off[i] = 0;
                let grad: Vec<Complex64> = plus.iter().zip(minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
                mul_acc(o, &grad, &self.k_dag[i], d, I);
                mul_acc(o, &self.k_ops[i], &grad, d, -I);
                let c = 0.5 * self.s_det[(i, i)] / (h * h);
                for e in 0..d2 {
                    o[e] += (plus[e] - 2.0 * here[e] + minus[e]) * c;
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let c = self.s_det[(i, j)] / (4.0 * self.grid.axes[i].step * self.grid.axes[j].step);
                    if c == 0.0 {
                        continue;
                    }
                    let corner = |si: isize, sj: isize| {
                        let mut off = vec![0isize; n];
                        off[i] = si;
                        off[j] = sj;
                        at(&off).to_vec()
                    };
                    let (pp, pm, mp, mm) = (corner(1, 1), corner(1, -1), corner(-1, 1), corner(-1, -1));
                    for e in 0..d2 {
                        o[e] += (pp[e] - pm[e] - mp[e] + mm[e]) * c;
                    }
                }
            }
        };
        if self.grid.len() >= 256 {
            out.par_chunks_mut(d2).enumerate().for_each(body);
        } else {
            out.chunks_mut(d2).enumerate().for_each(body);
        }
        out
    }
}

/// Time derivative of `field` under the drift-diffusion generator.
pub fn dd_rhs(field: &OutputField, setup: &MeasurementSetup) -> Result<OutputField> {
    let op = DiffusionOperator::new(setup, field.grid.clone())?;
    if field.dim != setup.dim() {
        return Err(Error::DimensionMismatch("field block size differs from the system dimension".into()));
    }
    Ok(OutputField {
        grid: field.grid.clone(),
        dim: field.dim,
        data: op.apply(&field.data),
        time: field.time,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Width of the Gaussian replacing `δ(s)`, in units of the grid spacing.
    pub initial_width: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            initial_width: DEFAULT_INITIAL_WIDTH,
        }
    }
}

/// Largest `|v|`: operator norm of `D_i = a_iα O_α` over detectors.
fn max_drift_speed(setup: &MeasurementSetup) -> f64 {
    (0..setup.n_detectors())
        .map(|i| {
            let mut dmat = ComplexMatrix::zeros(setup.dim(), setup.dim());
            for (a, o) in setup.measured_ops.iter().enumerate() {
                dmat.axpy(Complex64::new(setup.noise.a_cross_at(i, a), 0.0), o);
            }
            operator_norm(&dmat)
        })
        .fold(0.0, f64::max)
}

fn max_noise(setup: &MeasurementSetup) -> f64 {
    (0..setup.n_detectors()).map(|i| setup.noise.s_det[(i, i)]).fold(0.0, f64::max)
}

/// Step size that divides `t` evenly and keeps `S_max·dt/h² ≤ 0.24`.
pub fn stable_step(setup: &MeasurementSetup, s: GridSpec, t: f64) -> Result<f64> {
    let h = s.axis()?.step;
    let limit = 0.24 * h * h / max_noise(setup).max(f64::MIN_POSITIVE);
    let steps = (t / limit).ceil().max(1.0);
    Ok(t / steps)
}

/// Discretized `ρ0·δ(s)`: a Gaussian of width `initial_width·h`, normalized on the grid.
pub fn initial_field(rho0: &ComplexMatrix, grid: &UniformGrid, options: EvolveOptions) -> OutputField {
    let widths: Vec<f64> = grid.axes.iter().map(|a| options.initial_width * a.step).collect();
    let weights: Vec<f64> = (0..grid.len())
        .map(|k| {
            let s = grid.point(k);
            let q: f64 = s.iter().zip(&widths).map(|(x, w)| (x / w).powi(2)).sum();
            (-0.5 * q).exp()
        })
        .collect();
    let norm: f64 = weights.iter().sum::<f64>() * grid.cell_volume();
    let mut field = OutputField::zeros(grid.clone(), rho0.rows());
    let d2 = rho0.rows() * rho0.rows();
    for (k, w) in weights.iter().enumerate() {
        for (e, x) in rho0.as_slice().iter().enumerate() {
            field.data[k * d2 + e] = x * (w / norm);
        }
    }
    field
}

/// Field at time `t` plus the mass that left through the boundary.
#[derive(Clone, Debug)]
pub struct Evolved {
    pub field: OutputField,
    pub leaked_mass: f64,
}

pub fn evolve_field(
    setup: &MeasurementSetup,
    rho0: &ComplexMatrix,
    t: f64,
    dt: f64,
    s: GridSpec,
    options: EvolveOptions,
) -> Result<Evolved> {
    check_state(setup, rho0)?;
    if !(t >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("need t ≥ 0 and dt > 0, got t={t}, dt={dt}")));
    }
    let grid = s.grid(setup.n_detectors())?;
    let h = grid.axes.iter().map(|a| a.step).fold(f64::INFINITY, f64::min);
    let cfl = max_noise(setup) * dt / (h * h);
    if cfl > CFL_LIMIT {
        return Err(Error::CflViolation { value: cfl });
    }
    let speed = max_drift_speed(setup);
    if speed * dt > 0.5 * h {
        return Err(Error::DriftResolution {
            value: speed * dt,
            limit: 0.5 * h,
        });
    }
    let op = DiffusionOperator::new(setup, grid.clone())?;
    let mut field = initial_field(rho0, &grid, options);
    let initial = field.total_trace().re;
    let steps = step_count(t, dt);
    let step = if steps == 0 { 0.0 } else { t / steps as f64 };
    for _ in 0..steps {
        field.data = rk4_step(|y| op.apply(y), &field.data, step);
    }
    if field.data.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("drift-diffusion field".into()));
    }
    field.time = t;
    let leaked_mass = initial - field.total_trace().re;
    Ok(Evolved { field, leaked_mass })
}

/// Multivariate normal with covariance `S·t`.
pub fn free_propagator(s: &[f64], t: f64, s_det: &RealMatrix) -> Result<f64> {
    let z: Vec<Complex64> = s.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(Gaussian::new(s_det, t)?.at(&z).re)
}

/// `P0` with precomputed inverse, evaluated at complex arguments by analytic continuation.
#[derive(Clone, Debug)]
struct Gaussian {
    inv: RealMatrix,
    prefactor: f64,
    t: f64,
}

impl Gaussian {
    fn new(s_det: &RealMatrix, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
        }
        let (inv, det) = spd_inverse(s_det)?.ok_or(Error::SingularNoise)?;
        let n = s_det.rows() as i32;
        Ok(Self {
            inv,
            prefactor: (2.0 * PI * t).powi(-n).sqrt() / det.sqrt(),
            t,
        })
    }

    fn at(&self, z: &[Complex64]) -> Complex64 {
        let n = z.len();
        let mut q = Complex64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                q += z[i] * self.inv[(i, j)] * z[j];
            }
        }
        (-q / (2.0 * self.t)).exp() * self.prefactor
    }
}

/// Parameters of one eigenvalue pair `(a, b)` in the joint eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct PairData {
    pub a: usize,
    pub b: usize,
    /// `v_k = a_kα O_α` at `a` and `b`.
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    /// `w_k = S_αk O_α` at `a` and `b`.
    pub w: Vec<f64>,
    pub w_prime: Vec<f64>,
    /// `½ S_αβ (O_α − O′_α)(O_β − O′_β)`
    pub gamma_d: f64,
    /// Phase rate of the dissipator on `|a⟩⟨b|`.
    pub gamma_phase: f64,
}

/// Closed-form `ρ(s, t)` for commuting measured operators.
#[derive(Clone, Debug)]
pub struct CommutingSolution {
    basis: ComplexMatrix,
    energies: Vec<f64>,
    rho0: ComplexMatrix,
    pairs: Vec<PairData>,
    s_det: RealMatrix,
}

const COMMUTATOR_TOLERANCE: f64 = 1e-12;

fn mixing_coefficient(k: usize) -> f64 {
    // well-spread irrational weights so joint degeneracies are the only degeneracies
    let golden = 0.618_033_988_749_894_9;
    0.5 + ((k as f64 + 1.0) * golden).fract()
}

impl CommutingSolution {
    pub fn new(setup: &MeasurementSetup, rho0: &ComplexMatrix) -> Result<Self> {
        check_state(setup, rho0)?;
        let ops = &setup.measured_ops;
        let h = &setup.hamiltonian;
        let scale = ops.iter().chain([h]).map(ComplexMatrix::max_abs).fold(1e-300, f64::max);
        for (x, oa) in ops.iter().enumerate() {
            for ob in &ops[x + 1..] {
                let c = oa.commutator(ob).max_abs();
                if c > COMMUTATOR_TOLERANCE * scale * scale {
                    return Err(Error::NonCommutingOperators(c));
                }
            }
            let c = h.commutator(oa).max_abs();
            if c > COMMUTATOR_TOLERANCE * scale * scale {
                return Err(Error::HamiltonianMixesEigenbasis(c));
            }
        }

        let d = setup.dim();
        let mut generic = ComplexMatrix::zeros(d, d);
        for (k, m) in ops.iter().chain([h]).enumerate() {
            let norm = m.max_abs();
            if norm > 0.0 {
                generic.axpy(Complex64::new(mixing_coefficient(k) / norm, 0.0), m);
            }
        }
        let basis = hermitian_eigendecomposition(&generic.hermitian_part())?.vectors;
        let rotate = |m: &ComplexMatrix| basis.dagger().matmul(m).matmul(&basis);
        let diagonal = |m: &ComplexMatrix| -> Result<Vec<f64>> {
            let r = rotate(m);
            let off = (0..d)
                .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| r[(i, j)].norm())
                .fold(0.0, f64::max);
            if off > 1e-9 * scale {
                return Err(Error::NonCommutingOperators(off));
            }
            Ok((0..d).map(|i| r[(i, i)].re).collect())
        };
        let eigen: Vec<Vec<f64>> = ops.iter().map(diagonal).collect::<Result<_>>()?;
        let energies = diagonal(h)?;

        let dynamics = Dynamics::new(setup)?;
        let ell: Vec<Vec<Complex64>> = dynamics
            .lindblad
            .iter()
            .map(|t| {
                let r = rotate(&t.op);
                (0..d).map(|i| r[(i, i)]).collect()
            })
            .collect();

        let n = setup.n_detectors();
        let m = ops.len();
        let noise = &setup.noise;
        let at = |a: usize, f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            (0..n).map(|k| (0..m).map(|al| f(k, al) * eigen[al][a]).sum()).collect()
        };
        let mut pairs = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let delta: Vec<f64> = (0..m).map(|al| eigen[al][a] - eigen[al][b]).collect();
                let mut gamma_d = 0.0;
                for x in 0..m {
                    for y in 0..m {
                        gamma_d += 0.5 * noise.s_op[(x, y)] * delta[x] * delta[y];
                    }
                }
                let gamma_phase = ell.iter().map(|l| (l[a] * l[b].conj()).im).sum();
                pairs.push(PairData {
                    a,
                    b,
                    v: at(a, &|k, al| noise.a_cross_at(k, al)),
                    v_prime: at(b, &|k, al| noise.a_cross_at(k, al)),
                    w: at(a, &|k, al| noise.s_cross_at(al, k)),
                    w_prime: at(b, &|k, al| noise.s_cross_at(al, k)),
                    gamma_d,
                    gamma_phase,
                });
            }
        }
        Ok(Self {
            rho0: rotate(rho0),
            basis,
            energies,
            pairs,
            s_det: noise.s_det.clone(),
        })
    }

    /// Joint eigenbasis as the columns of a unitary.
    pub fn basis(&self) -> &ComplexMatrix {
        &self.basis
    }

    pub fn pair(&self, a: usize, b: usize) -> &PairData {
        &self.pairs[a * self.energies.len() + b]
    }

    pub fn pairs(&self) -> &[PairData] {
        &self.pairs
    }

    /// `ρ(s, t)` in the joint eigenbasis.
    pub fn evaluate_eigenbasis(&self, t: f64, s: &[f64]) -> Result<ComplexMatrix> {
        let p0 = Gaussian::new(&self.s_det, t)?;
        Ok(self.evaluate_with(&p0, t, s))
    }

    fn evaluate_with(&self, p0: &Gaussian, t: f64, s: &[f64]) -> ComplexMatrix {
        let d = self.energies.len();
        ComplexMatrix::from_fn(d, d, |a, b| {
            let p = self.pair(a, b);
            let z: Vec<Complex64> = (0..s.len())
                .map(|k| Complex64::new(s[k] - 0.5 * (p.v[k] + p.v_prime[k]) * t, -(p.w[k] - p.w_prime[k]) * t))
                .collect();
            let phase = p.gamma_phase - (self.energies[a] - self.energies[b]);
            self.rho0[(a, b)] * p0.at(&z) * Complex64::from_polar((-p.gamma_d * t).exp(), phase * t)
        })
    }

    /// `ρ(s, t)` in the original basis.
    pub fn evaluate(&self, t: f64, s: &[f64]) -> Result<ComplexMatrix> {
        Ok(self.basis.matmul(&self.evaluate_eigenbasis(t, s)?).matmul(&self.basis.dagger()))
    }

    /// Solution tabulated on a grid, in the joint eigenbasis.
    pub fn field_eigenbasis(&self, t: f64, grid: &UniformGrid) -> Result<OutputField> {
        let p0 = Gaussian::new(&self.s_det, t)?;
        let mut field = OutputField::from_fn(grid.clone(), self.energies.len(), |s| self.evaluate_with(&p0, t, s));
        field.time = t;
        Ok(field)
    }

    /// Solution tabulated on a grid, in the original basis.
    pub fn field(&self, t: f64, grid: &UniformGrid) -> Result<OutputField> {
        let p0 = Gaussian::new(&self.s_det, t)?;
        let mut field = OutputField::from_fn(grid.clone(), self.energies.len(), |s| {
            self.basis.matmul(&self.evaluate_with(&p0, t, s)).matmul(&self.basis.dagger())
        });
        field.time = t;
        Ok(field)
    }

    /// Rotates a field from the original basis into the joint eigenbasis.
    pub fn to_eigenbasis(&self, field: &OutputField) -> OutputField {
        let v = &self.basis;
        let mut out = field.clone();
        let d2 = field.dim * field.dim;
        for k in 0..field.grid.len() {
            let r = v.dagger().matmul(&field.block(k)).matmul(v);
            out.data[k * d2..(k + 1) * d2].copy_from_slice(r.as_slice());
        }
        out
    }
}

pub fn commuting_solution(setup: &MeasurementSetup, rho0: &ComplexMatrix, t: f64, s: &[f64]) -> Result<ComplexMatrix> {
    CommutingSolution::new(setup, rho0)?.evaluate(t, s)
}
