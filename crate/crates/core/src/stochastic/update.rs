use num_complex::Complex64;

use super::auxiliary::{hermite_functions, AuxiliarySystem, Outcomes};
use crate::error::{Error, Result};
use crate::numerics::eigen::{hermitian_eigendecomposition, operator_norm, unitary_exp};
use crate::numerics::{ComplexMatrix, RngStream, UniformAxis};

/// Upper bound on `√(S dt)·‖B‖` for the weak expansion to hold.
pub const WEAK_GUARD: f64 = 0.1;
/// Allowed drift of the outcome distribution's total probability.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// One pure component `p_k |φ_k⟩` of `R̂`, with blocks `V_n = ⟨n|U|φ_k⟩`.
#[derive(Clone, Debug)]
struct Branch {
    weight: f64,
    blocks: Vec<ComplexMatrix>,
}

#[derive(Clone, Debug)]
enum Readout {
    Discrete {
        values: Vec<f64>,
        /// Per outcome, `(p_k, A_{c,k})`.
        kraus: Vec<Vec<(f64, ComplexMatrix)>>,
    },
    Continuous {
        axis: UniformAxis,
        n_max: usize,
        /// `(n, m)` with `n ≤ m`.
        pairs: Vec<(usize, usize)>,
        /// `Σ_k p_k V_m† V_n` per pair.
        grams: Vec<ComplexMatrix>,
        /// Trapezoid integral of `ψ_n ψ_m` from the left edge, per node then pair.
        cumulative: Vec<Vec<f64>>,
    },
}

/// The conditional map `L_c r = Σ_k p_k A_{c,k} r A_{c,k}†` with
/// `A_{c,k} = ⟨c|U_B|φ_k⟩` and `U_B = exp(+i√(S dt)(B b̂† + B† b̂))`.
#[derive(Clone, Debug)]
pub struct ConditionalMap {
    dim: usize,
    branches: Vec<Branch>,
    readout: Readout,
}

impl ConditionalMap {
    pub fn new(b: &ComplexMatrix, dt: f64, s: f64, aux: &AuxiliarySystem) -> Result<Self> {
        if !(dt > 0.0) || !(s > 0.0) {
            return Err(Error::InvalidInput(format!("need dt > 0 and S > 0, got dt = {dt}, S = {s}")));
        }
        let theta = (s * dt).sqrt();
        let guard = theta * operator_norm(b);
        if !(guard <= WEAK_GUARD) {
            return Err(Error::GuardViolation(guard));
        }
        let d = b.rows();
        let da = aux.dim();
        let bd_aux = aux.b_op.dagger();
        let generator = &b.kron(&bd_aux) + &b.dagger().kron(&aux.b_op);
        let u = unitary_exp(&generator, -theta)?;
        let block = |n: usize, m: usize| ComplexMatrix::from_fn(d, d, |a, c| u[(a * da + n, c * da + m)]);
        let blocks: Vec<Vec<ComplexMatrix>> = (0..da).map(|n| (0..da).map(|m| block(n, m)).collect()).collect();

        let r_eig = hermitian_eigendecomposition(&aux.init_state)?;
        let mut branches = Vec::new();
        for (k, &p) in r_eig.values.iter().enumerate() {
            if p <= 1e-14 {
                continue;
            }
            let phi = r_eig.vectors.column(k);
            let v = (0..da)
                .map(|n| {
                    let mut acc = ComplexMatrix::zeros(d, d);
                    for (m, &amp) in phi.iter().enumerate() {
                        if amp != Complex64::new(0.0, 0.0) {
                            acc.axpy(amp, &blocks[n][m]);
                        }
                    }
                    acc
                })
                .collect();
            branches.push(Branch { weight: p, blocks: v });
        }

        let readout = match &aux.outcomes {
            Outcomes::Discrete { values, states } => {
                let kraus = states
                    .iter()
                    .map(|e| {
                        branches
                            .iter()
                            .map(|br| {
                                let mut a = ComplexMatrix::zeros(d, d);
                                for (n, v) in br.blocks.iter().enumerate() {
                                    a.axpy(e[n].conj(), v);
                                }
                                (br.weight, a)
                            })
                            .collect()
                    })
                    .collect();
                Readout::Discrete {
                    values: values.clone(),
                    kraus,
                }
            }
            Outcomes::Continuous { axis, n_max } => {
                let n_max = *n_max;
                let pairs: Vec<(usize, usize)> = (0..=n_max).flat_map(|n| (n..=n_max).map(move |m| (n, m))).collect();
                let grams = pairs
                    .iter()
                    .map(|&(n, m)| {
                        let mut g = ComplexMatrix::zeros(d, d);
                        for br in &branches {
                            g.axpy(Complex64::new(br.weight, 0.0), &br.blocks[m].dagger().matmul(&br.blocks[n]));
                        }
                        g
                    })
                    .collect();
                let psi: Vec<Vec<f64>> = (0..axis.points).map(|j| hermite_functions(n_max, axis.node(j))).collect();
                let mut cumulative = Vec::with_capacity(axis.points);
                let mut acc = vec![0.0; pairs.len()];
                cumulative.push(acc.clone());
                for j in 1..axis.points {
                    for (p, &(n, m)) in pairs.iter().enumerate() {
                        acc[p] += 0.5 * axis.step * (psi[j - 1][n] * psi[j - 1][m] + psi[j][n] * psi[j][m]);
                    }
                    cumulative.push(acc.clone());
                }
                Readout::Continuous {
                    axis: axis.clone(),
                    n_max,
                    pairs,
                    grams,
                    cumulative,
                }
            }
        };
        Ok(Self {
            dim: d,
            branches,
            readout,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.readout, Readout::Discrete { .. })
    }

    /// Outcome values for a discrete readout.
    pub fn outcome_values(&self) -> Option<&[f64]> {
        match &self.readout {
            Readout::Discrete { values, .. } => Some(values),
            Readout::Continuous { .. } => None,
        }
    }

    /// `(p_k, A_{c,k})` for an outcome `c`.
    pub fn kraus(&self, c: f64) -> Result<Vec<(f64, ComplexMatrix)>> {
        match &self.readout {
            Readout::Discrete { values, kraus } => {
                let idx = discrete_index(values, c)?;
                Ok(kraus[idx].clone())
            }
            Readout::Continuous { n_max, .. } => {
                let psi = hermite_functions(*n_max, c);
                Ok(self
                    .branches
                    .iter()
                    .map(|br| {
                        let mut a = ComplexMatrix::zeros(self.dim, self.dim);
                        for (n, v) in br.blocks.iter().enumerate() {
                            a.axpy(Complex64::new(psi[n], 0.0), v);
                        }
                        (br.weight, a)
                    })
                    .collect())
            }
        }
    }

    /// Unnormalized `L_c r`; its trace is the outcome probability (density).
    pub fn apply(&self, r: &ComplexMatrix, c: f64) -> Result<ComplexMatrix> {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for (p, a) in self.kraus(c)? {
            out.axpy(Complex64::new(p, 0.0), &a.sandwich(r));
        }
        Ok(out)
    }

    pub fn probability(&self, r: &ComplexMatrix, c: f64) -> Result<f64> {
        Ok(self.apply(r, c)?.trace().re)
    }

    /// Normalized update `L_c r / P(c)` together with `P(c)`.
    pub fn update(&self, r: &ComplexMatrix, c: f64) -> Result<(ComplexMatrix, f64)> {
        let out = self.apply(r, c)?;
        let p = out.trace().re;
        if !(p > 0.0) {
            return Err(Error::NormalizationLoss(p));
        }
        Ok((out.scale_real(1.0 / p), p))
    }

    /// `Σ_c L_c r`, or `∫ L_c r dc` on the outcome grid.
    pub fn average(&self, r: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        match &self.readout {
            Readout::Discrete { kraus, .. } => {
                for branch in kraus {
                    for (p, a) in branch {
                        out.axpy(Complex64::new(*p, 0.0), &a.sandwich(r));
                    }
                }
            }
            Readout::Continuous {
                pairs, cumulative, ..
            } => {
                let total = cumulative.last().expect("non-empty grid");
                for br in &self.branches {
                    for (p, &(n, m)) in pairs.iter().enumerate() {
                        let w = br.weight * total[p];
                        let term = br.blocks[n].matmul(r).matmul(&br.blocks[m].dagger());
                        out.axpy(Complex64::new(w, 0.0), &term);
                        if n != m {
                            out.axpy(Complex64::new(w, 0.0), &term.dagger());
                        }
                    }
                }
            }
        }
        out
    }

    /// Draws an outcome from `P(c) = Tr L_c r`.
    pub fn sample(&self, r: &ComplexMatrix, rng: &mut RngStream) -> Result<f64> {
        let u = rng.uniform();
        match &self.readout {
            Readout::Discrete { values, kraus } => {
                let probs: Vec<f64> = kraus
                    .iter()
                    .map(|branch| branch.iter().map(|(p, a)| p * a.sandwich(r).trace().re).sum())
                    .collect();
                let total: f64 = probs.iter().sum();
                if !((total - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
                    return Err(Error::NormalizationLoss(total));
                }
                let target = u * total;
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if target < acc {
                        return Ok(values[k]);
                    }
                }
                Ok(values[probs.iter().rposition(|&p| p > 0.0).unwrap_or(values.len() - 1)])
            }
            Readout::Continuous {
                axis,
                pairs,
                grams,
                cumulative,
                ..
            } => {
                let weights: Vec<f64> = pairs
                    .iter()
                    .zip(grams)
                    .map(|(&(n, m), g)| {
                        let t = trace_product(g, r);
                        if n == m {
                            t
                        } else {
                            2.0 * t
                        }
                    })
                    .collect();
                let cdf = |j: usize| -> f64 { weights.iter().zip(&cumulative[j]).map(|(w, f)| w * f).sum() };
                let last = axis.points - 1;
                let total = cdf(last);
                if !((total - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
                    return Err(Error::NormalizationLoss(total));
                }
                let target = u * total;
                // Largest j with cdf(j) ≤ target.
                let (mut lo, mut hi) = (0usize, last);
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if cdf(mid) <= target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let (f_lo, f_hi) = (cdf(lo), cdf(hi));
                let frac = if f_hi > f_lo {
                    ((target - f_lo) / (f_hi - f_lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                Ok(axis.node(lo) + frac * axis.step)
            }
        }
    }
}

/// `Re Tr[g r]`
fn trace_product(g: &ComplexMatrix, r: &ComplexMatrix) -> f64 {
    let d = g.rows();
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += (g[(a, b)] * r[(b, a)]).re;
        }
    }
    acc
}

fn discrete_index(values: &[f64], c: f64) -> Result<usize> {
    values
        .iter()
        .position(|&v| (v - c).abs() <= 1e-12 * v.abs().max(1.0))
        .ok_or_else(|| Error::InvalidInput(format!("{c} is not an outcome of the auxiliary readout")))
}

/// Unnormalized conditional update `L_c r` for a single outcome.
pub fn conditional_map(
    r: &ComplexMatrix,
    b: &ComplexMatrix,
    dt: f64,
    s: f64,
    aux: &AuxiliarySystem,
    c: f64,
) -> Result<ComplexMatrix> {
    check_square(r, b)?;
    ConditionalMap::new(b, dt, s, aux)?.apply(r, c)
}

/// One outcome drawn from `P(c) = Tr L_c r`.
pub fn sample_outcome(
    r: &ComplexMatrix,
    b: &ComplexMatrix,
    dt: f64,
    s: f64,
    aux: &AuxiliarySystem,
    rng: &mut RngStream,
) -> Result<f64> {
    check_square(r, b)?;
    ConditionalMap::new(b, dt, s, aux)?.sample(r, rng)
}

fn check_square(r: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if r.rows() != b.rows() || r.cols() != b.cols() || !b.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, B is {}x{}",
            r.rows(),
            r.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}
