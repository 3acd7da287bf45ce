//! Explicit single-step updates in the two limits where `B` is normal.
//!
//! With `θ_a = √(dt/S) D_a` in the eigenbasis of `D` (no cross-noise, `B = −iD/2S`):
//!
//! ```text
//! oscillator:  P(c) = Σ_a r_aa G(c − θ_a),              r^{ab} √(G(c−θ_a) G(c−θ_b)) / P(c)
//! qubit:       P(c) = ½(1 + c Σ_a r_aa sin θ_a),          r^{ab} [cos((θ_a−θ_b)/2) + c sin((θ_a+θ_b)/2)] / 2P(c)
//! ```
//!
//! and in the eigenbasis of `R` (no susceptibility, `B = R/2S`) the update is the
//! phase `exp(i c √(dt/S) (R_a − R_b)/2)` with `P(c)` the bare readout distribution.

use num_complex::Complex64;

use super::auxiliary::AuxKind;
use crate::error::{Error, Result};
use crate::numerics::distribution::gaussian;
use crate::numerics::eigen::hermitian_eigendecomposition;
use crate::numerics::ComplexMatrix;
use crate::separation::SeparatedSetup;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limit {
    /// `S_αi = 0`: the detector responds without adding operator noise.
    NoCrossNoise,
    /// `a_iα = 0`: the detector only adds back-action noise.
    NoSusceptibility,
}

#[derive(Clone, Debug)]
pub struct ClosedFormUpdate {
    /// Updated state in the eigenbasis the eigenvalues refer to.
    pub r: ComplexMatrix,
    pub probability: f64,
}

/// Closed-form update of `r` (given in the eigenbasis of `D` or `R`) on outcome `c`.
pub fn closed_form_update(
    kind: AuxKind,
    limit: Limit,
    r: &ComplexMatrix,
    eigenvalues: &[f64],
    c: f64,
    dt: f64,
    s: f64,
) -> Result<ClosedFormUpdate> {
    let d = r.rows();
    if eigenvalues.len() != d || !r.is_square() {
        return Err(Error::DimensionMismatch(format!("{} eigenvalues for a {}x{} state", eigenvalues.len(), d, r.cols())));
    }
    if kind == AuxKind::Qubit && (c.abs() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!("qubit outcomes are ±1, got {c}")));
    }
    let scale = (dt / s).sqrt();
    let theta: Vec<f64> = eigenvalues.iter().map(|v| scale * v).collect();
    let (probability, factor): (f64, Box<dyn Fn(usize, usize) -> Complex64>) = match (limit, kind) {
        (Limit::NoCrossNoise, AuxKind::Oscillator) => {
            let g: Vec<f64> = theta.iter().map(|t| gaussian(c - t)).collect();
            let p = (0..d).map(|a| r[(a, a)].re * g[a]).sum();
            (p, Box::new(move |a, b| Complex64::new((g[a] * g[b]).sqrt(), 0.0)))
        }
        (Limit::NoCrossNoise, AuxKind::Qubit) => {
            let p = 0.5 * (1.0 + c * (0..d).map(|a| r[(a, a)].re * theta[a].sin()).sum::<f64>());
            let th = theta.clone();
            (
                p,
                Box::new(move |a, b| {
                    Complex64::new(0.5 * (((th[a] - th[b]) / 2.0).cos() + c * ((th[a] + th[b]) / 2.0).sin()), 0.0)
                }),
            )
        }
        (Limit::NoSusceptibility, kind) => {
            let p = match kind {
                AuxKind::Oscillator => gaussian(c),
                AuxKind::Qubit => 0.5,
            };
            let th = theta.clone();
            (p, Box::new(move |a, b| Complex64::from_polar(p, c * (th[a] - th[b]) / 2.0)))
        }
    };
    if !(probability > 0.0) {
        return Err(Error::NormalizationLoss(probability));
    }
    let updated = ComplexMatrix::from_fn(d, d, |a, b| r[(a, b)] * factor(a, b) / probability);
    Ok(ClosedFormUpdate { r: updated, probability })
}

/// Which closed form applies to detector `i`, with the eigenbasis (columns) and
/// eigenvalues of the relevant operator.
pub fn detector_limit(separated: &SeparatedSetup, i: usize) -> Result<(Limit, ComplexMatrix, Vec<f64>)> {
    let noise = &separated.base.noise;
    let m = noise.n_operators();
    let no_cross = (0..m).all(|a| noise.s_cross_at(a, i) == 0.0);
    let no_susc = (0..m).all(|a| noise.a_cross_at(i, a) == 0.0);
    let (limit, op) = if no_cross {
        (Limit::NoCrossNoise, &separated.d_ops[i])
    } else if no_susc {
        (Limit::NoSusceptibility, &separated.r_ops[i])
    } else {
        return Err(Error::LimitNotApplicable(format!(
            "detector {i} has both cross-noise and susceptibility"
        )));
    };
    let eig = hermitian_eigendecomposition(op)?;
    Ok((limit, eig.vectors, eig.values))
}
