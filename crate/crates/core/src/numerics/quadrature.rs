//! Trapezoidal inverse Fourier quadrature on uniform grids.
//!
//! `P(s) = ∫ dχ/(2π)^N e^{i s·χ} f(χ)` with the trapezoid rule per axis.
//! Values on an N-dimensional grid are stored row-major, last axis fastest.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge magnitude above this fraction of the peak is rejected.
pub const EDGE_TOLERANCE: f64 = 1e-6;

/// Uniform one-dimensional axis `start + k·step`, `k = 0..points`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub start: f64,
    pub step: f64,
    pub points: usize,
}

impl UniformAxis {
    /// Symmetric axis on `[-half_width, half_width]` with `points` nodes.
    pub fn symmetric(half_width: f64, points: usize) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidInput(format!("axis half-width must be positive, got {half_width}")));
        }
        if points < 2 {
            return Err(Error::InvalidInput(format!("axis needs at least 2 points, got {points}")));
        }
        Ok(Self {
            start: -half_width,
            step: 2.0 * half_width / (points - 1) as f64,
            points,
        })
    }

    pub fn node(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.points - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.node(k)).collect()
    }

    /// Trapezoid weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.points {
            0.5 * self.step
        } else {
            self.step
        }
    }
}

/// Tensor-product grid of uniform axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub axes: Vec<UniformAxis>,
}

impl UniformGrid {
    pub fn new(axes: Vec<UniformAxis>) -> Self {
        Self { axes }
    }

    pub fn symmetric(half_width: f64, points: usize, dims: usize) -> Result<Self> {
        let axis = UniformAxis::symmetric(half_width, points)?;
        Ok(Self { axes: vec![axis; dims] })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multi-index of flat node `flat`.
    pub fn index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            idx[d] = flat % axis.points;
            flat /= axis.points;
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.points + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&k, axis)| axis.node(k))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Product trapezoid weight of flat node `flat`.
    pub fn weight(&self, flat: usize) -> f64 {
        self.index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&k, axis)| axis.weight(k))
            .product()
    }

    /// Volume of one cell, `Π step`.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        self.index(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&k, axis)| k == 0 || k + 1 == axis.points)
    }

    /// Trapezoid integral of real samples.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().enumerate().map(|(k, v)| v * self.weight(k)).sum()
    }
}

/// Result of an inverse transform at one output point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierValue {
    pub value: Complex64,
}

impl FourierValue {
    /// Real part, the distribution value.
    pub fn density(&self) -> f64 {
        self.value.re
    }

    /// Imaginary residue, nonzero only through quadrature or model error.
    pub fn residue(&self) -> f64 {
        self.value.im
    }
}

/// Checks that `|f|` on the grid boundary is below `EDGE_TOLERANCE·peak`.
pub fn check_edge_decay(grid: &UniformGrid, values: &[Complex64]) -> Result<()> {
    let peak = values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let edge = (0..values.len())
        .filter(|&k| grid.is_boundary(k))
        .map(|k| values[k].norm())
        .fold(0.0, f64::max);
    if edge > EDGE_TOLERANCE * peak {
        return Err(Error::GridTooNarrow { edge, peak });
    }
    Ok(())
}

/// Trapezoid approximation of `∫ dχ/(2π)^N e^{i s·χ} f(χ)` at a single `s`.
pub fn fourier_quadrature(grid: &UniformGrid, values: &[Complex64], s: &[f64]) -> Result<FourierValue> {
    validate(grid, values)?;
    if s.len() != grid.dims() {
        return Err(Error::DimensionMismatch(format!(
            "s has {} components, grid has {} axes",
            s.len(),
            grid.dims()
        )));
    }
    check_edge_decay(grid, values)?;
    let norm = (2.0 * PI).powi(grid.dims() as i32);
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, f) in values.iter().enumerate() {
        let chi = grid.point(k);
        let phase: f64 = chi.iter().zip(s).map(|(c, x)| c * x).sum();
        acc += f * Complex64::from_polar(grid.weight(k), phase);
    }
    Ok(FourierValue { value: acc / norm })
}

/// Inverse transform evaluated at every node of `s_grid`, separably per axis.
pub fn inverse_transform(
    chi_grid: &UniformGrid,
    values: &[Complex64],
    s_grid: &UniformGrid,
) -> Result<Vec<FourierValue>> {
    validate(chi_grid, values)?;
    if s_grid.dims() != chi_grid.dims() {
        return Err(Error::DimensionMismatch(format!(
            "s-grid has {} axes, χ-grid has {}",
            s_grid.dims(),
            chi_grid.dims()
        )));
    }
    check_edge_decay(chi_grid, values)?;

    // Transform axis by axis: the array shape goes from χ-shape to s-shape one axis at a time.
    let mut shape: Vec<usize> = chi_grid.axes.iter().map(|a| a.points).collect();
    let mut data = values.to_vec();
    for d in 0..chi_grid.dims() {
        let chi_axis = &chi_grid.axes[d];
        let s_axis = &s_grid.axes[d];
        let outer: usize = shape[..d].iter().product();
        let inner: usize = shape[d + 1..].iter().product();
        let kernel: Vec<Complex64> = (0..s_axis.points)
            .flat_map(|j| {
                let s = s_axis.node(j);
                (0..chi_axis.points)
                    .map(move |k| Complex64::from_polar(chi_axis.weight(k) / (2.0 * PI), s * chi_axis.node(k)))
            })
            .collect();
        let mut next = vec![Complex64::new(0.0, 0.0); outer * s_axis.points * inner];
        for o in 0..outer {
            for j in 0..s_axis.points {
                let krow = &kernel[j * chi_axis.points..(j + 1) * chi_axis.points];
                for i in 0..inner {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, w) in krow.iter().enumerate() {
                        acc += w * data[(o * chi_axis.points + k) * inner + i];
                    }
                    next[(o * s_axis.points + j) * inner + i] = acc;
                }
            }
        }
        shape[d] = s_axis.points;
        data = next;
    }
    Ok(data.into_iter().map(|value| FourierValue { value }).collect())
}

fn validate(grid: &UniformGrid, values: &[Complex64]) -> Result<()> {
    if grid.dims() == 0 {
        return Err(Error::InvalidInput("grid has no axes".into()));
    }
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}
