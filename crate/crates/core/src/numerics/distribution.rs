use serde::{Deserialize, Serialize};

use super::quadrature::{UniformAxis, UniformGrid};
use crate::error::{Error, Result};

/// Symmetric uniform grid request: `points` nodes per axis on `[-half_width, half_width]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub half_width: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, points: usize) -> Self {
        Self { half_width, points }
    }

    pub fn grid(&self, dims: usize) -> Result<UniformGrid> {
        UniformGrid::symmetric(self.half_width, self.points, dims)
    }

    pub fn axis(&self) -> Result<UniformAxis> {
        UniformAxis::symmetric(self.half_width, self.points)
    }
}

/// A probability density tabulated on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub grid: UniformGrid,
    pub density: Vec<f64>,
}

impl Distribution {
    pub fn new(grid: UniformGrid, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} density values for a grid of {} nodes",
                density.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, density })
    }

    pub fn from_fn(grid: UniformGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let density = (0..grid.len()).map(|k| f(&grid.point(k))).collect();
        Self { grid, density }
    }

    pub fn dims(&self) -> usize {
        self.grid.dims()
    }

    pub fn total_mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    pub fn peak(&self) -> f64 {
        self.density.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoid mass of the nodes where `keep(s)` holds.
    pub fn mass_where(&self, mut keep: impl FnMut(&[f64]) -> bool) -> f64 {
        (0..self.grid.len())
            .filter(|&k| keep(&self.grid.point(k)))
            .map(|k| self.density[k] * self.grid.weight(k))
            .sum()
    }

    /// First moment of the nodes where `keep(s)` holds, normalized by their mass.
    pub fn centroid_where(&self, mut keep: impl FnMut(&[f64]) -> bool) -> Vec<f64> {
        let mut acc = vec![0.0; self.dims()];
        let mut mass = 0.0;
        for k in 0..self.grid.len() {
            let s = self.grid.point(k);
            if keep(&s) {
                let w = self.density[k] * self.grid.weight(k);
                mass += w;
                for (a, x) in acc.iter_mut().zip(&s) {
                    *a += w * x;
                }
            }
        }
        acc.into_iter().map(|a| a / mass).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.centroid_where(|_| true)
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let mean = self.mean();
        let n = self.dims();
        let mass = self.total_mass();
        let mut cov = vec![vec![0.0; n]; n];
        for k in 0..self.grid.len() {
            let s = self.grid.point(k);
            let w = self.density[k] * self.grid.weight(k) / mass;
            for i in 0..n {
                for j in 0..n {
                    cov[i][j] += w * (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        cov
    }

    /// `∫|P − Q| ds` on a shared grid.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if !same_grid(&self.grid, &other.grid) {
            return Err(Error::IncompatibleGrids(
                "L1 distance needs identical grids; interpolate first".into(),
            ));
        }
        let diff: Vec<f64> = self.density.iter().zip(&other.density).map(|(a, b)| (a - b).abs()).collect();
        Ok(self.grid.integrate(&diff))
    }
}

pub fn same_grid(a: &UniformGrid, b: &UniformGrid) -> bool {
    a.dims() == b.dims()
        && a.axes.iter().zip(&b.axes).all(|(x, y)| {
            let tol = 1e-12 * (x.start.abs() + x.step.abs() * x.points as f64).max(1.0);
            x.points == y.points && (x.start - y.start).abs() <= tol && (x.step - y.step).abs() <= tol
        })
}

/// Standard normal density `(2π)^{-1/2} e^{-x²/2}`.
pub fn gaussian(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal(spec: GridSpec, mu: f64) -> Distribution {
        Distribution::from_fn(spec.grid(1).unwrap(), |s| gaussian(s[0] - mu))
    }

    #[test]
    fn gaussian_moments() {
        let p = normal(GridSpec::new(10.0, 401), 0.5);
        assert!((p.total_mass() - 1.0).abs() < 1e-10);
        assert!((p.mean()[0] - 0.5).abs() < 1e-10);
        assert!((p.covariance()[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn l1_of_itself_is_zero() {
        let p = normal(GridSpec::new(8.0, 101), 0.0);
        assert_eq!(p.l1_distance(&p).unwrap(), 0.0);
    }

    #[test]
    fn l1_rejects_mismatched_grids() {
        let p = normal(GridSpec::new(8.0, 101), 0.0);
        let q = normal(GridSpec::new(8.0, 103), 0.0);
        assert!(matches!(p.l1_distance(&q), Err(Error::IncompatibleGrids(_))));
    }

    #[test]
    fn lobe_mass_and_centroid() {
        let p = Distribution::from_fn(GridSpec::new(20.0, 801).grid(1).unwrap(), |s| {
            0.7 * gaussian(s[0] - 10.0) + 0.3 * gaussian(s[0] + 10.0)
        });
        assert!((p.mass_where(|s| s[0] > 0.0) - 0.7).abs() < 1e-9);
        assert!((p.centroid_where(|s| s[0] < 0.0)[0] + 10.0).abs() < 1e-9);
    }
}
