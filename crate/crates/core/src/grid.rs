//! Periodic grid and real-valued grid functions.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{LabError, Result};

/// Uniform periodic grid on `[-L/2, L/2)` with cached FFT plans.
///
/// Plans are `Send + Sync`; rustfft allocates scratch per call, so sharing a
/// grid between workers is safe.
pub struct Grid {
    n_points: usize,
    length: f64,
    spacing: f64,
    wavenumbers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n_points", &self.n_points)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_points == other.n_points && self.length == other.length
    }
}

impl Grid {
    pub fn new(n_points: usize, length: f64) -> Result<Arc<Grid>> {
        if n_points < 8 || !n_points.is_multiple_of(2) {
            return Err(LabError::Parameter(format!(
                "grid needs an even number of points >= 8, got {n_points}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(LabError::Parameter(format!("grid length must be positive, got {length}")));
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n_points);
        let ifft = planner.plan_fft_inverse(n_points);
        let base = 2.0 * PI / length;
        let wavenumbers = (0..n_points)
            .map(|j| {
                let m = if j <= n_points / 2 { j as i64 } else { j as i64 - n_points as i64 };
                base * m as f64
            })
            .collect();
        Ok(Arc::new(Grid {
            n_points,
            length,
            spacing: length / n_points as f64,
            wavenumbers,
            fft,
            ifft,
        }))
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Angular wavenumbers in FFT order; index `n/2` is the Nyquist mode.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn nyquist_index(&self) -> usize {
        self.n_points / 2
    }

    /// Largest retained mode index under the 2/3 rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n_points / 3
    }

    /// Signed mode index of FFT slot `j`.
    pub fn mode_index(&self, j: usize) -> i64 {
        if j <= self.n_points / 2 {
            j as i64
        } else {
            j as i64 - self.n_points as i64
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.spacing
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.fft.process(buf);
    }

    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.ifft.process(buf);
    }
}

/// Samples of a real periodic function on a [`Grid`].
#[derive(Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl fmt::Debug for GridField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridField")
            .field("n_points", &self.grid.n_points)
            .field("max_abs", &self.max_abs())
            .finish()
    }
}

impl GridField {
    /// Wraps samples, rejecting NaN/Inf and length mismatches.
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(LabError::Shape(format!(
                "expected {} samples, got {}",
                grid.n_points,
                values.len()
            )));
        }
        GridField { grid: grid.clone(), values }.checked("GridField::new")
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points);
        GridField { grid: grid.clone(), values }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        GridField { grid: grid.clone(), values: vec![c; grid.n_points] }
    }

    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.n_points).map(|j| f(grid.x(j))).collect();
        GridField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &GridField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Returns `self` unchanged if finite, otherwise a numeric error naming `context`.
    pub fn checked(self, context: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(LabError::Numeric(context.to_string()))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Periodic trapezoid rule `∫ f dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridField { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_grid(other));
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        GridField { grid: self.grid.clone(), values }
    }

    pub fn add(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Pointwise product without dealiasing.
    pub fn mul_pointwise(&self, other: &GridField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &GridField) {
        debug_assert!(self.same_grid(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn add_assign(&mut self, other: &GridField) {
        self.axpy(1.0, other);
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_odd_grids() {
        assert!(Grid::new(4, 1.0).is_err());
        assert!(Grid::new(9, 1.0).is_err());
        assert!(Grid::new(16, 0.0).is_err());
        assert!(Grid::new(16, 2.0).is_ok());
    }

    #[test]
    fn wavenumbers_are_symmetric() {
        let g = Grid::new(8, 2.0 * PI).unwrap();
        assert_eq!(g.wavenumbers(), &[0.0, 1.0, 2.0, 3.0, 4.0, -3.0, -2.0, -1.0]);
    }

    #[test]
    fn non_finite_samples_are_rejected() {
        let g = Grid::new(8, 1.0).unwrap();
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(GridField::new(&g, v).is_err());
        assert!(GridField::new(&g, vec![0.0; 7]).is_err());
    }
}
