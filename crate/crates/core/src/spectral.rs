//! Fourier kernels: derivatives, zero-mean antiderivative, dealiasing and
//! Sobolev norms on a periodic [`Grid`].
//!
//! Odd derivatives annihilate the Nyquist mode (its derivative is not a real
//! trigonometric polynomial); even derivatives keep it. Norms use the same
//! multipliers, so `sobolev_norm` and `deriv` commute exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};

/// Default relative tolerance for the mean of an integrand passed to
/// [`antideriv_zero_mean`].
pub const DEFAULT_MEAN_TOL: f64 = 1e-8;

/// Fourier coefficients of a field, kept around so several derivatives can
/// share one forward transform.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn of(f: &GridField) -> Self {
        let mut coeffs: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        f.grid().forward(&mut coeffs);
        Spectrum { grid: f.grid().clone(), coeffs }
    }

    pub fn from_coeffs(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.n_points());
        Spectrum { grid: grid.clone(), coeffs }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Back to physical space (real part; imaginary parts are roundoff).
    pub fn to_field(&self) -> GridField {
        let mut buf = self.coeffs.clone();
        self.grid.inverse(&mut buf);
        let scale = 1.0 / self.grid.n_points() as f64;
        GridField::from_raw(&self.grid, buf.iter().map(|c| c.re * scale).collect())
    }

    /// Applies `mult(j, k)` to every mode and transforms back.
    pub fn map_to_field(&self, mult: impl Fn(usize, f64) -> Complex64) -> GridField {
        let k = self.grid.wavenumbers();
        let buf: Vec<Complex64> = self.coeffs.iter().enumerate().map(|(j, c)| c * mult(j, k[j])).collect();
        Spectrum { grid: self.grid.clone(), coeffs: buf }.to_field()
    }

    pub fn derivative(&self, order: usize) -> GridField {
        if order == 0 {
            return self.to_field();
        }
        let nyq = self.grid.nyquist_index();
        self.map_to_field(|j, k| derivative_symbol(order, j, k, nyq))
    }

    /// `Σ_j |m(k_j) f̂_j|²` scaled so that `m ≡ 1` gives `∫ f² dx`.
    fn weighted_energy(&self, weight: impl Fn(usize, f64) -> f64) -> f64 {
        let n = self.grid.n_points() as f64;
        let k = self.grid.wavenumbers();
        let sum: f64 = self.coeffs.iter().enumerate().map(|(j, c)| c.norm_sqr() * weight(j, k[j])).sum();
        sum * self.grid.spacing() / n
    }

    /// `‖∂^order f‖²` via Parseval.
    pub fn derivative_energy(&self, order: usize) -> f64 {
        let nyq = self.grid.nyquist_index();
        self.weighted_energy(|j, k| derivative_symbol(order, j, k, nyq).norm_sqr())
    }
}

/// `(ik)^order`, zero at the Nyquist slot for odd orders.
pub(crate) fn derivative_symbol(order: usize, j: usize, k: f64, nyquist: usize) -> Complex64 {
    if order % 2 == 1 && j == nyquist {
        return Complex64::new(0.0, 0.0);
    }
    let mag = k.powi(order as i32);
    match order % 4 {
        0 => Complex64::new(mag, 0.0),
        1 => Complex64::new(0.0, mag),
        2 => Complex64::new(-mag, 0.0),
        _ => Complex64::new(0.0, -mag),
    }
}

/// Spectral derivative of any order. Infallible fast path for internal use.
pub fn dx(f: &GridField, order: usize) -> GridField {
    if order == 0 {
        return f.clone();
    }
    Spectrum::of(f).derivative(order)
}

/// Spectral derivative of order 1..=4.
pub fn deriv(f: &GridField, order: usize) -> Result<GridField> {
    if !(1..=4).contains(&order) {
        return Err(LabError::Precondition(format!("derivative order must be in 1..=4, got {order}")));
    }
    dx(f, order).checked("deriv")
}

/// Unique zero-mean periodic antiderivative.
///
/// `mean_tol` is relative to `‖f‖∞`; an integrand whose mean exceeds it has
/// no periodic antiderivative and is rejected. The Nyquist mode of `f` is
/// dropped (it is not the derivative of any real trigonometric polynomial).
pub fn antideriv_zero_mean(f: &GridField, mean_tol: f64) -> Result<GridField> {
    let mean = f.mean();
    let tol = mean_tol * f.max_abs();
    if mean.abs() > tol {
        return Err(LabError::Integrability { mean: mean.abs(), tol });
    }
    if mean != 0.0 {
        log::debug!("antiderivative integrand mean {:.3e} (tolerance {:.3e})", mean, tol);
    }
    Ok(antideriv_unchecked(f))
}

/// Zero-mean antiderivative of `f - mean(f)`, no tolerance check.
pub fn antideriv_unchecked(f: &GridField) -> GridField {
    let nyq = f.grid().nyquist_index();
    Spectrum::of(f).map_to_field(|j, k| {
        if j == 0 || j == nyq {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -1.0 / k)
        }
    })
}

/// `( Σ_{j≤s} ‖∂^j f‖² )^{1/2}`.
pub fn sobolev_norm(f: &GridField, s: usize) -> f64 {
    let spec = Spectrum::of(f);
    (0..=s).map(|j| spec.derivative_energy(j)).sum::<f64>().sqrt()
}

/// `‖∂^order f‖` (single seminorm).
pub fn derivative_norm(f: &GridField, order: usize) -> f64 {
    Spectrum::of(f).derivative_energy(order).sqrt()
}

/// L² norm, equal to the trapezoid rule by Parseval.
pub fn l2_norm(f: &GridField) -> f64 {
    (f.values().iter().map(|v| v * v).sum::<f64>() * f.grid().spacing()).sqrt()
}

/// 2/3-rule truncation: keeps modes with `|m| <= n/3`.
pub fn dealias(f: &GridField) -> GridField {
    let grid = f.grid();
    let cutoff = grid.dealias_cutoff() as i64;
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    Spectrum::of(f).map_to_field(|j, _| if grid.mode_index(j).abs() <= cutoff { one } else { zero })
}

/// Zeroes Fourier modes whose modulus is below `rel` times the largest one.
///
/// Keeps rounding noise in well-resolved fields from being amplified by
/// repeated high-order differentiation. `rel <= 0` returns the field unchanged.
pub fn noise_filter(f: &GridField, rel: f64) -> GridField {
    if rel <= 0.0 {
        return f.clone();
    }
    let mut spec = Spectrum::of(f);
    let top = spec.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let floor = rel * top;
    for c in spec.coeffs_mut() {
        if c.norm() < floor {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    spec.to_field()
}

/// Largest modulus of the Fourier coefficients above the dealiasing cutoff,
/// relative to the largest overall; a resolution diagnostic.
pub fn tail_fraction(f: &GridField) -> f64 {
    let spec = Spectrum::of(f);
    let grid = f.grid();
    let cutoff = grid.dealias_cutoff() as i64;
    let mut top: f64 = 0.0;
    let mut tail: f64 = 0.0;
    for (j, c) in spec.coeffs().iter().enumerate() {
        let a = c.norm();
        top = top.max(a);
        if grid.mode_index(j).abs() > cutoff {
            tail = tail.max(a);
        }
    }
    if top == 0.0 {
        0.0
    } else {
        tail / top
    }
}
