//! Truncated time-Taylor series ("jets") of grid fields.
//!
//! A jet `Σ_p c_p s^p` represents a field near a fixed time `t₀` with
//! `s = t - t₀`. `valid` counts the leading coefficients that are known;
//! arithmetic propagates it (products keep the minimum, `∂_t` loses one).
//! Exact jets (constants, structural zeros) are valid to every order.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};
use crate::series::{Coefficient, DtSupplier, ProfileCoefficients};

/// Marker for "valid to every order".
pub const EXACT: usize = usize::MAX;

/// Cap on stored coefficients of exact jets built from products.
const MAX_STORED: usize = 12;

#[derive(Clone, Debug)]
pub struct Jet {
    grid: Arc<Grid>,
    coeffs: Vec<GridField>,
    valid: usize,
}

impl Jet {
    /// Jet with `coeffs.len()` known coefficients.
    pub fn new(grid: &Arc<Grid>, coeffs: Vec<GridField>) -> Self {
        let valid = coeffs.len();
        Jet { grid: grid.clone(), coeffs, valid }
    }

    /// Jet with an explicit valid order (`EXACT` for exact polynomials).
    pub fn with_valid(grid: &Arc<Grid>, coeffs: Vec<GridField>, valid: usize) -> Self {
        Jet { grid: grid.clone(), coeffs, valid }.trimmed()
    }

    /// A value known at `t₀` only (valid order 1).
    pub fn value_only(f: GridField) -> Self {
        Jet { grid: f.grid().clone(), coeffs: vec![f], valid: 1 }
    }

    /// A time-independent field.
    pub fn constant_in_time(f: GridField) -> Self {
        Jet { grid: f.grid().clone(), coeffs: vec![f], valid: EXACT }
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        Jet { grid: grid.clone(), coeffs: Vec::new(), valid: EXACT }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn valid(&self) -> usize {
        self.valid
    }

    pub fn is_exact(&self) -> bool {
        self.valid == EXACT
    }

    pub fn stored(&self) -> usize {
        self.coeffs.len()
    }

    /// Taylor coefficient `p` (zero past the stored range of an exact jet).
    pub fn coeff(&self, p: usize) -> Result<GridField> {
        if p >= self.valid {
            return Err(LabError::Hierarchy(format!(
                "time-Taylor coefficient {p} requested but only {} are known",
                self.valid
            )));
        }
        Ok(self.coeffs.get(p).cloned().unwrap_or_else(|| GridField::zeros(&self.grid)))
    }

    pub fn coeffs(&self) -> &[GridField] {
        &self.coeffs
    }

    /// Value at `t₀`.
    pub fn value(&self) -> Result<GridField> {
        self.coeff(0)
    }

    /// `∂_t` as a jet.
    pub fn dt(&self) -> Jet {
        let coeffs: Vec<GridField> =
            self.coeffs.iter().enumerate().skip(1).map(|(p, c)| c.scale(p as f64)).collect();
        let valid = if self.valid == EXACT { EXACT } else { self.valid.saturating_sub(1) };
        Jet { grid: self.grid.clone(), coeffs, valid }.trimmed()
    }

    /// `∂_t^m` evaluated at `t₀`.
    pub fn time_derivative(&self, m: usize) -> Result<GridField> {
        let c = self.coeff(m)?;
        let fact: f64 = (1..=m).map(|i| i as f64).product();
        Ok(c.scale(fact))
    }

    /// Evaluates the polynomial at offset `s` from `t₀`.
    pub fn eval(&self, s: f64) -> GridField {
        let mut acc = GridField::zeros(&self.grid);
        for c in self.coeffs.iter().rev() {
            acc.scale_in_place(s);
            acc.add_assign(c);
        }
        acc
    }

    fn trimmed(mut self) -> Jet {
        if self.valid != EXACT && self.coeffs.len() > self.valid {
            self.coeffs.truncate(self.valid);
        }
        self
    }

    fn combined_valid(&self, other: &Jet) -> usize {
        self.valid.min(other.valid)
    }

    fn map(&self, f: impl Fn(&GridField) -> GridField) -> Jet {
        Jet { grid: self.grid.clone(), coeffs: self.coeffs.iter().map(f).collect(), valid: self.valid }
    }

    fn linear(&self, other: &Jet, ca: f64, cb: f64) -> Jet {
        let valid = self.combined_valid(other);
        let len = self.coeffs.len().max(other.coeffs.len()).min(valid);
        let coeffs = (0..len)
            .map(|p| match (self.coeffs.get(p), other.coeffs.get(p)) {
                (Some(a), Some(b)) => a.zip_map(b, |x, y| ca * x + cb * y),
                (Some(a), None) => a.scale(ca),
                (None, Some(b)) => b.scale(cb),
                (None, None) => GridField::zeros(&self.grid),
            })
            .collect();
        Jet { grid: self.grid.clone(), coeffs, valid }
    }
}

impl Coefficient for Jet {
    fn zero_like(&self) -> Self {
        Jet::zero(&self.grid)
    }

    fn constant_like(&self, c: f64) -> Self {
        Jet::constant_in_time(GridField::constant(&self.grid, c))
    }

    fn add(&self, other: &Self) -> Self {
        self.linear(other, 1.0, 1.0)
    }

    fn sub(&self, other: &Self) -> Self {
        self.linear(other, 1.0, -1.0)
    }

    fn scale(&self, c: f64) -> Self {
        self.map(|f| f.scale(c))
    }

    fn axpy(&mut self, c: f64, other: &Self) {
        *self = self.linear(other, 1.0, c);
    }

    fn mul_raw(&self, other: &Self) -> Self {
        let mut valid = self.combined_valid(other);
        let natural = if self.coeffs.is_empty() || other.coeffs.is_empty() {
            0
        } else {
            self.coeffs.len() + other.coeffs.len() - 1
        };
        let mut len = natural.min(valid);
        if valid == EXACT && len > MAX_STORED {
            len = MAX_STORED;
            valid = MAX_STORED;
        }
        let coeffs = (0..len)
            .map(|p| {
                let mut acc: Option<GridField> = None;
                for i in 0..=p {
                    let (Some(a), Some(b)) = (self.coeffs.get(i), other.coeffs.get(p - i)) else {
                        continue;
                    };
                    match acc.as_mut() {
                        Some(s) => {
                            for ((s, x), y) in s.values_mut().iter_mut().zip(a.values()).zip(b.values()) {
                                *s += x * y;
                            }
                        }
                        None => acc = Some(a.mul_pointwise(b)),
                    }
                }
                acc.unwrap_or_else(|| GridField::zeros(&self.grid))
            })
            .collect();
        Jet { grid: self.grid.clone(), coeffs, valid }
    }

    fn dealias(&self) -> Self {
        self.map(crate::spectral::dealias)
    }

    fn dx(&self, order: usize) -> Self {
        self.map(|f| crate::spectral::dx(f, order))
    }

    fn dx_dealiased(&self, order: usize) -> Self {
        self.map(|f| f.dx_dealiased(order))
    }

    fn is_zero(&self) -> bool {
        self.valid == EXACT && self.coeffs.iter().all(|c| c.is_zero())
    }

    fn compatible(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Time derivatives read off the profile jets themselves.
pub struct JetTimeDerivatives<'a>(pub &'a ProfileCoefficients<Jet>);

impl DtSupplier<Jet> for JetTimeDerivatives<'_> {
    fn dt_n(&self, k: usize) -> Option<Jet> {
        self.0.n.get(k - 1).map(Jet::dt)
    }
    fn dt_u(&self, k: usize) -> Option<Jet> {
        self.0.u.get(k - 1).map(Jet::dt)
    }
}
