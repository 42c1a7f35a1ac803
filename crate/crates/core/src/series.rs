//! Truncated power series in ε and the order-by-order residual of the scaled
//! Euler-Poisson system.
//!
//! The series arithmetic is generic over a [`Coefficient`] algebra so the
//! same engine runs on plain grid fields and on time-Taylor jets
//! ([`crate::jet::Jet`]), which is how time derivatives of the profiles enter.

use crate::error::{LabError, Result};
use crate::grid::GridField;
use crate::params::PhysParams;
use crate::spectral;

/// Commutative algebra of spatial coefficients.
pub trait Coefficient: Clone + Send + Sync {
    fn zero_like(&self) -> Self;
    fn constant_like(&self, c: f64) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn axpy(&mut self, c: f64, other: &Self);
    /// Pointwise product, no dealiasing.
    fn mul_raw(&self, other: &Self) -> Self;
    fn dealias(&self) -> Self;
    fn dx(&self, order: usize) -> Self;
    /// Dealias then differentiate, in one spectral pass where possible.
    fn dx_dealiased(&self, order: usize) -> Self {
        self.dealias().dx(order)
    }
    /// Structural zero (allows skipping work); may return false for zero data.
    fn is_zero(&self) -> bool;
    fn compatible(&self, other: &Self) -> bool;
    fn is_finite(&self) -> bool;
}

impl Coefficient for GridField {
    fn zero_like(&self) -> Self {
        GridField::zeros(self.grid())
    }

    fn constant_like(&self, c: f64) -> Self {
        GridField::constant(self.grid(), c)
    }

    fn add(&self, other: &Self) -> Self {
        GridField::add(self, other)
    }

    fn sub(&self, other: &Self) -> Self {
        GridField::sub(self, other)
    }

    fn scale(&self, c: f64) -> Self {
        GridField::scale(self, c)
    }

    fn axpy(&mut self, c: f64, other: &Self) {
        GridField::axpy(self, c, other)
    }

    fn mul_raw(&self, other: &Self) -> Self {
        self.mul_pointwise(other)
    }

    fn dealias(&self) -> Self {
        spectral::dealias(self)
    }

    fn dx(&self, order: usize) -> Self {
        spectral::dx(self, order)
    }

    fn dx_dealiased(&self, order: usize) -> Self {
        let grid = self.grid();
        let cutoff = grid.dealias_cutoff() as i64;
        let nyq = grid.nyquist_index();
        spectral::Spectrum::of(self).map_to_field(|j, k| {
            if grid.mode_index(j).abs() > cutoff {
                Default::default()
            } else {
                spectral::derivative_symbol(order, j, k, nyq)
            }
        })
    }

    fn is_zero(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0)
    }

    fn compatible(&self, other: &Self) -> bool {
        self.same_grid(other)
    }

    fn is_finite(&self) -> bool {
        GridField::is_finite(self)
    }
}

/// Truncated series `Σ_{k≤K} ε^k c_k`.
#[derive(Clone, Debug)]
pub struct Series<C> {
    coeffs: Vec<C>,
}

/// Series with grid-field coefficients.
pub type EpsSeries = Series<GridField>;

impl<C: Coefficient> Series<C> {
    pub fn new(coeffs: Vec<C>) -> Result<Self> {
        let Some(first) = coeffs.first() else {
            return Err(LabError::Shape("a series needs at least one coefficient".into()));
        };
        if coeffs.iter().any(|c| !c.compatible(first)) {
            return Err(LabError::Shape("series coefficients live on different grids".into()));
        }
        Ok(Series { coeffs })
    }

    /// Zero series of truncation order `k` shaped like `template`.
    pub fn zeros(template: &C, k: usize) -> Self {
        Series { coeffs: vec![template.zero_like(); k + 1] }
    }

    /// Series of order `k` whose coefficients are `leading`, then `rest[0]`, ...
    /// padded with zeros; entries past order `k` are dropped.
    pub fn from_leading(leading: C, rest: &[C], k: usize) -> Self {
        let mut coeffs = Vec::with_capacity(k + 1);
        let zero = leading.zero_like();
        coeffs.push(leading);
        for j in 1..=k {
            coeffs.push(rest.get(j - 1).cloned().unwrap_or_else(|| zero.clone()));
        }
        Series { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, k: usize) -> &C {
        &self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[C] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C> {
        self.coeffs
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.order() != other.order() {
            return Err(LabError::Shape(format!(
                "truncation orders differ: {} vs {}",
                self.order(),
                other.order()
            )));
        }
        if !self.coeffs[0].compatible(&other.coeffs[0]) {
            return Err(LabError::Shape("series live on different grids".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Series { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.add(b)).collect() })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Series { coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.sub(b)).collect() })
    }

    pub fn scale(&self, c: f64) -> Self {
        Series { coeffs: self.coeffs.iter().map(|a| a.scale(c)).collect() }
    }

    pub fn dx(&self, order: usize) -> Self {
        Series { coeffs: self.coeffs.iter().map(|a| a.dx(order)).collect() }
    }

    /// Multiplication by ε (truncating the top coefficient).
    pub fn shift(&self) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        coeffs.push(self.coeffs[0].zero_like());
        coeffs.extend(self.coeffs[..self.order()].iter().cloned());
        Series { coeffs }
    }

    /// Horner evaluation at a numeric ε.
    pub fn eval(&self, eps: f64) -> C {
        let mut acc = self.coeffs[self.order()].clone();
        for c in self.coeffs[..self.order()].iter().rev() {
            acc = acc.scale(eps).add(c);
        }
        acc
    }
}

fn convolve_raw<C: Coefficient>(a: &[C], b: &[C], k: usize) -> Option<C> {
    let mut acc: Option<C> = None;
    for i in 0..=k {
        let (x, y) = (&a[i], &b[k - i]);
        if x.is_zero() || y.is_zero() {
            continue;
        }
        let p = x.mul_raw(y);
        match acc.as_mut() {
            Some(s) => s.axpy(1.0, &p),
            None => acc = Some(p),
        }
    }
    acc
}

/// Undealiased Cauchy-product coefficients.
pub(crate) fn series_mul_raw<C: Coefficient>(a: &Series<C>, b: &Series<C>) -> Result<Vec<Option<C>>> {
    a.check_shape(b)?;
    Ok((0..=a.order()).map(|k| convolve_raw(&a.coeffs, &b.coeffs, k)).collect())
}

/// Truncated Cauchy product; each coefficient is dealiased once.
pub fn series_mul<C: Coefficient>(a: &Series<C>, b: &Series<C>) -> Result<Series<C>> {
    let zero = a.coeffs[0].zero_like();
    let coeffs = series_mul_raw(a, b)?
        .into_iter()
        .map(|c| c.map(|c| c.dealias()).unwrap_or_else(|| zero.clone()))
        .collect();
    Ok(Series { coeffs })
}

fn require_zero_leading<C: Coefficient>(a: &Series<C>, what: &str) -> Result<()> {
    if a.coeffs[0].is_zero() {
        Ok(())
    } else {
        Err(LabError::Precondition(format!("{what}: the ε⁰ coefficient must vanish identically")))
    }
}

/// `exp(a)` for a series with zero constant term:
/// `E_0 = 1`, `E_k = (1/k) Σ_{j=1..k} j a_j E_{k-j}`.
pub fn series_exp<C: Coefficient>(a: &Series<C>) -> Result<Series<C>> {
    require_zero_leading(a, "series_exp")?;
    let kmax = a.order();
    let mut e: Vec<C> = Vec::with_capacity(kmax + 1);
    e.push(a.coeffs[0].constant_like(1.0));
    for k in 1..=kmax {
        let mut acc: Option<C> = None;
        for j in 1..=k {
            if a.coeffs[j].is_zero() || e[k - j].is_zero() {
                continue;
            }
            let p = a.coeffs[j].mul_raw(&e[k - j]);
            match acc.as_mut() {
                Some(s) => s.axpy(j as f64 / k as f64, &p),
                None => acc = Some(p.scale(j as f64 / k as f64)),
            }
        }
        e.push(acc.map(|c| c.dealias()).unwrap_or_else(|| a.coeffs[0].zero_like()));
    }
    Ok(Series { coeffs: e })
}

/// `1/(1 + a)` for a series with zero constant term:
/// `R_0 = 1`, `R_k = -Σ_{j=1..k} a_j R_{k-j}`.
pub fn series_recip_one_plus<C: Coefficient>(a: &Series<C>) -> Result<Series<C>> {
    require_zero_leading(a, "series_recip_one_plus")?;
    let kmax = a.order();
    let mut r: Vec<C> = Vec::with_capacity(kmax + 1);
    r.push(a.coeffs[0].constant_like(1.0));
    for k in 1..=kmax {
        let mut acc: Option<C> = None;
        for j in 1..=k {
            if a.coeffs[j].is_zero() || r[k - j].is_zero() {
                continue;
            }
            let p = a.coeffs[j].mul_raw(&r[k - j]);
            match acc.as_mut() {
                Some(s) => s.axpy(-1.0, &p),
                None => acc = Some(p.scale(-1.0)),
            }
        }
        r.push(acc.map(|c| c.dealias()).unwrap_or_else(|| a.coeffs[0].zero_like()));
    }
    Ok(Series { coeffs: r })
}

/// Profile triples `(n^(k), u^(k), φ^(k))`; index 0 holds k = 1.
#[derive(Clone, Debug)]
pub struct ProfileCoefficients<C> {
    pub n: Vec<C>,
    pub u: Vec<C>,
    pub phi: Vec<C>,
}

impl<C: Coefficient> ProfileCoefficients<C> {
    pub fn new(n: Vec<C>, u: Vec<C>, phi: Vec<C>) -> Result<Self> {
        if n.is_empty() || n.len() != u.len() || n.len() != phi.len() {
            return Err(LabError::Shape("profile lists must be non-empty and of equal length".into()));
        }
        Ok(ProfileCoefficients { n, u, phi })
    }

    pub fn count(&self) -> usize {
        self.n.len()
    }

    pub fn push(&mut self, n: C, u: C, phi: C) {
        self.n.push(n);
        self.u.push(u);
        self.phi.push(phi);
    }

    fn template(&self) -> &C {
        &self.n[0]
    }
}

/// Supplies `∂_t n^(k)`, `∂_t u^(k)` (k ≥ 1) to the residual engine.
pub trait DtSupplier<C> {
    fn dt_n(&self, k: usize) -> Option<C>;
    fn dt_u(&self, k: usize) -> Option<C>;
}

/// Supplier that knows no time derivatives; only valid when every profile
/// whose derivative is needed is identically zero.
pub struct NoTimeDerivatives;

impl<C> DtSupplier<C> for NoTimeDerivatives {
    fn dt_n(&self, _k: usize) -> Option<C> {
        None
    }
    fn dt_u(&self, _k: usize) -> Option<C> {
        None
    }
}

/// Explicit lists of time derivatives (index 0 ↔ k = 1).
pub struct FieldTimeDerivatives {
    pub n: Vec<GridField>,
    pub u: Vec<GridField>,
}

impl DtSupplier<GridField> for FieldTimeDerivatives {
    fn dt_n(&self, k: usize) -> Option<GridField> {
        self.n.get(k - 1).cloned()
    }
    fn dt_u(&self, k: usize) -> Option<GridField> {
        self.u.get(k - 1).cloned()
    }
}

/// Residual series of the mass, momentum and Poisson equations.
#[derive(Clone, Debug)]
pub struct ResidualSeries<C> {
    pub mass: Series<C>,
    pub momentum: Series<C>,
    pub poisson: Series<C>,
}

impl<C: Coefficient> ResidualSeries<C> {
    /// `V·mass + momentum + (T_e/(4πe n̄ M)) ∂_x poisson` at order `k`: the
    /// combination in which the next profile cancels.
    pub fn solvability_combination(&self, k: usize, params: &PhysParams) -> C {
        let w = params.t_e / (params.poisson_coupling() * params.mass_m);
        let mut c = self.mass.coeff(k).scale(params.v());
        c.axpy(1.0, self.momentum.coeff(k));
        c.axpy(w, &self.poisson.coeff(k).dx(1));
        c
    }
}

fn required_dt<C: Coefficient>(
    profile: Option<&C>,
    supplied: Option<C>,
    what: &str,
    k: usize,
) -> Result<Option<C>> {
    match profile {
        None => Ok(None),
        Some(p) => match supplied {
            Some(d) => Ok(Some(d)),
            None if p.is_zero() => Ok(None),
            None => Err(LabError::Hierarchy(format!("no time derivative supplied for {what}^({k})"))),
        },
    }
}

/// Residuals of
///
/// ```text
/// ε∂_t ν − V∂ν + ∂(νu) = 0
/// ε∂_t u − V∂u + u∂u + (T_i/M)∂ν/ν + (e/M)∂φ = 0
/// ε∂²φ − 4πe n̄ (e^{κφ} − ν) = 0
/// ```
///
/// with `ν = 1 + Σ ε^k n^(k)`, `u = Σ ε^k u^(k)`, `φ = Σ ε^k φ^(k)`, through
/// order `k_trunc`. Profiles past `k_trunc` are ignored; missing ones are zero.
pub fn ep_residual_series<C: Coefficient>(
    profiles: &ProfileCoefficients<C>,
    dt: &dyn DtSupplier<C>,
    params: &PhysParams,
    k_trunc: usize,
) -> Result<ResidualSeries<C>> {
    let template = profiles.template();
    let zero = template.zero_like();
    let count = profiles.count().min(k_trunc);
    for list in [&profiles.u, &profiles.phi] {
        if list.iter().chain(&profiles.n).any(|c| !c.compatible(template)) {
            return Err(LabError::Shape("profiles live on different grids".into()));
        }
    }
    let kk = k_trunc;
    let nu_pert = Series::from_leading(zero.clone(), &profiles.n[..count], kk);
    let nu = Series::from_leading(template.constant_like(1.0), &profiles.n[..count], kk);
    let u = Series::from_leading(zero.clone(), &profiles.u[..count], kk);
    let phi = Series::from_leading(zero.clone(), &profiles.phi[..count], kk);

    let mut dt_n: Vec<Option<C>> = vec![None; kk + 1];
    let mut dt_u: Vec<Option<C>> = vec![None; kk + 1];
    for k in 1..kk {
        dt_n[k] = required_dt(profiles.n.get(k - 1).filter(|_| k <= count), dt.dt_n(k), "n", k)?;
        dt_u[k] = required_dt(profiles.u.get(k - 1).filter(|_| k <= count), dt.dt_u(k), "u", k)?;
    }

    let v = params.v();
    let c = params.poisson_coupling();

    // mass
    let flux = series_mul_raw(&nu, &u)?;
    let mut mass = Vec::with_capacity(kk + 1);
    for j in 0..=kk {
        let mut m = match &flux[j] {
            Some(f) => f.dx_dealiased(1),
            None => zero.clone(),
        };
        if !nu.coeff(j).is_zero() && j > 0 {
            m.axpy(-v, &nu.coeff(j).dx(1));
        }
        if j >= 1 {
            if let Some(d) = &dt_n[j - 1] {
                m.axpy(1.0, d);
            }
        }
        mass.push(m);
    }

    // momentum
    let du = u.dx(1);
    let adv = series_mul_raw(&u, &du)?;
    let pressure = if params.t_i != 0.0 {
        let recip = series_recip_one_plus(&nu_pert)?;
        Some(series_mul(&nu_pert.dx(1), &recip)?)
    } else {
        None
    };
    let mut momentum = Vec::with_capacity(kk + 1);
    for j in 0..=kk {
        let mut m = match &adv[j] {
            Some(a) => a.dealias(),
            None => zero.clone(),
        };
        if !u.coeff(j).is_zero() {
            m.axpy(-v, du.coeff(j));
        }
        if let Some(p) = &pressure {
            m.axpy(params.ion_pressure(), p.coeff(j));
        }
        if !phi.coeff(j).is_zero() {
            m.axpy(params.charge_to_mass(), &phi.coeff(j).dx(1));
        }
        if j >= 1 {
            if let Some(d) = &dt_u[j - 1] {
                m.axpy(1.0, d);
            }
        }
        momentum.push(m);
    }

    // Poisson
    let boltz = series_exp(&phi.scale(params.kappa()))?;
    let mut poisson = Vec::with_capacity(kk + 1);
    for j in 0..=kk {
        let mut p = boltz.coeff(j).sub(nu.coeff(j)).scale(-c);
        if j >= 1 && !phi.coeff(j - 1).is_zero() {
            p.axpy(1.0, &phi.coeff(j - 1).dx(2));
        }
        poisson.push(p);
    }

    let out = ResidualSeries {
        mass: Series { coeffs: mass },
        momentum: Series { coeffs: momentum },
        poisson: Series { coeffs: poisson },
    };
    for s in [&out.mass, &out.momentum, &out.poisson] {
        if s.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(LabError::Numeric("ep_residual_series".into()));
        }
    }
    Ok(out)
}
