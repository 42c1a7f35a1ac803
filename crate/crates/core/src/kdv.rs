//! KdV and linearized inhomogeneous KdV solvers (ETDRK4), conserved
//! functionals, and time-Taylor jets of their solutions.
//!
//! ```text
//! ∂_t n + V n ∂_x n + δ ∂³_x n = 0
//! ∂_t m + V ∂_x(n₁ m) + δ ∂³_x m = G(t)
//! ```
//!
//! The dispersive term is integrated exactly in Fourier space; the
//! (dealiased) advection and the forcing are treated explicitly.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};
use crate::jet::Jet;
use crate::params::PhysParams;
use crate::series::Coefficient;
use crate::spectral::{self, Spectrum};

/// Points on the complex contour used to evaluate the ETDRK4 φ-functions.
const CONTOUR_POINTS: usize = 32;

/// Largest admissible `dt · V · max|n| · k_cut` for the explicit advection.
pub const ADVECTIVE_STABILITY_LIMIT: f64 = 2.5;

/// Solution samples on a uniform output time grid.
#[derive(Clone, Debug)]
pub struct KdvTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<GridField>,
    pub params: PhysParams,
}

impl KdvTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &GridField {
        self.states.last().expect("trajectories are never empty")
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.states[0].grid()
    }

    /// Cubic Lagrange interpolation in time; errors outside the covered range.
    pub fn interpolate(&self, t: f64) -> Result<GridField> {
        uniform_lagrange(&self.times, &self.states, t)
    }
}

/// Cubic (or lower, for short tables) Lagrange interpolation on a uniform
/// time grid. Times outside `[t₀, t_last]` (beyond roundoff) are rejected.
pub fn uniform_lagrange(times: &[f64], values: &[GridField], t: f64) -> Result<GridField> {
    let n = times.len();
    if n == 0 || n != values.len() {
        return Err(LabError::Shape("interpolation table is empty or ragged".into()));
    }
    if n == 1 {
        return if (t - times[0]).abs() <= 1e-12 * (1.0 + t.abs()) {
            Ok(values[0].clone())
        } else {
            Err(LabError::Hierarchy(format!("time {t} outside single-sample table at {}", times[0])))
        };
    }
    let t0 = times[0];
    let span = times[n - 1] - t0;
    let h = span / (n - 1) as f64;
    let slack = 1e-9 * h;
    if t < t0 - slack || t > times[n - 1] + slack {
        return Err(LabError::Hierarchy(format!(
            "time {t} outside tabulated range [{t0}, {}]",
            times[n - 1]
        )));
    }
    let s = ((t - t0) / h).clamp(0.0, (n - 1) as f64);
    let idx = s.floor() as usize;
    if (s - idx as f64).abs() < 1e-12 {
        return Ok(values[idx].clone());
    }
    if idx + 1 < n && (s - (idx + 1) as f64).abs() < 1e-12 {
        return Ok(values[idx + 1].clone());
    }
    let width = n.min(4);
    let start = (idx as isize - 1).clamp(0, (n - width) as isize) as usize;
    let nodes: Vec<usize> = (start..start + width).collect();
    let mut out = GridField::zeros(values[0].grid());
    for &i in &nodes {
        let w: f64 = nodes
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| (s - j as f64) / (i as f64 - j as f64))
            .product();
        out.axpy(w, &values[i]);
    }
    Ok(out)
}

/// Forcing `G(t)` for the linearized equation.
pub trait ForcingSupplier: Sync {
    fn forcing(&self, t: f64) -> Result<GridField>;
}

/// Identically zero forcing.
pub struct ZeroForcing(pub Arc<Grid>);

impl ForcingSupplier for ZeroForcing {
    fn forcing(&self, _t: f64) -> Result<GridField> {
        Ok(GridField::zeros(&self.0))
    }
}

/// Forcing tabulated on a uniform time grid, interpolated cubically.
pub struct TabulatedForcing {
    pub times: Vec<f64>,
    pub values: Vec<GridField>,
}

impl ForcingSupplier for TabulatedForcing {
    fn forcing(&self, t: f64) -> Result<GridField> {
        uniform_lagrange(&self.times, &self.values, t)
    }
}

/// Forcing given by a closure.
pub struct FnForcing<F: Fn(f64) -> GridField + Sync>(pub F);

impl<F: Fn(f64) -> GridField + Sync> ForcingSupplier for FnForcing<F> {
    fn forcing(&self, t: f64) -> Result<GridField> {
        Ok((self.0)(t))
    }
}

/// `−(V/2)∂_x D(n²) − δ∂³n`, or `G − V∂_x D(n₁n) − δ∂³n` when `n1` is given.
pub fn kdv_time_derivative(
    n: &GridField,
    forcing: Option<&GridField>,
    n1: Option<&GridField>,
    params: &PhysParams,
) -> GridField {
    let v = params.v();
    let mut out = match n1 {
        None => n.mul_pointwise(n).dx_dealiased(1).scale(-0.5 * v),
        Some(a) => a.mul_pointwise(n).dx_dealiased(1).scale(-v),
    };
    out.axpy(-params.delta(), &spectral::dx(n, 3));
    if let Some(g) = forcing {
        out.add_assign(g);
    }
    out
}

/// Conserved functionals of the KdV equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdvInvariants {
    /// `∫ n`
    pub mass: f64,
    /// `∫ n²`
    pub momentum: f64,
    /// `∫ (V n³/6 − (δ/2) (∂_x n)²)`
    pub energy: f64,
}

pub fn kdv_invariants(n: &GridField, params: &PhysParams) -> KdvInvariants {
    let h = n.grid().spacing();
    let mass = n.integral();
    let momentum = n.values().iter().map(|v| v * v).sum::<f64>() * h;
    let cubic = n.values().iter().map(|v| v * v * v).sum::<f64>() * h;
    let grad = spectral::derivative_norm(n, 1).powi(2);
    KdvInvariants { mass, momentum, energy: params.v() * cubic / 6.0 - 0.5 * params.delta() * grad }
}

/// Travelling wave `(3c/V) sech²(½√(c/δ)(x − x₀ − ct))`, centred on the
/// nearest periodic image.
pub fn soliton(grid: &Arc<Grid>, params: &PhysParams, speed: f64, x0: f64, t: f64) -> GridField {
    let amp = 3.0 * speed / params.v();
    let width = 0.5 * (speed / params.delta()).sqrt();
    let l = grid.length();
    let centre = x0 + speed * t;
    GridField::from_fn(grid, |x| {
        let mut s = x - centre;
        s -= l * (s / l).round();
        amp / (width * s).cosh().powi(2)
    })
}

/// ETDRK4 weights for the diagonal linear part `L(k)·v̂`.
struct Etdrk4 {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl Etdrk4 {
    fn new(symbol: &[Complex64], h: f64) -> Self {
        let m = CONTOUR_POINTS;
        let roots: Vec<Complex64> = (1..=m)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 - 0.5) / m as f64 * 2.0))
            .collect();
        let n = symbol.len();
        let mut out = Etdrk4 {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        for &l in symbol {
            let z = l * h;
            out.e.push(z.exp());
            out.e2.push((z * 0.5).exp());
            let (mut q, mut f1, mut f2, mut f3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
            for r0 in &roots {
                let r = z + r0;
                let er = r.exp();
                let r3 = r * r * r;
                q += ((r * 0.5).exp() - 1.0) / r;
                f1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
                f2 += (2.0 + r + er * (r - 2.0)) / r3;
                f3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
            }
            let w = h / m as f64;
            out.q.push(q * w);
            out.f1.push(f1 * w);
            out.f2.push(f2 * w);
            out.f3.push(f3 * w);
        }
        out
    }
}

/// `iδk³`: Fourier symbol of `−δ∂³`.
fn dispersion_symbol(grid: &Grid, delta: f64) -> Vec<Complex64> {
    let nyq = grid.nyquist_index();
    grid.wavenumbers()
        .iter()
        .enumerate()
        .map(|(j, &k)| spectral::derivative_symbol(3, j, k, nyq) * (-delta))
        .collect()
}

/// `ik` restricted to the dealiased band.
fn masked_ik(grid: &Grid) -> Vec<Complex64> {
    let cutoff = grid.dealias_cutoff() as i64;
    let nyq = grid.nyquist_index();
    grid.wavenumbers()
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            if grid.mode_index(j).abs() > cutoff {
                Complex64::default()
            } else {
                spectral::derivative_symbol(1, j, k, nyq)
            }
        })
        .collect()
}

fn band_mask(grid: &Grid) -> Vec<f64> {
    let cutoff = grid.dealias_cutoff() as i64;
    (0..grid.n_points()).map(|j| if grid.mode_index(j).abs() > cutoff { 0.0 } else { 1.0 }).collect()
}

fn to_spectrum(f: &GridField) -> Vec<Complex64> {
    Spectrum::of(f).coeffs().to_vec()
}

fn to_field(grid: &Arc<Grid>, v: &[Complex64]) -> GridField {
    Spectrum::from_coeffs(grid, v.to_vec()).to_field()
}

/// Step plan: the number of steps is rounded up so that τ falls on an output.
fn step_plan(tau: f64, dt: f64, out_every: usize) -> Result<(usize, f64)> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(LabError::Parameter(format!("tau must be non-negative, got {tau}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LabError::Parameter(format!("dt must be positive, got {dt}")));
    }
    if out_every == 0 {
        return Err(LabError::Parameter("out_every must be at least 1".into()));
    }
    let mut steps = (tau / dt - 1e-9).ceil().max(0.0) as usize;
    if !steps.is_multiple_of(out_every) {
        steps += out_every - steps % out_every;
    }
    let h = if steps == 0 { dt } else { tau / steps as f64 };
    Ok((steps, h))
}

fn check_advective_bound(dt: f64, speed: f64, grid: &Grid) -> Result<()> {
    let kcut = 2.0 * PI * grid.dealias_cutoff() as f64 / grid.length();
    let cfl = dt * speed * kcut;
    if cfl > ADVECTIVE_STABILITY_LIMIT {
        return Err(LabError::Parameter(format!(
            "dt = {dt} too large for explicit advection (dt·speed·k = {cfl:.3} > {ADVECTIVE_STABILITY_LIMIT})"
        )));
    }
    Ok(())
}

fn all_finite(v: &[Complex64]) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// Shared ETDRK4 driver. `nonlinear(t, v̂)` returns the explicit part in
/// Fourier space.
#[allow(clippy::too_many_arguments)]
fn etdrk4_run(
    grid: &Arc<Grid>,
    v0: Vec<Complex64>,
    symbol: &[Complex64],
    h: f64,
    steps: usize,
    out_every: usize,
    mut nonlinear: impl FnMut(f64, &[Complex64]) -> Result<Vec<Complex64>>,
) -> Result<(Vec<f64>, Vec<GridField>)> {
    let w = Etdrk4::new(symbol, h);
    let n = v0.len();
    let mut v = v0;
    let mut times = vec![0.0];
    let mut states = vec![to_field(grid, &v)];
    let mut a = vec![Complex64::default(); n];
    let mut b = vec![Complex64::default(); n];
    let mut c = vec![Complex64::default(); n];
    for step in 0..steps {
        let t = step as f64 * h;
        let nv = nonlinear(t, &v)?;
        for j in 0..n {
            a[j] = w.e2[j] * v[j] + w.q[j] * nv[j];
        }
        let na = nonlinear(t + 0.5 * h, &a)?;
        for j in 0..n {
            b[j] = w.e2[j] * v[j] + w.q[j] * na[j];
        }
        let nb = nonlinear(t + 0.5 * h, &b)?;
        for j in 0..n {
            c[j] = w.e2[j] * a[j] + w.q[j] * (2.0 * nb[j] - nv[j]);
        }
        let nc = nonlinear(t + h, &c)?;
        for j in 0..n {
            v[j] = w.e[j] * v[j] + w.f1[j] * nv[j] + 2.0 * w.f2[j] * (na[j] + nb[j]) + w.f3[j] * nc[j];
        }
        if !all_finite(&v) {
            return Err(LabError::Integration { t: t + h, reason: "non-finite field".into() });
        }
        if (step + 1) % out_every == 0 {
            times.push((step + 1) as f64 * h);
            states.push(to_field(grid, &v));
        }
    }
    Ok((times, states))
}

/// Integrates the KdV equation from `n1_0` (projected onto the dealiased band).
pub fn solve_kdv(n1_0: &GridField, tau: f64, params: &PhysParams, dt: f64, out_every: usize) -> Result<KdvTrajectory> {
    let grid = n1_0.grid().clone();
    let (steps, h) = step_plan(tau, dt, out_every)?;
    if !n1_0.is_finite() {
        return Err(LabError::Numeric("solve_kdv initial data".into()));
    }
    // max|n| can grow modestly; allow a factor 2 headroom
    check_advective_bound(h, 2.0 * params.v() * n1_0.max_abs(), &grid)?;
    let symbol = dispersion_symbol(&grid, params.delta());
    let ik = masked_ik(&grid);
    let coef = -0.5 * params.v();
    let mask = band_mask(&grid);
    let mut v0 = to_spectrum(n1_0);
    for (c, m) in v0.iter_mut().zip(&mask) {
        *c *= m;
    }
    let nonlinear = |_t: f64, v: &[Complex64]| -> Result<Vec<Complex64>> {
        let n = to_field(&grid, v);
        let sq = n.mul_pointwise(&n);
        let mut s = to_spectrum(&sq);
        for (c, d) in s.iter_mut().zip(&ik) {
            *c *= d * coef;
        }
        Ok(s)
    };
    let (times, states) = etdrk4_run(&grid, v0, &symbol, h, steps, out_every, nonlinear)?;
    Ok(KdvTrajectory { times, states, params: *params })
}

/// Integrates `∂_t m + V∂_x(n₁m) + δ∂³m = G` from `nk_0`. `n₁` is interpolated
/// cubically from `n1_traj`; `G` is requested at stage times.
#[allow(clippy::too_many_arguments)]
pub fn solve_linearized_kdv(
    k: usize,
    nk_0: &GridField,
    forcing: &dyn ForcingSupplier,
    n1_traj: &KdvTrajectory,
    tau: f64,
    params: &PhysParams,
    dt: f64,
    out_every: usize,
) -> Result<KdvTrajectory> {
    if k < 2 {
        return Err(LabError::Precondition(format!("linearized solves are for k >= 2, got {k}")));
    }
    let grid = nk_0.grid().clone();
    if !n1_traj.final_state().same_grid(nk_0) {
        return Err(LabError::Shape("n1 trajectory lives on a different grid".into()));
    }
    let t_last = *n1_traj.times.last().unwrap();
    if t_last + 1e-9 * (1.0 + tau) < tau {
        return Err(LabError::Hierarchy(format!("n1 trajectory ends at {t_last} before tau = {tau}")));
    }
    let (steps, h) = step_plan(tau, dt, out_every)?;
    let n1_max = n1_traj.states.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    check_advective_bound(h, params.v() * n1_max, &grid)?;
    let symbol = dispersion_symbol(&grid, params.delta());
    let ik = masked_ik(&grid);
    let mask = band_mask(&grid);
    let v = params.v();
    let mut v0 = to_spectrum(nk_0);
    for (c, m) in v0.iter_mut().zip(&mask) {
        *c *= m;
    }
    let nonlinear = |t: f64, spec: &[Complex64]| -> Result<Vec<Complex64>> {
        let m = to_field(&grid, spec);
        let n1 = n1_traj.interpolate(t)?;
        let g = forcing.forcing(t)?;
        if !g.same_grid(&m) {
            return Err(LabError::Shape("forcing lives on a different grid".into()));
        }
        let mut s = to_spectrum(&n1.mul_pointwise(&m));
        let gs = to_spectrum(&g);
        for j in 0..s.len() {
            s[j] = -v * ik[j] * s[j] + gs[j] * mask[j];
        }
        Ok(s)
    };
    let (times, states) = etdrk4_run(&grid, v0, &symbol, h, steps, out_every, nonlinear)?;
    Ok(KdvTrajectory { times, states, params: *params })
}

/// Time-Taylor jet of the KdV solution through `n0` with `depth` coefficients
/// (Taylor-mode differentiation of the semi-discrete equation).
pub fn kdv_jet(n0: &GridField, params: &PhysParams, depth: usize) -> Jet {
    let depth = depth.max(1);
    let mut c = vec![n0.clone()];
    for p in 0..depth - 1 {
        let mut sq = c[0].mul_pointwise(&c[p]);
        for i in 1..=p {
            sq.axpy(1.0, &c[i].mul_pointwise(&c[p - i]));
        }
        let mut next = sq.dx_dealiased(1).scale(-0.5 * params.v());
        next.axpy(-params.delta(), &spectral::dx(&c[p], 3));
        next.scale_in_place(1.0 / (p + 1) as f64);
        c.push(next);
    }
    Jet::new(n0.grid(), c)
}

/// Jet of the linearized solution through `nk0` given jets of `n₁` and `G`.
/// Valid order: `1 + min(valid(n₁), valid(G))`, capped at `depth`.
pub fn linearized_kdv_jet(nk0: &GridField, n1: &Jet, forcing: &Jet, params: &PhysParams, depth: usize) -> Result<Jet> {
    let reach = n1.valid().min(forcing.valid()).saturating_add(1).min(depth.max(1));
    let mut c = vec![nk0.clone()];
    for p in 0..reach - 1 {
        let mut prod = GridField::zeros(nk0.grid());
        for i in 0..=p {
            prod.axpy(1.0, &n1.coeff(i)?.mul_pointwise(&c[p - i]));
        }
        let mut next = prod.dx_dealiased(1).scale(-params.v());
        next.axpy(-params.delta(), &spectral::dx(&c[p], 3));
        next.add_assign(&forcing.coeff(p)?);
        next.scale_in_place(1.0 / (p + 1) as f64);
        c.push(next);
    }
    Ok(Jet::new(nk0.grid(), c))
}
