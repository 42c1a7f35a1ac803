//! Direct solver for the scaled Euler-Poisson system at finite ε:
//!
//! ```text
//! ε∂_t n − V∂n + ∂(nu) = 0
//! ε∂_t u − V∂u + u∂u + (T_i/M)∂n/n + (e/M)∂φ = 0
//! ε∂²φ = 4πe(n̄ e^{eφ/T_e} − n)
//! ```
//!
//! Classical RK4 in time with the Boltzmann-Poisson equation re-solved by
//! Newton at every stage. Products are 2/3-dealiased before differentiation.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};
use crate::params::PhysParams;
use crate::spectral::{dealias, dx, Spectrum};

/// Default CFL safety factor for `dt ≤ safety · ε · dx / c_max`.
pub const DEFAULT_CFL_SAFETY: f64 = 0.25;

/// Full state of the scaled system at one time; `n` in absolute units.
#[derive(Clone, Debug)]
pub struct EpState {
    pub n: GridField,
    pub u: GridField,
    pub phi: GridField,
    pub t: f64,
    pub eps: f64,
}

impl EpState {
    pub fn grid(&self) -> &Arc<Grid> {
        self.n.grid()
    }

    /// Uniform state `n = n̄`, `u = φ = 0`.
    pub fn equilibrium(grid: &Arc<Grid>, eps: f64, params: &PhysParams) -> Self {
        EpState {
            n: GridField::constant(grid, params.n_bar),
            u: GridField::zeros(grid),
            phi: GridField::zeros(grid),
            t: 0.0,
            eps,
        }
    }

    /// Builds a state from `(n, u)` with a consistent potential.
    pub fn from_density_velocity(
        n: GridField,
        u: GridField,
        t: f64,
        eps: f64,
        params: &PhysParams,
        phi_guess: Option<&GridField>,
        opts: &PoissonOptions,
    ) -> Result<Self> {
        let guess = match phi_guess {
            Some(g) => g.clone(),
            None => n.map(|v| (v / params.n_bar).ln() / params.kappa()),
        };
        let phi = poisson_solve(&n, eps, params, &guess, opts)?.phi;
        Ok(EpState { n, u, phi, t, eps })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PoissonOptions {
    /// Absolute sup-norm tolerance on the Poisson residual.
    pub tol: f64,
    pub max_newton: usize,
}

impl PoissonOptions {
    /// `1e-12 · 4πe n̄`, 50 Newton steps.
    pub fn for_params(params: &PhysParams) -> Self {
        PoissonOptions { tol: 1e-12 * params.poisson_coupling(), max_newton: 50 }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub phi: GridField,
    /// Sup-norm residual before each Newton step and after the last.
    pub residuals: Vec<f64>,
}

impl PoissonSolution {
    pub fn iterations(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }

    pub fn residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&f64::INFINITY)
    }
}

/// `ε∂²φ − 4πe(n̄e^{κφ} − n)`.
pub fn poisson_residual(n: &GridField, phi: &GridField, eps: f64, params: &PhysParams) -> GridField {
    let c = params.poisson_coupling();
    let kappa = params.kappa();
    let nb = params.n_bar;
    let mut r = dx(phi, 2);
    r.scale_in_place(eps);
    for ((r, &p), &nv) in r.values_mut().iter_mut().zip(phi.values()).zip(n.values()) {
        *r -= c * ((kappa * p).exp() - nv / nb);
    }
    r
}

/// Newton iteration for the Boltzmann-Poisson equation. Each linear step
/// `(−ε∂² + cκe^{κφ})δ = F` is solved by conjugate gradients preconditioned
/// with the constant-coefficient operator, which is diagonal in Fourier space.
pub fn poisson_solve(
    n: &GridField,
    eps: f64,
    params: &PhysParams,
    phi_guess: &GridField,
    opts: &PoissonOptions,
) -> Result<PoissonSolution> {
    if !(eps > 0.0) {
        return Err(LabError::Precondition(format!("ε must be positive, got {eps}")));
    }
    if !n.same_grid(phi_guess) {
        return Err(LabError::Shape("density and potential guess live on different grids".into()));
    }
    let nmin = n.min();
    if !(nmin > 0.0) {
        return Err(LabError::Domain(format!("density must be positive, min = {nmin:.3e}")));
    }
    let c = params.poisson_coupling();
    let kappa = params.kappa();
    let mut phi = phi_guess.clone();
    let mut residuals = Vec::new();
    for it in 0..=opts.max_newton {
        let f = poisson_residual(n, &phi, eps, params);
        let r = f.max_abs();
        if !r.is_finite() {
            return Err(LabError::Elliptic { iterations: it, residual: r });
        }
        residuals.push(r);
        if r <= opts.tol {
            return Ok(PoissonSolution { phi, residuals });
        }
        if it == opts.max_newton {
            break;
        }
        let w = phi.map(|p| c * kappa * (kappa * p).exp());
        let delta = pcg(&w, &f, eps, 1e-3 * opts.tol)?;
        phi.add_assign(&delta);
    }
    Err(LabError::Elliptic { iterations: opts.max_newton, residual: *residuals.last().unwrap() })
}

/// Solves `(−ε∂² + w)x = b` for `w > 0`.
fn pcg(w: &GridField, b: &GridField, eps: f64, abs_tol: f64) -> Result<GridField> {
    let grid = b.grid().clone();
    let wbar = w.mean();
    let apply = |x: &GridField| -> GridField {
        let mut y = dx(x, 2);
        y.scale_in_place(-eps);
        for ((y, &wv), &xv) in y.values_mut().iter_mut().zip(w.values()).zip(x.values()) {
            *y += wv * xv;
        }
        y
    };
    let precond = |r: &GridField| -> GridField {
        Spectrum::of(r).map_to_field(|_, k| Complex64::new(1.0 / (eps * k * k + wbar), 0.0))
    };
    let dot = |a: &GridField, b: &GridField| -> f64 { a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum() };

    let mut x = precond(b);
    let mut r = b.sub(&apply(&x));
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = b.max_abs();
    let tol = abs_tol.max(1e-15 * bnorm);
    for _ in 0..grid.n_points().max(200) {
        if r.max_abs() <= tol {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        z = precond(&r);
        let rz_new = dot(&r, &z);
        if rz_new == 0.0 {
            return Ok(x);
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p = z.zip_map(&p, |zv, pv| zv + beta * pv);
    }
    if r.max_abs() <= 1e3 * tol {
        // Stagnation at roundoff; Newton's outer test decides.
        return Ok(x);
    }
    Err(LabError::Elliptic { iterations: 0, residual: r.max_abs() })
}

/// `(∂_t n, ∂_t u)` of the scaled system for a state whose `φ` is consistent.
pub fn ep_rhs(state: &EpState, params: &PhysParams) -> (GridField, GridField) {
    rhs_parts(&state.n, &state.u, &state.phi, state.eps, params)
}

fn rhs_parts(n: &GridField, u: &GridField, phi: &GridField, eps: f64, params: &PhysParams) -> (GridField, GridField) {
    let v = params.v();
    let inv = 1.0 / eps;
    let nx = dx(n, 1);
    let ux = dx(u, 1);
    let flux_x = dx(&dealias(&n.mul_pointwise(u)), 1);
    let dn = nx.zip_map(&flux_x, |a, b| (v * a - b) * inv);

    let adv = dealias(&u.mul_pointwise(&ux));
    let phix = dx(phi, 1);
    let qe = params.charge_to_mass();
    let mut du = ux.zip_map(&adv, |a, b| v * a - b);
    if params.t_i != 0.0 {
        let press = dealias(&nx.zip_map(n, |a, b| a / b));
        du.axpy(-params.ion_pressure(), &press);
    }
    du.axpy(-qe, &phix);
    du.scale_in_place(inv);
    (dn, du)
}

/// Fastest characteristic speed in the moving frame, times ε:
/// `max|V − u| + V`.
pub fn characteristic_speed(state: &EpState, params: &PhysParams) -> f64 {
    let v = params.v();
    state.u.values().iter().map(|u| (v - u).abs()).fold(0.0, f64::max) + v
}

/// Largest step allowed by `dt ≤ safety · ε · dx / c_max`.
pub fn cfl_limit(state: &EpState, params: &PhysParams, safety: f64) -> f64 {
    safety * state.eps * state.grid().spacing() / characteristic_speed(state, params)
}

#[derive(Clone, Copy, Debug)]
pub struct EpOptions {
    pub poisson: PoissonOptions,
    pub cfl_safety: f64,
}

impl EpOptions {
    pub fn for_params(params: &PhysParams) -> Self {
        EpOptions { poisson: PoissonOptions::for_params(params), cfl_safety: DEFAULT_CFL_SAFETY }
    }
}

#[derive(Clone, Debug)]
pub struct EpTrajectory {
    pub states: Vec<EpState>,
    /// Step size actually used (`tau / steps`).
    pub dt: f64,
    /// Largest Poisson residual over all accepted steps.
    pub max_poisson_residual: f64,
    pub newton_iterations: usize,
}

impl EpTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> &EpState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// RK4 integration to `t0 + tau`. The step count is rounded up to a multiple
/// of `out_every`; `dt` may be negative to integrate backwards.
pub fn ep_solve(state0: &EpState, tau: f64, dt: f64, out_every: usize, params: &PhysParams, opts: &EpOptions) -> Result<EpTrajectory> {
    if !(tau.is_finite() && tau >= 0.0) || !(dt.is_finite() && dt != 0.0) || out_every == 0 {
        return Err(LabError::Precondition(format!("need tau ≥ 0, dt ≠ 0, out_every ≥ 1 (tau={tau}, dt={dt}, out_every={out_every})")));
    }
    let direction = dt.signum();
    let chunks = (tau / (dt.abs() * out_every as f64) - 1e-9).ceil().max(if tau > 0.0 { 1.0 } else { 0.0 }) as usize;
    let steps = chunks * out_every;
    let h = if steps == 0 { 0.0 } else { direction * tau / steps as f64 };
    let eps = state0.eps;
    let t0 = state0.t;
    let fail = |t: f64, reason: String| LabError::Integration { t, reason };
    let wrap = |t: f64, e: LabError| match e {
        LabError::Integration { .. } => e,
        other => fail(t, other.to_string()),
    };

    let mut cur = state0.clone();
    // The stored potential is made consistent once up front.
    let first = poisson_solve(&cur.n, eps, params, &cur.phi, &opts.poisson).map_err(|e| wrap(t0, e))?;
    cur.phi = first.phi;
    let mut newton = first.residuals.len() - 1;
    let mut max_res = first.residuals.last().copied().unwrap_or(0.0);
    let mut states = vec![cur.clone()];

    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let limit = cfl_limit(&cur, params, opts.cfl_safety);
        if h.abs() > limit {
            return Err(fail(t, format!("step {:.3e} exceeds the CFL limit {:.3e}", h.abs(), limit)));
        }
        let mut stage = |n: &GridField, u: &GridField, guess: &GridField| -> Result<(GridField, GridField, GridField)> {
            let sol = poisson_solve(n, eps, params, guess, &opts.poisson)?;
            newton += sol.iterations();
            max_res = max_res.max(sol.residual());
            let (a, b) = rhs_parts(n, u, &sol.phi, eps, params);
            Ok((a, b, sol.phi))
        };
        let (k1n, k1u) = rhs_parts(&cur.n, &cur.u, &cur.phi, eps, params);
        let shift = |f: &GridField, k: &GridField, c: f64| {
            let mut g = f.clone();
            g.axpy(c, k);
            g
        };
        let (k2n, k2u, p2) =
            stage(&shift(&cur.n, &k1n, 0.5 * h), &shift(&cur.u, &k1u, 0.5 * h), &cur.phi).map_err(|e| wrap(t, e))?;
        let (k3n, k3u, p3) =
            stage(&shift(&cur.n, &k2n, 0.5 * h), &shift(&cur.u, &k2u, 0.5 * h), &p2).map_err(|e| wrap(t, e))?;
        let (k4n, k4u, p4) = stage(&shift(&cur.n, &k3n, h), &shift(&cur.u, &k3u, h), &p3).map_err(|e| wrap(t, e))?;
        let combine = |f: &GridField, a: &GridField, b: &GridField, c: &GridField, d: &GridField| {
            let mut g = f.clone();
            for (((( g, a), b), c), d) in g.values_mut().iter_mut().zip(a.values()).zip(b.values()).zip(c.values()).zip(d.values()) {
                *g += h / 6.0 * (a + 2.0 * b + 2.0 * c + d);
            }
            g
        };
        let n = combine(&cur.n, &k1n, &k2n, &k3n, &k4n);
        let u = combine(&cur.u, &k1u, &k2u, &k3u, &k4u);
        let t_next = t0 + (step + 1) as f64 * h;
        if !(n.is_finite() && u.is_finite()) {
            return Err(fail(t_next, "non-finite state".into()));
        }
        let nmin = n.min();
        if !(nmin > 0.0) {
            return Err(fail(t_next, format!("density lost positivity (min {nmin:.3e})")));
        }
        let sol = poisson_solve(&n, eps, params, &p4, &opts.poisson).map_err(|e| wrap(t_next, e))?;
        newton += sol.iterations();
        max_res = max_res.max(sol.residual());
        cur = EpState { n, u, phi: sol.phi, t: t_next, eps };
        if (step + 1) % out_every == 0 {
            states.push(cur.clone());
        }
    }
    Ok(EpTrajectory { states, dt: h, max_poisson_residual: max_res, newton_iterations: newton })
}

/// Largest `|dt| ≤ target` that divides `dt_out` into an integer number of
/// steps and stays below `margin` times the CFL limit of `state`.
pub fn plan_step(state: &EpState, params: &PhysParams, safety: f64, dt_out: f64, margin: f64) -> (f64, usize) {
    let limit = margin * cfl_limit(state, params, safety);
    let per = (dt_out / limit).ceil().max(1.0) as usize;
    (dt_out / per as f64, per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Preset;
    use crate::spectral::l2_norm;

    fn grid() -> Arc<Grid> {
        Grid::new(64, 2.0 * std::f64::consts::PI * 4.0).unwrap()
    }

    #[test]
    fn equilibrium_has_zero_potential_and_rhs() {
        let g = grid();
        let p = Preset::Warm.params();
        let s = EpState::equilibrium(&g, 0.1, &p);
        let sol = poisson_solve(&s.n, 0.1, &p, &GridField::constant(&g, 0.3), &PoissonOptions::for_params(&p)).unwrap();
        assert!(sol.phi.max_abs() < 1e-13);
        let (dn, du) = ep_rhs(&s, &p);
        assert_eq!(dn.max_abs(), 0.0);
        assert_eq!(du.max_abs(), 0.0);
    }

    #[test]
    fn small_single_mode_matches_linearized_solution() {
        let g = grid();
        let p = Preset::Cold.params();
        let (eps, a, xi) = (0.1, 1e-6, 0.5);
        let n = GridField::from_fn(&g, |x| p.n_bar * (1.0 + a * (xi * x).sin()));
        let sol = poisson_solve(&n, eps, &p, &GridField::zeros(&g), &PoissonOptions::for_params(&p)).unwrap();
        let denom = 1.0 + eps * p.t_e / (p.poisson_coupling() * p.e_charge) * xi * xi;
        let expect = GridField::from_fn(&g, |x| p.te_over_e() * a * (xi * x).sin() / denom);
        assert!(sol.phi.sub(&expect).max_abs() < 1e-11);
    }

    #[test]
    fn newton_converges_quadratically() {
        let g = grid();
        let p = Preset::Warm.params();
        let n = GridField::from_fn(&g, |x| p.n_bar * (1.0 + 0.5 * (0.5 * x).cos()));
        let sol = poisson_solve(&n, 0.1, &p, &GridField::zeros(&g), &PoissonOptions::for_params(&p)).unwrap();
        let r = &sol.residuals;
        assert!(r.len() >= 4, "{r:?}");
        for w in r.windows(2).filter(|w| w[1] > 1e-10) {
            assert!(w[1] / (w[0] * w[0]) < 10.0, "{r:?}");
        }
    }

    #[test]
    fn rejects_nonpositive_density() {
        let g = grid();
        let p = Preset::Cold.params();
        let n = GridField::from_fn(&g, |x| x.sin());
        let err = poisson_solve(&n, 0.1, &p, &GridField::zeros(&g), &PoissonOptions::for_params(&p)).unwrap_err();
        assert!(matches!(err, LabError::Domain(_)));
    }

    #[test]
    fn spatially_constant_state_is_steady() {
        let g = grid();
        let p = Preset::Warm.params();
        let opts = PoissonOptions::for_params(&p);
        let s = EpState::from_density_velocity(
            GridField::constant(&g, 1.3 * p.n_bar),
            GridField::constant(&g, 0.2),
            0.0,
            0.1,
            &p,
            None,
            &opts,
        )
        .unwrap();
        let (dn, du) = ep_rhs(&s, &p);
        assert!(dn.max_abs() < 1e-14 && du.max_abs() < 1e-12);
    }

    #[test]
    fn mass_conserved_and_reversible() {
        let g = grid();
        let p = Preset::Warm.params();
        let opts = EpOptions::for_params(&p);
        let n = GridField::from_fn(&g, |x| p.n_bar * (1.0 + 0.05 * (0.5 * x).cos()));
        let u = GridField::from_fn(&g, |x| 0.02 * (0.25 * x).sin());
        let s0 = EpState::from_density_velocity(n, u, 0.0, 0.2, &p, None, &opts.poisson).unwrap();
        let (dt, _) = plan_step(&s0, &p, opts.cfl_safety, 0.05, 0.9);
        let fwd = ep_solve(&s0, 0.5, dt, 10, &p, &opts).unwrap();
        let end = fwd.final_state();
        let m0 = s0.n.integral();
        assert!(((end.n.integral() - m0) / m0).abs() < 1e-10);
        assert!(fwd.max_poisson_residual <= opts.poisson.tol);
        let back = ep_solve(end, 0.5, -dt, 10, &p, &opts).unwrap();
        let b = back.final_state();
        assert!(l2_norm(&b.n.sub(&s0.n)) / l2_norm(&s0.n) < 1e-6);
        assert!(l2_norm(&b.u.sub(&s0.u)) / l2_norm(&s0.u) < 1e-6);
        assert!(b.t.abs() < 1e-12);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = grid();
        let p = Preset::Cold.params();
        let opts = EpOptions::for_params(&p);
        let s0 = EpState::equilibrium(&g, 0.1, &p);
        let err = ep_solve(&s0, 1.0, 0.1, 1, &p, &opts).unwrap_err();
        assert!(matches!(err, LabError::Integration { t, .. } if t == 0.0));
    }
}
