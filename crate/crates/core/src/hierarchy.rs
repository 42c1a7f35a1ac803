//! The four-profile expansion: closure relations, forcing extraction through
//! the residual engine, and the sequential solve k = 1..4.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::{Grid, GridField};
use crate::jet::{Jet, JetTimeDerivatives};
use crate::kdv::{kdv_jet, kdv_time_derivative, linearized_kdv_jet, solve_kdv, solve_linearized_kdv, TabulatedForcing};
use crate::params::PhysParams;
use crate::series::{ep_residual_series, Coefficient, FieldTimeDerivatives, ProfileCoefficients};
use crate::spectral::{self, DEFAULT_MEAN_TOL};

/// Number of profiles in the expansion.
pub const PROFILES: usize = 4;

/// `u¹ = V n¹`, `φ¹ = (T_e/e) n¹`.
pub fn first_profile(n1: &GridField, params: &PhysParams) -> (GridField, GridField) {
    (n1.scale(params.v()), n1.scale(params.te_over_e()))
}

/// Closure data `h^(k-1)`, `g^(k-1)` and the forcing `G^(k-1)` of the
/// linearized equation for `n^(k)`.
#[derive(Clone, Debug)]
pub struct Forcings<C> {
    pub h: C,
    pub g: C,
    pub big_g: C,
}

/// Jets of profiles `1..=m` at one time, plus the forcings between them.
#[derive(Clone, Debug)]
pub struct JetCascade {
    pub profiles: ProfileCoefficients<Jet>,
    /// `forcings[i]` belongs to profile `i + 2`.
    pub forcings: Vec<Forcings<Jet>>,
    /// Largest `|mean| / max|·|` seen among antiderivative integrands.
    pub max_mean_ratio: f64,
}

/// Jet depth needed to build profiles `1..=m`, plus the forcing of profile
/// `m + 1` when `next` is set, with every jet valid to at least first order.
pub fn required_depth(m: usize, next: bool) -> usize {
    if next {
        m + 2
    } else {
        m + 1
    }
}

fn antideriv_jet(f: &Jet, mean_tol: f64, worst: &mut f64) -> Result<Jet> {
    let mut out = Vec::with_capacity(f.stored());
    for c in f.coeffs() {
        let scale = c.max_abs();
        if scale > 0.0 {
            *worst = worst.max(c.mean().abs() / scale);
        }
        let a = spectral::antideriv_zero_mean(c, mean_tol).map_err(|e| match e {
            LabError::Integrability { mean, tol } => LabError::Hierarchy(format!(
                "mass-residual integrand does not decay: |mean| = {mean:.3e} > {tol:.3e}"
            )),
            other => other,
        })?;
        out.push(a);
    }
    Ok(Jet::with_valid(f.grid(), out, f.valid()))
}

/// Builds jets of profiles `1..=ns.len()` from their values at one time.
///
/// For each `k ≥ 2` the unknown profile is zeroed and the engine's affine
/// offsets give
/// - `h^(k-1)` from the order-k Poisson coefficient (divided by 4πe n̄),
/// - `g^(k-1)` as the antiderivative of minus the order-k mass coefficient,
/// - `G^(k-1) = −C/(2V)` where `C` is the order-(k+1) solvability
///   combination evaluated with `n^(k) = 0`, `u^(k) = g`, `φ^(k) = (T_e/e)h`.
pub fn profile_jets(ns: &[GridField], params: &PhysParams, depth: usize, mean_tol: f64, next: bool) -> Result<JetCascade> {
    let m = ns.len();
    if m == 0 || m > PROFILES {
        return Err(LabError::Precondition(format!("between 1 and {PROFILES} profiles required, got {m}")));
    }
    let grid = ns[0].grid().clone();
    let v = params.v();
    let te = params.te_over_e();
    let c = params.poisson_coupling();
    let n1 = kdv_jet(&ns[0], params, depth);
    let (u1, p1) = (n1.scale(v), n1.scale(te));
    let mut prof = ProfileCoefficients::new(vec![n1], vec![u1], vec![p1])?;
    let mut forcings = Vec::new();
    let mut worst = 0.0;
    let last = if next { m + 1 } else { m };
    for k in 2..=last {
        let res = ep_residual_series(&prof, &JetTimeDerivatives(&prof), params, k)?;
        let h = res.poisson.coeff(k).scale(1.0 / c);
        let g = antideriv_jet(&res.mass.coeff(k).scale(-1.0), mean_tol, &mut worst)?;
        let mut trial = prof.clone();
        trial.push(Jet::zero(&grid), g.clone(), h.scale(te));
        let res2 = ep_residual_series(&trial, &JetTimeDerivatives(&trial), params, k + 1)?;
        let big_g = res2.solvability_combination(k + 1, params).scale(-0.5 / v);
        if k <= m {
            let nk = linearized_kdv_jet(&ns[k - 1], &prof.n[0], &big_g, params, depth)?;
            let uk = nk.scale(v).add(&g);
            let pk = nk.add(&h).scale(te);
            prof.push(nk, uk, pk);
        }
        forcings.push(Forcings { h, g, big_g });
    }
    Ok(JetCascade { profiles: prof, forcings, max_mean_ratio: worst })
}

/// `(h^(k-1), g^(k-1), G^(k-1))` at one time from `n^(1..k-1)`.
pub fn extract_forcings(k: usize, lower: &[GridField], params: &PhysParams, mean_tol: f64) -> Result<Forcings<GridField>> {
    if !(2..=PROFILES).contains(&k) || lower.len() != k - 1 {
        return Err(LabError::Precondition(format!(
            "extract_forcings needs 2 <= k <= {PROFILES} and k-1 lower profiles (k = {k}, got {})",
            lower.len()
        )));
    }
    let cascade = profile_jets(lower, params, required_depth(k - 1, true), mean_tol, true)?;
    let f = &cascade.forcings[k - 2];
    Ok(Forcings { h: f.h.value()?, g: f.g.value()?, big_g: f.big_g.value()? })
}

/// Which sign of `∂_x(n¹u¹)` in `g^(1)` makes the order-ε² mass equation hold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignArbitration {
    /// Relative L² mass residual with `g = ∫(−∂_t n¹ − ∂_x(n¹u¹))`.
    pub residual_minus: f64,
    /// Relative L² mass residual with `g = ∫(−∂_t n¹ + ∂_x(n¹u¹))`.
    pub residual_plus: f64,
    /// `-1` or `+1` when exactly one candidate passes, `0` otherwise.
    pub selected: i8,
    /// Relative distance between the engine-extracted `g^(1)` and the selected candidate.
    pub engine_agreement: f64,
}

impl SignArbitration {
    pub fn describe(&self) -> String {
        let which = match self.selected {
            -1 => "g(1) = antiderivative of (-dt n1 - dx(n1 u1))",
            1 => "g(1) = antiderivative of (-dt n1 + dx(n1 u1))",
            _ => "no unique sign",
        };
        format!(
            "sign resolution: {which} [residual minus {:.3e}, plus {:.3e}, engine agreement {:.3e}]",
            self.residual_minus, self.residual_plus, self.engine_agreement
        )
    }
}

/// Tests both candidate signs for `g^(1)` against the order-ε² mass residual.
pub fn arbitrate_g1_sign(n1: &GridField, params: &PhysParams, tol: f64, mean_tol: f64) -> Result<SignArbitration> {
    let n1 = spectral::dealias(n1);
    let (u1, p1) = first_profile(&n1, params);
    let dn1 = kdv_time_derivative(&n1, None, None, params);
    let flux = n1.mul_pointwise(&u1).dx_dealiased(1);
    let forcing = extract_forcings(2, std::slice::from_ref(&n1), params, mean_tol)?;
    let scale = spectral::l2_norm(&flux).max(spectral::l2_norm(&dn1)).max(f64::MIN_POSITIVE);
    let residual = |sign: f64| -> Result<(f64, GridField)> {
        let integrand = dn1.scale(-1.0).add(&flux.scale(sign));
        let g = spectral::antideriv_unchecked(&integrand);
        let phi2 = forcing.h.scale(params.te_over_e());
        let prof = ProfileCoefficients::new(
            vec![n1.clone(), GridField::zeros(n1.grid())],
            vec![u1.clone(), g.clone()],
            vec![p1.clone(), phi2],
        )?;
        let dt = FieldTimeDerivatives { n: vec![dn1.clone()], u: vec![dn1.scale(params.v())] };
        let res = ep_residual_series(&prof, &dt, params, 2)?;
        Ok((spectral::l2_norm(res.mass.coeff(2)) / scale, g))
    };
    let (rm, gm) = residual(-1.0)?;
    let (rp, gp) = residual(1.0)?;
    let selected = match (rm <= tol, rp <= tol) {
        (true, false) => -1,
        (false, true) => 1,
        _ => 0,
    };
    let chosen = if selected == 1 { gp } else { gm };
    let gscale = spectral::l2_norm(&chosen).max(f64::MIN_POSITIVE);
    let engine_agreement = spectral::l2_norm(&forcing.g.sub(&chosen)) / gscale;
    Ok(SignArbitration { residual_minus: rm, residual_plus: rp, selected, engine_agreement })
}

/// Default for [`HierarchyOptions::noise_floor`].
pub const DEFAULT_NOISE_FLOOR: f64 = 1e-14;

/// Knobs for [`build_profiles`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HierarchyOptions {
    pub mean_tol: f64,
    /// Relative tolerance for the sign arbitration residual.
    pub resid_tol: f64,
    /// Relative spectral floor applied to profiles and forcings; see
    /// [`spectral::noise_filter`]. Zero disables it.
    pub noise_floor: f64,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        HierarchyOptions { mean_tol: DEFAULT_MEAN_TOL, resid_tol: 1e-8, noise_floor: DEFAULT_NOISE_FLOOR }
    }
}

/// Profiles and forcings on the output time grid.
#[derive(Clone, Debug)]
pub struct ProfileSet {
    pub times: Vec<f64>,
    /// `n[k-1][i]` = `n^(k)` at `times[i]`; likewise `u`, `phi`.
    pub n: Vec<Vec<GridField>>,
    pub u: Vec<Vec<GridField>>,
    pub phi: Vec<Vec<GridField>>,
    /// `h[k-2][i]` = `h^(k-1)` at `times[i]`, k = 2..4; likewise `g`, `big_g`.
    pub h: Vec<Vec<GridField>>,
    pub g: Vec<Vec<GridField>>,
    pub big_g: Vec<Vec<GridField>>,
    pub params: PhysParams,
    pub sign: SignArbitration,
    pub max_mean_ratio: f64,
}

impl ProfileSet {
    pub fn grid(&self) -> &Arc<Grid> {
        self.n[0][0].grid()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Profile values at output index `i`.
    pub fn at(&self, i: usize) -> ProfileCoefficients<GridField> {
        ProfileCoefficients {
            n: self.n.iter().map(|s| s[i].clone()).collect(),
            u: self.u.iter().map(|s| s[i].clone()).collect(),
            phi: self.phi.iter().map(|s| s[i].clone()).collect(),
        }
    }

    pub fn densities_at(&self, i: usize) -> Vec<GridField> {
        self.n.iter().map(|s| s[i].clone()).collect()
    }

    /// Every `stride`-th stored time, starting with the first.
    pub fn subsample(&self, stride: usize) -> Result<ProfileSet> {
        if stride == 0 || !(self.len() - 1).is_multiple_of(stride) {
            return Err(LabError::Parameter(format!("stride {stride} does not divide {} intervals", self.len() - 1)));
        }
        let pick = |v: &Vec<Vec<GridField>>| -> Vec<Vec<GridField>> {
            v.iter().map(|s| s.iter().step_by(stride).cloned().collect()).collect()
        };
        Ok(ProfileSet {
            times: self.times.iter().step_by(stride).copied().collect(),
            n: pick(&self.n),
            u: pick(&self.u),
            phi: pick(&self.phi),
            h: pick(&self.h),
            g: pick(&self.g),
            big_g: pick(&self.big_g),
            params: self.params,
            sign: self.sign,
            max_mean_ratio: self.max_mean_ratio,
        })
    }

    /// Index of the output time closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

fn tabulate<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count).into_par_iter().map(f).collect()
}

/// Solves the hierarchy: KdV for `n¹`, then the linearized equations for
/// `n², n³, n⁴` with forcings tabulated at every step and interpolated in time.
/// Initial data are projected onto the dealiased band; `u`, `φ` follow from
/// the closures.
pub fn build_profiles(
    n_init: &[GridField; PROFILES],
    tau: f64,
    params: &PhysParams,
    dt: f64,
    out_every: usize,
    opts: &HierarchyOptions,
) -> Result<ProfileSet> {
    let grid = n_init[0].grid().clone();
    if n_init.iter().any(|f| !f.same_grid(&n_init[0])) {
        return Err(LabError::Shape("initial profiles live on different grids".into()));
    }
    let init: Vec<GridField> = n_init.iter().map(spectral::dealias).collect();
    let sign = arbitrate_g1_sign(&init[0], params, opts.resid_tol, opts.mean_tol)?;
    log::info!("{}", sign.describe());

    let floor = opts.noise_floor;
    let clean = |f: &GridField| spectral::noise_filter(f, floor);
    let n1 = solve_kdv(&init[0], tau, params, dt, 1)?;
    let step_times = n1.times.clone();
    let steps = step_times.len();
    let mut dense: Vec<Vec<GridField>> = vec![n1.states.iter().map(clean).collect()];
    let mut dense_forcings: Vec<Vec<Forcings<GridField>>> = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 2..=PROFILES {
        let depth = required_depth(k - 1, true);
        let cascades = tabulate(steps, |i| {
            let lower: Vec<GridField> = dense.iter().map(|s| s[i].clone()).collect();
            let c = profile_jets(&lower, params, depth, opts.mean_tol, true)?;
            let f = &c.forcings[k - 2];
            let forcing = Forcings { h: clean(&f.h.value()?), g: clean(&f.g.value()?), big_g: clean(&f.big_g.value()?) };
            Ok((forcing, c.max_mean_ratio))
        })?;
        let mut fs = Vec::with_capacity(steps);
        for (f, w) in cascades {
            worst = worst.max(w);
            fs.push(f);
        }
        let table = TabulatedForcing { times: step_times.clone(), values: fs.iter().map(|f| f.big_g.clone()).collect() };
        let h_eff = if steps > 1 { step_times[1] - step_times[0] } else { dt };
        let traj = solve_linearized_kdv(k, &init[k - 1], &table, &n1, tau, params, h_eff, 1)?;
        if traj.len() != steps {
            return Err(LabError::Hierarchy(format!(
                "stage {k} produced {} samples, expected {steps}",
                traj.len()
            )));
        }
        dense.push(traj.states.iter().map(clean).collect());
        dense_forcings.push(fs);
    }
    log::debug!("largest antiderivative mean ratio {worst:.3e}");

    let out_idx: Vec<usize> = (0..steps).step_by(out_every.max(1)).collect();
    if *out_idx.last().unwrap() != steps - 1 {
        return Err(LabError::Parameter(format!(
            "out_every = {out_every} does not divide the {} steps to tau",
            steps - 1
        )));
    }
    let times = out_idx.iter().map(|&i| step_times[i]).collect();
    let v = params.v();
    let te = params.te_over_e();
    let mut n = Vec::new();
    let mut u = Vec::new();
    let mut phi = Vec::new();
    for (k, series) in dense.iter().enumerate() {
        let nk: Vec<GridField> = out_idx.iter().map(|&i| series[i].clone()).collect();
        let (uk, pk): (Vec<GridField>, Vec<GridField>) = if k == 0 {
            nk.iter().map(|f| first_profile(f, params)).unzip()
        } else {
            let fs = &dense_forcings[k - 1];
            out_idx
                .iter()
                .zip(&nk)
                .map(|(&i, f)| (f.scale(v).add(&fs[i].g), f.add(&fs[i].h).scale(te)))
                .unzip()
        };
        n.push(nk);
        u.push(uk);
        phi.push(pk);
    }
    let pick = |sel: fn(&Forcings<GridField>) -> &GridField| -> Vec<Vec<GridField>> {
        dense_forcings.iter().map(|fs| out_idx.iter().map(|&i| sel(&fs[i]).clone()).collect()).collect()
    };
    let h = pick(|f| &f.h);
    let g = pick(|f| &f.g);
    let big_g = pick(|f| &f.big_g);
    let _ = grid;
    Ok(ProfileSet { times, n, u, phi, h, g, big_g, params: *params, sign, max_mean_ratio: worst })
}

/// Per-order residual norms of the expansion at one stored time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualCascade {
    pub t: f64,
    /// Relative L² norms of the mass/momentum/Poisson coefficients, orders 0..=4.
    pub mass: Vec<f64>,
    pub momentum: Vec<f64>,
    pub poisson: Vec<f64>,
}

impl ResidualCascade {
    pub fn max(&self) -> f64 {
        self.mass.iter().chain(&self.momentum).chain(&self.poisson).copied().fold(0.0, f64::max)
    }
}

/// Engine residuals of the four-profile expansion at output index `i`, with
/// time derivatives from the evolution equations (jets). Norms are relative
/// to the largest profile L² norm.
pub fn residual_cascade(set: &ProfileSet, i: usize, mean_tol: f64) -> Result<ResidualCascade> {
    let params = &set.params;
    let cascade = profile_jets(&set.densities_at(i), params, required_depth(PROFILES, false), mean_tol, false)?;
    let prof = &cascade.profiles;
    let res = ep_residual_series(prof, &JetTimeDerivatives(prof), params, PROFILES)?;
    let stored = set.at(i);
    let scale = stored
        .n
        .iter()
        .chain(&stored.u)
        .chain(&stored.phi)
        .map(spectral::l2_norm)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let norms = |s: &crate::series::Series<Jet>| -> Result<Vec<f64>> {
        (0..=PROFILES).map(|j| Ok(spectral::l2_norm(&s.coeff(j).value()?) / scale)).collect()
    };
    Ok(ResidualCascade { t: set.times[i], mass: norms(&res.mass)?, momentum: norms(&res.momentum)?, poisson: norms(&res.poisson)? })
}
