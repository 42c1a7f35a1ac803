//! Subcommand drivers. Each writes its files under the output directory and
//! returns a summary the caller can print or check.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{observed_orders, SweepChecks};
use super::config::{ExperimentConfig, InitialData};
use super::store::{fmt, read_csv, write_csv, Trajectory};
use crate::error::{LabError, Result};
use crate::euler_poisson::{ep_solve, plan_step, EpState, EpTrajectory};
use crate::grid::{Grid, GridField};
use crate::hierarchy::{build_profiles, residual_cascade, ProfileSet, PROFILES};
use crate::kdv::{kdv_invariants, soliton, solve_kdv};
use crate::params::PhysParams;
use crate::remainder::{
    assemble_expansion, extract_remainder, lemma31_check, norm_report, remainder_system_residual, TimeDerivative,
};
use crate::spectral::{self, sobolev_norm};

/// First-profile density at t = 0 on the configured grid.
pub fn initial_density(cfg: &ExperimentConfig, grid: &std::sync::Arc<Grid>, params: &PhysParams) -> Result<GridField> {
    match &cfg.initial {
        InitialData::Soliton { speed, center } => {
            if !(speed.is_finite() && *speed > 0.0) {
                return Err(LabError::Config(format!("soliton speed must be positive, got {speed}")));
            }
            Ok(soliton(grid, params, *speed, *center, 0.0))
        }
        InitialData::Zero => Ok(GridField::zeros(grid)),
        InitialData::File { path } => {
            let t = Trajectory::read(path)?;
            let g = t.grid();
            if g.n_points() != grid.n_points() || g.length() != grid.length() {
                return Err(LabError::Config(format!(
                    "{} holds a {}-point grid of length {}, config asks for {} and {}",
                    path.display(),
                    g.n_points(),
                    g.length(),
                    grid.n_points(),
                    grid.length()
                )));
            }
            Ok(GridField::new(grid, t.frames[0][0].values().to_vec())?)
        }
    }
}

fn grid_of(cfg: &ExperimentConfig) -> Result<std::sync::Arc<Grid>> {
    Grid::new(cfg.grid.n_points, cfg.grid.length).map_err(|e| LabError::Config(e.to_string()))
}

fn prepare(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}")
}

// ---------------------------------------------------------------------------
// kdv

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KdvSummary {
    /// `‖n(τ) − soliton(τ)‖`, soliton initial data only.
    pub shape_error: Option<f64>,
    pub mass_drift: f64,
    pub momentum_drift: f64,
    pub energy_drift: f64,
}

impl KdvSummary {
    pub fn failures(&self, cfg: &ExperimentConfig) -> Vec<String> {
        let tol = &cfg.tolerances;
        let mut out = Vec::new();
        if let Some(e) = self.shape_error {
            if !(e <= tol.shape_tol) {
                out.push(format!("shape error {e:.3e} > {:.1e}", tol.shape_tol));
            }
        }
        for (name, d) in [("mass", self.mass_drift), ("momentum", self.momentum_drift), ("energy", self.energy_drift)] {
            if !(d <= tol.drift_tol) {
                out.push(format!("{name} drift {d:.3e} > {:.1e}", tol.drift_tol));
            }
        }
        out
    }
}

fn drift(a: f64, b: f64) -> f64 {
    let d = (b - a).abs();
    if a == 0.0 {
        d
    } else {
        d / a.abs()
    }
}

pub fn cmd_kdv(cfg: &ExperimentConfig, out: &Path) -> Result<KdvSummary> {
    let params = cfg.params()?;
    let grid = grid_of(cfg)?;
    let n0 = spectral::dealias(&initial_density(cfg, &grid, &params)?);
    let traj = solve_kdv(&n0, cfg.tau, &params, cfg.time.kdv_dt, cfg.kdv_out_every()?)?;
    let exact = |t: f64| match &cfg.initial {
        InitialData::Soliton { speed, center } => Some(soliton(&grid, &params, *speed, *center, t)),
        _ => None,
    };
    let first = kdv_invariants(&traj.states[0], &params);
    let mut rows = Vec::with_capacity(traj.len());
    let mut summary = KdvSummary { shape_error: None, mass_drift: 0.0, momentum_drift: 0.0, energy_drift: 0.0 };
    for (t, n) in traj.times.iter().zip(&traj.states) {
        let inv = kdv_invariants(n, &params);
        let shape = exact(*t).map(|e| spectral::l2_norm(&n.sub(&e)));
        let d = [drift(first.mass, inv.mass), drift(first.momentum, inv.momentum), drift(first.energy, inv.energy)];
        summary.mass_drift = summary.mass_drift.max(d[0]);
        summary.momentum_drift = summary.momentum_drift.max(d[1]);
        summary.energy_drift = summary.energy_drift.max(d[2]);
        summary.shape_error = shape;
        rows.push(vec![
            fmt(*t),
            fmt(inv.mass),
            fmt(inv.momentum),
            fmt(inv.energy),
            fmt(d[0]),
            fmt(d[1]),
            fmt(d[2]),
            shape.map(fmt).unwrap_or_default(),
        ]);
    }
    prepare(out)?;
    let header = ["t", "mass", "momentum", "energy", "mass_drift", "momentum_drift", "energy_drift", "shape_error"];
    write_csv(&out.join("kdv_invariants.csv"), &header, &rows)?;
    let frames = traj.states.iter().map(|s| vec![s.clone()]).collect();
    Trajectory::new(&["n"], traj.times.clone(), frames)?.write(&out.join("kdv.traj"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// profiles

/// Builds the profile set described by `cfg`.
pub fn profiles_for(cfg: &ExperimentConfig) -> Result<ProfileSet> {
    let params = cfg.params()?;
    let grid = grid_of(cfg)?;
    let n1 = initial_density(cfg, &grid, &params)?;
    let z = GridField::zeros(&grid);
    let init = [n1, z.clone(), z.clone(), z];
    build_profiles(&init, cfg.tau, &params, cfg.time.kdv_dt, cfg.kdv_out_every()?, &cfg.hierarchy_options())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfilesSummary {
    /// Largest relative cascade coefficient over orders 1..=4 and all times.
    pub max_cascade: f64,
    pub sign: i8,
    pub sign_line: String,
    pub nonzero: bool,
}

impl ProfilesSummary {
    pub fn failures(&self, cfg: &ExperimentConfig) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.max_cascade <= cfg.tolerances.resid_tol) {
            out.push(format!("residual cascade {:.3e} > {:.1e}", self.max_cascade, cfg.tolerances.resid_tol));
        }
        if self.nonzero && self.sign == 0 {
            out.push("no unique sign for g(1)".into());
        }
        out
    }
}

pub fn write_profiles(set: &ProfileSet, out: &Path) -> Result<()> {
    let mut names = Vec::new();
    for family in ["n", "u", "phi"] {
        for k in 1..=PROFILES {
            names.push(format!("{family}{k}"));
        }
    }
    let frames = (0..set.len())
        .map(|i| set.n.iter().chain(&set.u).chain(&set.phi).map(|s| s[i].clone()).collect())
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Trajectory::new(&refs, set.times.clone(), frames)?.write(&out.join("profiles.traj"))
}

pub fn cmd_profiles(cfg: &ExperimentConfig, out: &Path) -> Result<ProfilesSummary> {
    let set = profiles_for(cfg)?;
    let cascades = (0..set.len())
        .into_par_iter()
        .map(|i| residual_cascade(&set, i, cfg.tolerances.mean_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for c in &cascades {
        for j in 1..=PROFILES {
            worst = worst.max(c.mass[j]).max(c.momentum[j]).max(c.poisson[j]);
            rows.push(vec![fmt(c.t), j.to_string(), fmt(c.mass[j]), fmt(c.momentum[j]), fmt(c.poisson[j])]);
        }
    }
    prepare(out)?;
    write_csv(&out.join("cascade.csv"), &["t", "order", "mass", "momentum", "poisson"], &rows)?;
    write_profiles(&set, out)?;
    Ok(ProfilesSummary {
        max_cascade: worst,
        sign: set.sign.selected,
        sign_line: set.sign.describe(),
        nonzero: set.n[0][0].max_abs() > 0.0,
    })
}

// ---------------------------------------------------------------------------
// ep

/// Well-prepared initial state: expansion for `n`, `u` and a solved potential.
pub fn prepared_state(set: &ProfileSet, eps: f64, cfg: &ExperimentConfig) -> Result<EpState> {
    let params = set.params;
    let s = assemble_expansion(&set.at(0), None, eps, set.times[0], &params)?;
    let opts = cfg.ep_options(&params);
    EpState::from_density_velocity(s.n, s.u, s.t, eps, &params, Some(&s.phi), &opts.poisson)
}

/// EP solve to `tau` with outputs on the configured output grid.
pub fn run_ep(state0: &EpState, cfg: &ExperimentConfig, params: &PhysParams) -> Result<EpTrajectory> {
    let opts = cfg.ep_options(params);
    let dt_out = cfg.time.output_interval;
    let (dt, per) = match cfg.time.ep_dt {
        Some(dt) => (dt, (dt_out / dt).round() as usize),
        None => plan_step(state0, params, opts.cfl_safety, dt_out, cfg.time.cfl_margin),
    };
    ep_solve(state0, cfg.tau, dt, per, params, &opts)
}

/// Outcome of one ε: `Ok` or the failure reason.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpRun {
    pub eps: f64,
    pub status: String,
    pub dt: f64,
    pub newton_iterations: usize,
    pub max_poisson_residual: f64,
}

fn isolated<T>(f: impl FnOnce() -> Result<T>) -> Result<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(LabError::Numeric(format!("worker panicked: {msg}")))
        }
    }
}

fn status_of<T>(r: &Result<T>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => e.to_string(),
    }
}

pub fn cmd_ep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<EpRun>> {
    let params = cfg.params()?;
    // only t = 0 of the hierarchy is needed
    let mut short = cfg.clone();
    short.tau = cfg.time.output_interval;
    let set = profiles_for(&short)?;
    let results: Vec<(f64, Result<EpTrajectory>)> = cfg
        .eps
        .par_iter()
        .map(|&eps| (eps, isolated(|| run_ep(&prepared_state(&set, eps, cfg)?, cfg, &params))))
        .collect();
    prepare(out)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (eps, r) in &results {
        let mut run = EpRun { eps: *eps, status: status_of(r), dt: f64::NAN, newton_iterations: 0, max_poisson_residual: f64::NAN };
        if let Ok(traj) = r {
            run.dt = traj.dt;
            run.newton_iterations = traj.newton_iterations;
            run.max_poisson_residual = traj.max_poisson_residual;
            let frames = traj.states.iter().map(|s| vec![s.n.clone(), s.u.clone(), s.phi.clone()]).collect();
            Trajectory::new(&["n", "u", "phi"], traj.times(), frames)?.write(&out.join(format!("ep_eps{}.traj", eps_tag(*eps))))?;
        }
        rows.push(vec![
            fmt(run.eps),
            run.status.clone(),
            fmt(run.dt),
            run.newton_iterations.to_string(),
            fmt(run.max_poisson_residual),
        ]);
        runs.push(run);
    }
    write_csv(&out.join("ep_runs.csv"), &["eps", "status", "dt", "newton_iterations", "max_poisson_residual"], &rows)?;
    Ok(runs)
}

// ---------------------------------------------------------------------------
// sweep

/// One ε of a sweep. Sup-norms are taken over all output times; elliptic
/// ratios at `t = τ` (early on `n_R` is still near zero while `φ_R` already
/// carries the profile Poisson defect, so the ratios say nothing there).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub status: String,
    pub sup_h2: f64,
    pub sup_eps_norm: f64,
    pub sup_full: f64,
    pub first_profile_error: f64,
    /// `[α][0]` = ratio_low, `[α][1]` = ratio_high at `t = τ`.
    pub lemma: [[f64; 2]; 3],
    pub residual_mass: f64,
    pub residual_momentum: f64,
    pub residual_poisson: f64,
    pub r3_discrepancy: f64,
    pub transcription: String,
    pub max_poisson_residual: f64,
    pub dt: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

impl SweepRow {
    fn failed(eps: f64, reason: String) -> Self {
        SweepRow {
            eps,
            status: reason,
            sup_h2: f64::NAN,
            sup_eps_norm: f64::NAN,
            sup_full: f64::NAN,
            first_profile_error: f64::NAN,
            lemma: [[f64::NAN; 2]; 3],
            residual_mass: f64::NAN,
            residual_momentum: f64::NAN,
            residual_poisson: f64::NAN,
            r3_discrepancy: f64::NAN,
            transcription: String::new(),
            max_poisson_residual: f64::NAN,
            dt: f64::NAN,
            wall_time: 0.0,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub t_i: f64,
    pub rows: Vec<SweepRow>,
    /// Observed order of the first-profile error between consecutive rows.
    pub orders: Vec<f64>,
}

pub const SWEEP_HEADER: [&str; 20] = [
    "eps",
    "status",
    "sup_h2",
    "sup_eps_norm",
    "sup_full",
    "first_profile_error",
    "first_profile_order",
    "lemma_low_0",
    "lemma_high_0",
    "lemma_low_1",
    "lemma_high_1",
    "lemma_low_2",
    "lemma_high_2",
    "residual_mass",
    "residual_momentum",
    "residual_poisson",
    "r3_discrepancy",
    "transcription",
    "max_poisson_residual",
    "dt",
];

const NORMS_HEADER: [&str; 15] = [
    "t", "h2_triple", "eps_norm", "u_h2", "phi_h2", "eps_u3", "eps_phi3", "eps2_phi4", "full", "lemma_low_0",
    "lemma_high_0", "lemma_low_1", "lemma_high_1", "lemma_low_2", "lemma_high_2",
];

struct RowData {
    row: SweepRow,
    norms: Vec<Vec<String>>,
}

fn sweep_row(set: &ProfileSet, eps: f64, cfg: &ExperimentConfig) -> Result<RowData> {
    let start = Instant::now();
    let params = set.params;
    let traj = run_ep(&prepared_state(set, eps, cfg)?, cfg, &params)?;
    if traj.states.len() != set.len() {
        return Err(LabError::Shape(format!("{} EP outputs against {} profile times", traj.states.len(), set.len())));
    }
    let rems = traj
        .states
        .par_iter()
        .enumerate()
        .map(|(i, s)| extract_remainder(s, &set.at(i), &params))
        .collect::<Result<Vec<_>>>()?;
    let mut row = SweepRow::failed(eps, "ok".into());
    row.sup_h2 = 0.0;
    row.sup_eps_norm = 0.0;
    row.sup_full = 0.0;
    let mut norms = Vec::with_capacity(rems.len());
    for rem in &rems {
        if !rem.is_finite() {
            return Err(LabError::Numeric(format!("remainder at t = {}", rem.t)));
        }
        let r = norm_report(rem);
        row.sup_h2 = row.sup_h2.max(r.h2_triple);
        row.sup_eps_norm = row.sup_eps_norm.max(r.eps_norm);
        row.sup_full = row.sup_full.max(r.full_quantity);
        let mut cells = vec![fmt(rem.t), fmt(r.h2_triple), fmt(r.eps_norm)];
        cells.extend(r.components.iter().map(|c| fmt(*c)));
        cells.push(fmt(r.full_quantity));
        for alpha in 0..3 {
            let l = lemma31_check(rem, alpha)?;
            row.lemma[alpha] = [l.ratio_low, l.ratio_high];
            cells.push(fmt(l.ratio_low));
            cells.push(fmt(l.ratio_high));
        }
        norms.push(cells);
    }
    let last = traj.final_state();
    let scaled = last.n.map(|v| (v / params.n_bar - 1.0) / eps);
    row.first_profile_error = sobolev_norm(&scaled.sub(&set.n[0][set.len() - 1]), 2);
    let sys = remainder_system_residual(&traj.states, set, cfg.tolerances.mean_tol, TimeDerivative::Remainder)?;
    let sup = |f: fn(&crate::remainder::SystemResidualRow) -> f64| sys.rows.iter().map(f).fold(0.0, f64::max);
    row.residual_mass = sup(|r| r.mass);
    row.residual_momentum = sup(|r| r.momentum);
    row.residual_poisson = sup(|r| r.poisson);
    row.r3_discrepancy = sys.r3_discrepancy;
    row.transcription = sys.discrepancies.disagreements(cfg.tolerances.transcription_tol).join("; ");
    row.max_poisson_residual = traj.max_poisson_residual;
    row.dt = traj.dt;
    row.wall_time = start.elapsed().as_secs_f64();
    Ok(RowData { row, norms })
}

/// Runs every ε of the config against one profile set. A failing row is
/// recorded with its reason and does not stop the others.
pub fn run_sweep(cfg: &ExperimentConfig, set: &ProfileSet) -> (SweepReport, Vec<Vec<Vec<String>>>) {
    let results: Vec<(f64, Result<RowData>)> =
        cfg.eps.par_iter().map(|&eps| (eps, isolated(|| sweep_row(set, eps, cfg)))).collect();
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    for (eps, r) in results {
        match r {
            Ok(d) => {
                rows.push(d.row);
                tables.push(d.norms);
            }
            Err(e) => {
                log::warn!("sweep row eps = {eps} failed: {e}");
                rows.push(SweepRow::failed(eps, e.to_string()));
                tables.push(Vec::new());
            }
        }
    }
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.first_profile_error).collect();
    let orders = observed_orders(&eps, &errs);
    (SweepReport { t_i: set.params.t_i, rows, orders }, tables)
}

pub fn sweep_csv_rows(report: &SweepReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let order = if i == 0 { String::new() } else { fmt(report.orders[i - 1]) };
            let mut cells = vec![
                fmt(r.eps),
                r.status.clone(),
                fmt(r.sup_h2),
                fmt(r.sup_eps_norm),
                fmt(r.sup_full),
                fmt(r.first_profile_error),
                order,
            ];
            for l in &r.lemma {
                cells.push(fmt(l[0]));
                cells.push(fmt(l[1]));
            }
            cells.extend([
                fmt(r.residual_mass),
                fmt(r.residual_momentum),
                fmt(r.residual_poisson),
                fmt(r.r3_discrepancy),
                r.transcription.clone(),
                fmt(r.max_poisson_residual),
                fmt(r.dt),
            ]);
            cells
        })
        .collect()
}

/// Sweep with files: `sweep.csv`, `norms_eps<ε>.csv`, `timing.csv` and
/// `summary.txt`. Wall times go to their own file so the other outputs are
/// reproducible bit for bit.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepReport> {
    let set = profiles_for(cfg)?;
    let (report, tables) = run_sweep(cfg, &set);
    prepare(out)?;
    write_csv(&out.join("sweep.csv"), &SWEEP_HEADER, &sweep_csv_rows(&report))?;
    for (row, table) in report.rows.iter().zip(&tables) {
        if row.ok() {
            write_csv(&out.join(format!("norms_eps{}.csv", eps_tag(row.eps))), &NORMS_HEADER, table)?;
        }
    }
    let timing: Vec<Vec<String>> = report.rows.iter().map(|r| vec![fmt(r.eps), format!("{:.3}", r.wall_time)]).collect();
    write_csv(&out.join("timing.csv"), &["eps", "wall_seconds"], &timing)?;
    std::fs::write(out.join("params.txt"), format!("t_i {:?}\n", report.t_i))?;
    std::fs::write(out.join("summary.txt"), summary_text(&report, cfg.tolerances.lemma_c1))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report

fn parse_cell(s: &str) -> f64 {
    if s.is_empty() {
        f64::NAN
    } else {
        s.parse().unwrap_or(f64::NAN)
    }
}

/// Rebuilds a [`SweepReport`] from `sweep.csv` and `params.txt` in `dir`.
pub fn load_sweep(dir: &Path) -> Result<SweepReport> {
    let path: PathBuf = dir.join("sweep.csv");
    let (header, rows) = read_csv(&path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    if header != SWEEP_HEADER {
        return Err(LabError::Config(format!("{} has an unexpected header", path.display())));
    }
    let params = std::fs::read_to_string(dir.join("params.txt")).unwrap_or_default();
    let t_i = params
        .lines()
        .find_map(|l| l.strip_prefix("t_i ").map(parse_cell))
        .ok_or_else(|| LabError::Config(format!("{} lacks t_i", dir.join("params.txt").display())))?;
    let rows: Vec<SweepRow> = rows
        .iter()
        .map(|c| {
            let f = |j: usize| parse_cell(&c[j]);
            SweepRow {
                eps: f(0),
                status: c[1].clone(),
                sup_h2: f(2),
                sup_eps_norm: f(3),
                sup_full: f(4),
                first_profile_error: f(5),
                lemma: [[f(7), f(8)], [f(9), f(10)], [f(11), f(12)]],
                residual_mass: f(13),
                residual_momentum: f(14),
                residual_poisson: f(15),
                r3_discrepancy: f(16),
                transcription: c[17].clone(),
                max_poisson_residual: f(18),
                dt: f(19),
                wall_time: f64::NAN,
            }
        })
        .collect();
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.first_profile_error).collect();
    Ok(SweepReport { t_i, orders: observed_orders(&eps, &errs), rows })
}

pub fn summary_text(report: &SweepReport, lemma_c1: f64) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:>8} {:>12} {:>12} {:>12} {:>12} {:>7}  status\n", "eps", "sup H2", "sup eps", "sup full", "1st prof", "order"));
    for (i, r) in report.rows.iter().enumerate() {
        let order = if i == 0 { String::from("-") } else { format!("{:.2}", report.orders[i - 1]) };
        s.push_str(&format!(
            "{:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>7}  {}\n",
            r.eps, r.sup_h2, r.sup_eps_norm, r.sup_full, r.first_profile_error, order, r.status
        ));
    }
    let checks = SweepChecks::evaluate(report, lemma_c1);
    s.push('\n');
    for line in checks.lines() {
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn cmd_report(dir: &Path, lemma_c1: f64) -> Result<(SweepReport, String)> {
    let report = load_sweep(dir)?;
    let text = summary_text(&report, lemma_c1);
    std::fs::write(dir.join("report.txt"), &text)?;
    Ok((report, text))
}
