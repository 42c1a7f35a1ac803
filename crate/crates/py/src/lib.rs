//! Python bindings: thin wrappers over the solvers and the experiment drivers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kdvlab::harness::{profiles_for, run_sweep, ExperimentConfig, Trajectory};
use kdvlab::kdv::{soliton, solve_kdv};
use kdvlab::remainder::{symbol_eigen, SymbolPoint};
use kdvlab::{Grid, GridField, LabError, PhysParams, Preset};

fn to_py(e: LabError) -> PyErr {
    match e {
        LabError::Config(_) | LabError::Parameter(_) | LabError::Shape(_) | LabError::Precondition(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn preset(name: &str) -> PyResult<PhysParams> {
    name.parse::<Preset>().map(Preset::params).map_err(to_py)
}

/// Frame speed and KdV dispersion `(V, δ)` of a preset.
#[pyfunction]
fn constants(name: &str) -> PyResult<(f64, f64)> {
    let p = preset(name)?;
    Ok((p.v(), p.delta()))
}

/// Determinant of the order-ε coefficient matrix at a trial speed.
#[pyfunction]
fn acoustic_determinant(v: f64, name: &str) -> PyResult<f64> {
    Ok(kdvlab::acoustic_determinant(v, &preset(name)?))
}

#[pyfunction]
#[pyo3(signature = (n_points, length, name, speed=1.0, center=0.0, t=0.0))]
fn soliton_profile(n_points: usize, length: f64, name: &str, speed: f64, center: f64, t: f64) -> PyResult<Vec<f64>> {
    let g = Grid::new(n_points, length).map_err(to_py)?;
    Ok(soliton(&g, &preset(name)?, speed, center, t).values().to_vec())
}

/// KdV solution from `n0`; returns `(times, states)`.
#[pyfunction]
#[pyo3(signature = (n0, length, name, tau, dt, out_every=1))]
fn kdv(n0: Vec<f64>, length: f64, name: &str, tau: f64, dt: f64, out_every: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let g = Grid::new(n0.len(), length).map_err(to_py)?;
    let f = GridField::new(&g, n0).map_err(to_py)?;
    let params = preset(name)?;
    let traj = solve_kdv(&f, tau, &params, dt, out_every).map_err(to_py)?;
    Ok((traj.times, traj.states.iter().map(|s| s.values().to_vec()).collect()))
}

/// Eigenvalues `(λ+, λ-)` and the reconstruction error of the remainder symbol.
#[pyfunction]
fn symbol(n_r: f64, u_r: f64, phi1: f64, xi: f64, eps: f64) -> PyResult<(f64, f64, f64)> {
    let p = preset("cold")?;
    let e = symbol_eigen(SymbolPoint { n_r, u_r, phi1 }, xi, eps, &p).map_err(to_py)?;
    Ok((e.lambda_plus.im, e.lambda_minus.im, e.reconstruction_error))
}

/// Runs an ε-sweep from TOML text; one `(eps, status, sup_h2, first_profile_error)` per row.
#[pyfunction]
fn sweep(py: Python<'_>, config: &str) -> PyResult<Vec<(f64, String, f64, f64)>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(to_py)?;
    let (report, _) = py
        .detach(|| profiles_for(&cfg).map(|set| run_sweep(&cfg, &set)))
        .map_err(to_py)?;
    Ok(report.rows.into_iter().map(|r| (r.eps, r.status, r.sup_h2, r.first_profile_error)).collect())
}

/// Reads a trajectory file; returns `(fields, times, frames)` with
/// `frames[i][j]` the values of field `j` at `times[i]`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn read_trajectory(path: PathBuf) -> PyResult<(Vec<String>, Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let t = Trajectory::read(&path).map_err(to_py)?;
    let frames = t.frames.iter().map(|fr| fr.iter().map(|f| f.values().to_vec()).collect()).collect();
    Ok((t.fields, t.times, frames))
}

#[pymodule]
fn kdvlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(acoustic_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(soliton_profile, m)?)?;
    m.add_function(wrap_pyfunction!(kdv, m)?)?;
    m.add_function(wrap_pyfunction!(symbol, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(read_trajectory, m)?)?;
    Ok(())
}
