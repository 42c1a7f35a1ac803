//! Experiment configuration. Every tolerance and step-size rule used by the
//! drivers is read from here, with the library defaults filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::euler_poisson::{EpOptions, PoissonOptions, DEFAULT_CFL_SAFETY};
use crate::hierarchy::{HierarchyOptions, DEFAULT_NOISE_FLOOR};
use crate::params::{make_params, PhysParams, Preset};
use crate::remainder::TRANSCRIPTION_TOL;
use crate::spectral::DEFAULT_MEAN_TOL;

/// Variable that overrides the output directory (below `--out`).
pub const OUT_DIR_ENV: &str = "KDVLAB_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetChoice {
    Warm,
    Cold,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomParams {
    pub e: f64,
    pub mass: f64,
    pub t_i: f64,
    pub t_e: f64,
    pub n_bar: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_points: 512, length: 50.0 }
    }
}

/// Initial density of the first profile; the higher profiles start at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialData {
    Soliton {
        #[serde(default = "one")]
        speed: f64,
        #[serde(default)]
        center: f64,
    },
    Zero,
    /// First frame, first field of a trajectory file.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Soliton { speed: 1.0, center: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    /// Step of the KdV and linearized KdV solvers.
    pub kdv_dt: f64,
    /// Spacing of stored outputs; a multiple of `kdv_dt`.
    pub output_interval: f64,
    pub cfl_safety: f64,
    /// Fraction of the CFL limit actually used when no override is given.
    pub cfl_margin: f64,
    /// Fixed Euler-Poisson step; must divide `output_interval`.
    pub ep_dt: Option<f64>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { kdv_dt: 2e-3, output_interval: 0.02, cfl_safety: DEFAULT_CFL_SAFETY, cfl_margin: 1.0, ep_dt: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub resid_tol: f64,
    /// Absolute Newton tolerance; `None` means `1e-12 · 4πe n̄`.
    pub poisson_tol: Option<f64>,
    pub max_newton: usize,
    pub mean_tol: f64,
    pub noise_floor: f64,
    pub transcription_tol: f64,
    /// Bound asserted on both elliptic-equivalence ratios.
    pub lemma_c1: f64,
    /// KdV shape-error threshold for `kdv --check`.
    pub shape_tol: f64,
    /// Relative drift of the KdV invariants for `kdv --check`.
    pub drift_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            resid_tol: 1e-8,
            poisson_tol: None,
            max_newton: 50,
            mean_tol: DEFAULT_MEAN_TOL,
            noise_floor: DEFAULT_NOISE_FLOOR,
            transcription_tol: TRANSCRIPTION_TOL,
            lemma_c1: 4.0,
            shape_tol: 1e-6,
            drift_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_preset")]
    pub preset: PresetChoice,
    #[serde(default)]
    pub params: Option<CustomParams>,
    #[serde(default)]
    pub grid: GridConfig,
    pub tau: f64,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_preset() -> PresetChoice {
    PresetChoice::Cold
}

fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Defaults with the given preset and horizon.
    pub fn new(preset: Preset, tau: f64) -> Self {
        ExperimentConfig {
            preset: match preset {
                Preset::Warm => PresetChoice::Warm,
                Preset::Cold => PresetChoice::Cold,
            },
            params: None,
            grid: GridConfig::default(),
            tau,
            eps: default_eps(),
            initial: InitialData::default(),
            time: TimeConfig::default(),
            tolerances: Tolerances::default(),
            out_dir: default_out(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.eps.is_empty() {
            return bad("eps list is empty".into());
        }
        if self.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad(format!("eps values must be positive: {:?}", self.eps));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("eps list must be strictly decreasing: {:?}", self.eps));
        }
        if self.grid.n_points < 8 || !self.grid.n_points.is_multiple_of(2) {
            return bad(format!("n_points must be even and at least 8, got {}", self.grid.n_points));
        }
        if !(self.grid.length.is_finite() && self.grid.length > 0.0) {
            return bad(format!("length must be positive, got {}", self.grid.length));
        }
        let t = &self.time;
        for (name, v) in [("kdv_dt", t.kdv_dt), ("output_interval", t.output_interval), ("cfl_safety", t.cfl_safety), ("cfl_margin", t.cfl_margin)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.kdv_out_every()?;
        self.output_count()?;
        if let Some(dt) = t.ep_dt {
            if !(dt.is_finite() && dt > 0.0) || whole(t.output_interval / dt).is_none() {
                return bad(format!("ep_dt = {dt} must be positive and divide output_interval"));
            }
        }
        if matches!(self.preset, PresetChoice::Custom) != self.params.is_some() {
            return bad("[params] is required for preset = \"custom\" and not allowed otherwise".into());
        }
        self.params()?;
        let tol = &self.tolerances;
        if tol.max_newton == 0 {
            return bad("max_newton must be at least 1".into());
        }
        for (name, v) in [("resid_tol", tol.resid_tol), ("mean_tol", tol.mean_tol), ("transcription_tol", tol.transcription_tol), ("lemma_c1", tol.lemma_c1)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(tol.noise_floor >= 0.0 && tol.noise_floor < 1e-6) {
            return bad(format!("noise_floor must lie in [0, 1e-6), got {}", tol.noise_floor));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<PhysParams> {
        match (&self.preset, &self.params) {
            (PresetChoice::Warm, _) => Ok(Preset::Warm.params()),
            (PresetChoice::Cold, _) => Ok(Preset::Cold.params()),
            (PresetChoice::Custom, Some(p)) => {
                make_params(p.e, p.mass, p.t_i, p.t_e, p.n_bar).map_err(|e| LabError::Config(e.to_string()))
            }
            (PresetChoice::Custom, None) => Err(LabError::Config("custom preset without [params]".into())),
        }
    }

    /// KdV steps per stored output.
    pub fn kdv_out_every(&self) -> Result<usize> {
        whole(self.time.output_interval / self.time.kdv_dt).ok_or_else(|| {
            LabError::Config(format!(
                "output_interval {} is not a multiple of kdv_dt {}",
                self.time.output_interval, self.time.kdv_dt
            ))
        })
    }

    /// Number of output intervals in `[0, tau]`.
    pub fn output_count(&self) -> Result<usize> {
        whole(self.tau / self.time.output_interval).ok_or_else(|| {
            LabError::Config(format!("tau {} is not a multiple of output_interval {}", self.tau, self.time.output_interval))
        })
    }

    pub fn hierarchy_options(&self) -> HierarchyOptions {
        HierarchyOptions {
            mean_tol: self.tolerances.mean_tol,
            resid_tol: self.tolerances.resid_tol,
            noise_floor: self.tolerances.noise_floor,
        }
    }

    pub fn ep_options(&self, params: &PhysParams) -> EpOptions {
        let mut poisson = PoissonOptions::for_params(params);
        if let Some(tol) = self.tolerances.poisson_tol {
            poisson.tol = tol;
        }
        poisson.max_newton = self.tolerances.max_newton;
        EpOptions { poisson, cfl_safety: self.time.cfl_safety }
    }

    /// Output directory: `--out` wins, then the environment, then the file.
    pub fn resolve_out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }
}

/// `Some(n)` when `x` is within 1e-9 relative of a positive integer.
fn whole(x: f64) -> Option<usize> {
    let r = x.round();
    (r >= 1.0 && (x - r).abs() <= 1e-9 * r).then_some(r as usize)
}

/// Parses a `--eps` override such as `0.2,0.1,0.05`.
pub fn parse_eps_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad eps value '{}'", t.trim()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml("tau = 2.0").unwrap();
        assert_eq!(cfg.preset, PresetChoice::Cold);
        assert_eq!(cfg.eps, vec![0.2, 0.1, 0.05]);
        assert_eq!(cfg.kdv_out_every().unwrap(), 10);
        assert_eq!(cfg.output_count().unwrap(), 100);
        assert_eq!(cfg.tolerances.max_newton, 50);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::new(Preset::Warm, 1.0);
        cfg.initial = InitialData::Soliton { speed: 0.5, center: -3.0 };
        cfg.time.ep_dt = Some(1e-3);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "tau = -1.0",
            "tau = 1.0\neps = []",
            "tau = 1.0\neps = [0.1, 0.2]",
            "tau = 1.0\nbogus = 3",
            "tau = 1.0\n[time]\nkdv_dt = 0.003",
            "tau = 1.0\npreset = \"custom\"",
            "tau = 1.0\npreset = \"custom\"\n[params]\ne = 1.0\nmass = 1.0\nt_i = 0.0\nt_e = 1.0\nn_bar = -1.0",
            "tau = 1.0\n[grid]\nn_points = 7\nlength = 10.0",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(LabError::Config(_))), "{text}");
        }
    }

    #[test]
    fn custom_params_are_used() {
        let text = "tau = 1.0\npreset = \"custom\"\n[params]\ne = 1.0\nmass = 2.0\nt_i = 0.0\nt_e = 2.0\nn_bar = 0.1";
        let p = ExperimentConfig::from_toml(text).unwrap().params().unwrap();
        assert_eq!(p.v(), 1.0);
    }

    #[test]
    fn eps_override_parsing() {
        assert_eq!(parse_eps_list("0.2, 0.1").unwrap(), vec![0.2, 0.1]);
        assert!(parse_eps_list("0.2,x").is_err());
    }
}
