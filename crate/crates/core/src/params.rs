//! Physical constants of the ion-acoustic Euler-Poisson system and the
//! quantities derived from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Physical constants plus the derived frame speed `V` and KdV dispersion `δ`.
///
/// Immutable after construction; `V` and `δ` are cached so every consumer
/// sees identical bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub e_charge: f64,
    pub mass_m: f64,
    pub t_i: f64,
    pub t_e: f64,
    pub n_bar: f64,
    v: f64,
    delta: f64,
}

/// Named parameter sets used by the experiments and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// e = M = T_i = T_e = 1, n̄ = 1/(4π e): V = √2.
    Warm,
    /// e = M = T_e = 1, T_i = 0, n̄ = 1/(4π e): V = 1.
    Cold,
}

impl Preset {
    pub fn params(self) -> PhysParams {
        match self {
            Preset::Warm => make_params(1.0, 1.0, 1.0, 1.0, 1.0 / (4.0 * PI)),
            Preset::Cold => make_params(1.0, 1.0, 0.0, 1.0, 1.0 / (4.0 * PI)),
        }
        .expect("built-in presets are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Warm => "warm",
            Preset::Cold => "cold",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warm" => Ok(Preset::Warm),
            "cold" => Ok(Preset::Cold),
            other => Err(LabError::Config(format!("unknown preset '{other}'"))),
        }
    }
}

/// Builds a parameter set, checking positivity (T_i may be exactly zero).
pub fn make_params(e: f64, mass: f64, t_i: f64, t_e: f64, n_bar: f64) -> Result<PhysParams> {
    let positive = [("e", e), ("M", mass), ("T_e", t_e), ("n_bar", n_bar)];
    for (name, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(LabError::Parameter(format!("{name} must be positive, got {value}")));
        }
    }
    if !(t_i.is_finite() && t_i >= 0.0) {
        return Err(LabError::Parameter(format!("T_i must be non-negative, got {t_i}")));
    }
    let v = ((t_i + t_e) / mass).sqrt();
    // δ = ½ T_e² / (4π n̄ e² M V), the coefficient left on ∂³n after the
    // order-ε² elimination.
    let delta = 0.5 * t_e * t_e / (4.0 * PI * n_bar * e * e * mass * v);
    Ok(PhysParams { e_charge: e, mass_m: mass, t_i, t_e, n_bar, v, delta })
}

impl PhysParams {
    /// Frame speed `V = sqrt((T_i + T_e)/M)`.
    pub fn v(&self) -> f64 {
        self.v
    }

    /// KdV dispersion coefficient `δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `κ = e/T_e`.
    pub fn kappa(&self) -> f64 {
        self.e_charge / self.t_e
    }

    /// `4π e n̄`, the Poisson coupling.
    pub fn poisson_coupling(&self) -> f64 {
        4.0 * PI * self.e_charge * self.n_bar
    }

    /// `T_i / M`.
    pub fn ion_pressure(&self) -> f64 {
        self.t_i / self.mass_m
    }

    /// `e / M`.
    pub fn charge_to_mass(&self) -> f64 {
        self.e_charge / self.mass_m
    }

    /// `T_e / e`, the potential per unit density perturbation at leading order.
    pub fn te_over_e(&self) -> f64 {
        self.t_e / self.e_charge
    }
}

/// Determinant of the 3×3 order-ε coefficient matrix
///
/// ```text
/// [ V      -1    0     ]
/// [ T_i/M  -V    e/M   ]
/// [ 1       0   -e/T_e ]
/// ```
///
/// evaluated at a trial frame speed, by cofactor expansion along the first row.
pub fn acoustic_determinant(v_trial: f64, params: &PhysParams) -> f64 {
    let m = [
        [v_trial, -1.0, 0.0],
        [params.ion_pressure(), -v_trial, params.charge_to_mass()],
        [1.0, 0.0, -params.kappa()],
    ];
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_speeds() {
        assert!((Preset::Warm.params().v() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Preset::Cold.params().v(), 1.0);
    }

    #[test]
    fn cold_dispersion_is_one_half() {
        assert!((Preset::Cold.params().delta() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn determinant_examples() {
        let warm = Preset::Warm.params();
        assert!(acoustic_determinant(2f64.sqrt(), &warm).abs() < 1e-15);
        assert!((acoustic_determinant(1.0, &warm) + 1.0).abs() < 1e-15);
        assert!(acoustic_determinant(warm.v(), &warm).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(make_params(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(make_params(1.0, -1.0, 1.0, 1.0, 1.0).is_err());
        assert!(make_params(1.0, 1.0, -0.1, 1.0, 1.0).is_err());
        assert!(make_params(1.0, 1.0, 0.0, 1.0, f64::NAN).is_err());
        assert!(make_params(1.0, 1.0, 0.0, 1.0, 1.0).is_ok());
    }
}
