//! Static parameters of the coupled storage/switch cavity system.
//!
//! Everything inside the crate is expressed in units of the photon hopping
//! rate κ (so κ = 1 and times are in κ⁻¹). Physical units only appear at the
//! boundary, through [`PhysicalParams`] and the named [`Preset`]s.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ratio Ω_s/|Δ_s| above which the storage atom is no longer treated as dispersive.
pub const DISPERSIVE_LIMIT: f64 = 0.1;

/// Ω_q/κ at or above which the switch is flagged as strongly coupled.
pub const STRONG_COUPLING_RATIO: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("singular operating point: cavity_detuning must be non-zero")]
    SingularOperatingPoint,
    #[error("invalid rate: {name} = {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("kappa is the unit of rate and must be exactly 1 (got {0})")]
    KappaNotUnit(f64),
    #[error("underdetermined: {0}")]
    Underdetermined(&'static str),
    #[error("unknown preset `{0}` (expected nv-diamond or circuit-qed)")]
    UnknownPreset(String),
}

fn one() -> f64 {
    1.0
}

/// Rates and detunings of the single-excitation Hamiltonian, in κ-units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Ω_s: storage atom ↔ storage mode coupling.
    pub omega_s: f64,
    /// Ω_q: switch atom ↔ switch mode coupling.
    pub omega_q: f64,
    /// κ: photon hopping rate. Always 1; not part of the JSON contract.
    #[serde(skip, default = "one")]
    pub kappa: f64,
    /// γ: switch cavity → waveguide decay rate.
    pub gamma: f64,
    /// δ_q: switch mode minus storage mode resonance.
    pub cavity_detuning: f64,
    /// Δ_s: baseline storage atom detuning.
    pub storage_detuning: f64,
    /// γ_q: transverse (non-waveguide) switch cavity decay.
    pub gamma_q: f64,
    /// γ_e: switch atom spontaneous emission.
    pub gamma_e: f64,
}

impl SystemParams {
    /// Parameter set of the reference gate simulation: κ = γ, Ω_s = 5κ,
    /// Ω_q = 20κ, δ_q = 10κ, Δ_s = 10³κ, no decoherence.
    pub fn reference() -> Self {
        Self {
            omega_s: 5.0,
            omega_q: 20.0,
            kappa: 1.0,
            gamma: 1.0,
            cavity_detuning: 10.0,
            storage_detuning: 1000.0,
            gamma_q: 0.0,
            gamma_e: 0.0,
        }
    }

    /// Same rates with γ_q = γ_e = 0.
    pub fn lossless(&self) -> Self {
        Self {
            gamma_q: 0.0,
            gamma_e: 0.0,
            ..*self
        }
    }

    fn rates(&self) -> [(&'static str, f64); 8] {
        [
            ("omega_s", self.omega_s),
            ("omega_q", self.omega_q),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("cavity_detuning", self.cavity_detuning),
            ("storage_detuning", self.storage_detuning),
            ("gamma_q", self.gamma_q),
            ("gamma_e", self.gamma_e),
        ]
    }
}

/// Parameters that passed [`validate_params`], with derived regime flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatedParams {
    params: SystemParams,
    /// Ω_s/|Δ_s| ≤ 0.1.
    pub dispersive: bool,
    /// Set when the storage atom is outside the dispersive regime.
    pub dispersive_warning: bool,
    /// Ω_q ≥ 10κ.
    pub strong_coupling: bool,
}

impl ValidatedParams {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn into_inner(self) -> SystemParams {
        self.params
    }
}

impl std::ops::Deref for ValidatedParams {
    type Target = SystemParams;

    fn deref(&self) -> &SystemParams {
        &self.params
    }
}

pub fn validate_params(p: &SystemParams) -> Result<ValidatedParams, ParamError> {
    for (name, value) in p.rates() {
        if !value.is_finite() {
            return Err(ParamError::InvalidRate { name, value });
        }
    }
    for (name, value) in [
        ("omega_s", p.omega_s),
        ("omega_q", p.omega_q),
        ("gamma", p.gamma),
        ("gamma_q", p.gamma_q),
        ("gamma_e", p.gamma_e),
    ] {
        if value < 0.0 {
            return Err(ParamError::InvalidRate { name, value });
        }
    }
    if p.kappa != 1.0 {
        return Err(ParamError::KappaNotUnit(p.kappa));
    }
    if p.cavity_detuning == 0.0 {
        return Err(ParamError::SingularOperatingPoint);
    }
    let ratio = if p.storage_detuning == 0.0 {
        if p.omega_s == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        p.omega_s / p.storage_detuning.abs()
    };
    let dispersive = ratio <= DISPERSIVE_LIMIT;
    Ok(ValidatedParams {
        params: *p,
        dispersive,
        dispersive_warning: !dispersive,
        strong_coupling: p.omega_q >= STRONG_COUPLING_RATIO * p.kappa,
    })
}

/// Rates in physical units (rad/s) together with the cavity quality factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub q_factor: f64,
    /// Cavity angular frequency ω_c (rad/s).
    pub omega_c: f64,
    /// Absolute hopping rate; the unit of rate. Cannot be inferred from Q alone.
    pub kappa_abs: Option<f64>,
    pub omega_s_abs: f64,
    pub omega_q_abs: f64,
    pub cavity_detuning_abs: f64,
    pub storage_detuning_abs: f64,
    pub gamma_q_abs: f64,
    pub gamma_e_abs: f64,
}

impl PhysicalParams {
    /// γ = ω_c/(2Q).
    pub fn gamma_abs(&self) -> f64 {
        self.omega_c / (2.0 * self.q_factor)
    }
}

/// Converts physical rates to κ-units. Returns the parameters and the time
/// unit 1/κ in seconds.
pub fn to_dimensionless(p: &PhysicalParams) -> Result<(SystemParams, f64), ParamError> {
    if !(p.q_factor > 0.0 && p.q_factor.is_finite()) {
        return Err(ParamError::InvalidRate {
            name: "q_factor",
            value: p.q_factor,
        });
    }
    if !(p.omega_c > 0.0 && p.omega_c.is_finite()) {
        return Err(ParamError::InvalidRate {
            name: "omega_c",
            value: p.omega_c,
        });
    }
    let kappa = p.kappa_abs.ok_or(ParamError::Underdetermined(
        "kappa_abs must be supplied; Q fixes only the waveguide decay rate",
    ))?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(ParamError::InvalidRate {
            name: "kappa_abs",
            value: kappa,
        });
    }
    let sys = SystemParams {
        omega_s: p.omega_s_abs / kappa,
        omega_q: p.omega_q_abs / kappa,
        kappa: 1.0,
        gamma: p.gamma_abs() / kappa,
        cavity_detuning: p.cavity_detuning_abs / kappa,
        storage_detuning: p.storage_detuning_abs / kappa,
        gamma_q: p.gamma_q_abs / kappa,
        gamma_e: p.gamma_e_abs / kappa,
    };
    Ok((sys, 1.0 / kappa))
}

/// Inverse of [`to_dimensionless`]. `q_factor` is kept; ω_c is rebuilt from γ.
pub fn to_physical(p: &SystemParams, kappa_abs: f64, q_factor: f64) -> PhysicalParams {
    PhysicalParams {
        q_factor,
        omega_c: 2.0 * q_factor * p.gamma * kappa_abs,
        kappa_abs: Some(kappa_abs),
        omega_s_abs: p.omega_s * kappa_abs,
        omega_q_abs: p.omega_q * kappa_abs,
        cavity_detuning_abs: p.cavity_detuning * kappa_abs,
        storage_detuning_abs: p.storage_detuning * kappa_abs,
        gamma_q_abs: p.gamma_q * kappa_abs,
        gamma_e_abs: p.gamma_e * kappa_abs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    NvDiamond,
    CircuitQed,
}

impl PresetName {
    pub const ALL: [PresetName; 2] = [PresetName::NvDiamond, PresetName::CircuitQed];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::NvDiamond => "nv-diamond",
            PresetName::CircuitQed => "circuit-qed",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nv-diamond" => Ok(PresetName::NvDiamond),
            "circuit-qed" => Ok(PresetName::CircuitQed),
            other => Err(ParamError::UnknownPreset(other.to_string())),
        }
    }
}

/// A physical realization with its κ-unit translation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: PresetName,
    pub physical: PhysicalParams,
    pub system: SystemParams,
    /// 1/κ in seconds.
    pub time_unit_s: f64,
    /// Largest tolerated single-photon absorption probability η = (Ω_s/Δ_s)²,
    /// bounding how far Δ_s may be lowered during the hold.
    pub absorption_budget: f64,
    /// Assumptions that are not fixed by the quoted device numbers.
    pub notes: Vec<&'static str>,
}

pub fn preset(name: &str) -> Result<Preset, ParamError> {
    let name: PresetName = name.parse()?;
    Ok(preset_by_name(name))
}

pub fn preset_by_name(name: PresetName) -> Preset {
    let (physical, absorption_budget, notes) = match name {
        PresetName::NvDiamond => {
            // 638 nm zero-phonon line; Q = 1e6 PBG cavity.
            let q_factor = 1.0e6;
            let omega_c = 2.95e15;
            let gamma = omega_c / (2.0 * q_factor);
            let kappa = gamma;
            (
                PhysicalParams {
                    q_factor,
                    omega_c,
                    kappa_abs: Some(kappa),
                    omega_s_abs: 1.0e10,
                    omega_q_abs: 20.0 * kappa,
                    cavity_detuning_abs: 10.0 * kappa,
                    storage_detuning_abs: 6.0e12,
                    gamma_q_abs: 0.0,
                    gamma_e_abs: 1.0e7,
                },
                1e-4,
                vec![
                    "kappa_abs is taken equal to the waveguide decay rate (kappa = gamma)",
                    "omega_q and cavity_detuning keep the reference ratios 20 kappa and 10 kappa",
                    "storage_detuning 6e12 rad/s sets a ~200 ns static gate",
                ],
            )
        }
        PresetName::CircuitQed => {
            let q_factor = 1.0e2;
            let omega_c = 1.0e9;
            let gamma = omega_c / (2.0 * q_factor);
            let kappa = gamma;
            (
                PhysicalParams {
                    q_factor,
                    omega_c,
                    kappa_abs: Some(kappa),
                    omega_s_abs: 1.0e8,
                    omega_q_abs: 1.0e8,
                    cavity_detuning_abs: 10.0 * kappa,
                    storage_detuning_abs: 5.0e10,
                    gamma_q_abs: 0.0,
                    gamma_e_abs: 1.0e6,
                },
                1e-3,
                vec![
                    "kappa_abs is taken equal to the waveguide decay rate (kappa = gamma)",
                    "both atoms couple to their stripline modes at 1e8 rad/s",
                    "storage_detuning is the ramp-time value; the hold value is optimized",
                ],
            )
        }
    };
    let (system, time_unit_s) =
        to_dimensionless(&physical).expect("preset physical parameters are complete");
    Preset {
        name,
        physical,
        system,
        time_unit_s,
        absorption_budget,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_set_is_valid_and_dispersive() {
        let v = validate_params(&SystemParams::reference()).unwrap();
        assert!(v.dispersive);
        assert!(!v.dispersive_warning);
        assert!(v.strong_coupling);
        assert_eq!(*v.params(), SystemParams::reference());
    }

    #[test]
    fn zero_cavity_detuning_is_singular() {
        let p = SystemParams {
            cavity_detuning: 0.0,
            ..SystemParams::reference()
        };
        assert_eq!(
            validate_params(&p).unwrap_err(),
            ParamError::SingularOperatingPoint
        );
        assert!(validate_params(&p)
            .unwrap_err()
            .to_string()
            .contains("singular operating point"));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let p = SystemParams {
            omega_s: -1.0,
            ..SystemParams::reference()
        };
        let err = validate_params(&p).unwrap_err();
        assert!(err.to_string().contains("invalid rate"));
    }

    #[test]
    fn non_finite_rate_is_rejected() {
        let p = SystemParams {
            storage_detuning: f64::NAN,
            ..SystemParams::reference()
        };
        assert!(matches!(
            validate_params(&p),
            Err(ParamError::InvalidRate { name: "storage_detuning", .. })
        ));
    }

    #[test]
    fn weak_storage_detuning_raises_warning() {
        let p = SystemParams {
            storage_detuning: 20.0,
            ..SystemParams::reference()
        };
        let v = validate_params(&p).unwrap();
        assert!(v.dispersive_warning);
    }

    #[test]
    fn gamma_from_q_factor() {
        let p = PhysicalParams {
            q_factor: 1e6,
            omega_c: 2.95e15,
            kappa_abs: Some(1.475e9),
            omega_s_abs: 0.0,
            omega_q_abs: 0.0,
            cavity_detuning_abs: 1.0,
            storage_detuning_abs: 0.0,
            gamma_q_abs: 0.0,
            gamma_e_abs: 0.0,
        };
        assert_eq!(p.gamma_abs(), 1.475e9);
        assert_eq!(p.gamma_abs() * 2.0 * p.q_factor, p.omega_c);
        let (sys, unit) = to_dimensionless(&p).unwrap();
        assert!((sys.gamma - 1.0).abs() < 1e-15);
        // 20 ns expressed in 1/kappa.
        assert!((20e-9 / unit - 29.5).abs() < 1e-9);
    }

    #[test]
    fn missing_kappa_is_underdetermined() {
        let mut p = preset_by_name(PresetName::NvDiamond).physical;
        p.kappa_abs = None;
        assert!(matches!(
            to_dimensionless(&p),
            Err(ParamError::Underdetermined(_))
        ));
    }

    #[test]
    fn unit_kappa_is_identity() {
        let sys = SystemParams::reference();
        let phys = to_physical(&sys, 1.0, 50.0);
        let (back, unit) = to_dimensionless(&phys).unwrap();
        assert_eq!(unit, 1.0);
        assert_eq!(back, sys);
    }

    #[test]
    fn presets() {
        let nv = preset("nv-diamond").unwrap();
        assert_eq!(nv.physical.q_factor, 1e6);
        assert_eq!(nv.physical.omega_c, 2.95e15);
        assert_eq!(nv.physical.gamma_e_abs, 1e7);
        assert!((nv.system.gamma - 1.0).abs() < 1e-15);
        validate_params(&nv.system).unwrap();

        let cq = preset("circuit-qed").unwrap();
        assert_eq!(cq.physical.omega_q_abs, 1e8);
        assert_eq!(cq.physical.gamma_e_abs, 1e6);
        assert_eq!(cq.physical.q_factor, 1e2);
        assert!((cq.system.omega_q - 20.0).abs() < 1e-12);
        validate_params(&cq.system).unwrap();

        assert!(matches!(
            preset("unknown"),
            Err(ParamError::UnknownPreset(_))
        ));
    }

    #[test]
    fn json_contract_rejects_unknown_keys() {
        let ok = r#"{"omega_s":5,"omega_q":20,"gamma":1,"cavity_detuning":10,
            "storage_detuning":1000,"gamma_q":0,"gamma_e":0}"#;
        let p: SystemParams = serde_json::from_str(ok).unwrap();
        assert_eq!(p, SystemParams::reference());
        let bad = r#"{"omega_s":5,"omega_q":20,"gamma":1,"cavity_detuning":10,
            "storage_detuning":1000,"gamma_q":0,"gamma_e":0,"kappa":2}"#;
        assert!(serde_json::from_str::<SystemParams>(bad).is_err());
    }
}
