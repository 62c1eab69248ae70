//! Physical constants, derived laser/atom quantities and the three
//! perturbative parameters (beta, eta, mu).
//!
//! All frequencies are angular (rad/s). Hz only shows up at the CLI edge.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J s), CODATA 2018 exact.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K), CODATA 2018 exact.
pub const K_B: f64 = 1.380_649e-23;

/// Upper value of the dimensionless second-order beta coefficient used by
/// [`temperature_bound`] when nothing else is configured.
pub const DEFAULT_D: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("invalid species `{name}`: {reason}")]
    InvalidSpecies { name: String, reason: String },
    #[error("eta is undefined for v_z = {v_z} m/s (opposite-Doppler selection needs a moving atom)")]
    EtaUndefined { v_z: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Direction of the momentum kick delivered by a Raman pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Direction::Plus => '+',
            Direction::Minus => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpecies {
    pub name: String,
    /// kg
    pub mass: f64,
    /// Single-photon carrier wavelength (m).
    pub wavelength: f64,
}

impl AtomSpecies {
    pub fn new(name: impl Into<String>, mass: f64, wavelength: f64) -> Result<Self, PhysicsError> {
        let species = AtomSpecies { name: name.into(), mass, wavelength };
        species.validate()?;
        Ok(species)
    }

    /// Rubidium 87 on the D2 line.
    pub fn rb87() -> Self {
        AtomSpecies { name: "Rb87".to_string(), mass: 1.443_16e-25, wavelength: 780.241e-9 }
    }

    /// Built-in species table. Only Rb87 ships; anything else comes from config.
    pub fn lookup(name: &str) -> Option<Self> {
        match name {
            "Rb87" | "rb87" | "87Rb" => Some(Self::rb87()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |reason: &str| {
            Err(PhysicsError::InvalidSpecies { name: self.name.clone(), reason: reason.to_string() })
        };
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return bad("mass must be positive and finite");
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return bad("wavelength must be positive and finite");
        }
        Ok(())
    }
}

/// Species plus the quantities every other module needs: the effective
/// wavevector `k_e = 2 (2 pi / lambda)` and `omega_r = hbar k_e^2 / 2m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomLaserParams {
    pub species: AtomSpecies,
    /// rad/m
    pub k_e: f64,
    /// rad/s
    pub omega_r: f64,
}

impl AtomLaserParams {
    pub fn mass(&self) -> f64 {
        self.species.mass
    }

    /// One photon-pair momentum kick, `hbar k_e`.
    pub fn hbar_k(&self) -> f64 {
        HBAR * self.k_e
    }

    /// Rabi frequency that realises a given `mu = omega_r / Omega`.
    pub fn rabi_for_mu(&self, mu: f64) -> f64 {
        self.omega_r / mu
    }

    /// `delta_p^(n) = k_e (p + n hbar k_e) / m`.
    pub fn delta_n(&self, p: f64, n: i32) -> f64 {
        self.k_e * (p + f64::from(n) * self.hbar_k()) / self.mass()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbativeParams {
    pub beta: f64,
    pub eta: f64,
    pub mu: f64,
}

pub fn derive_params(species: &AtomSpecies) -> Result<AtomLaserParams, PhysicsError> {
    species.validate()?;
    let k_e = 2.0 * (TAU / species.wavelength);
    let omega_r = HBAR * k_e * k_e / (2.0 * species.mass);
    Ok(AtomLaserParams { species: species.clone(), k_e, omega_r })
}

/// Two-photon detuning seen by a pair kicking along `direction` for an atom
/// moving at `v_z`: `+-k_e v_z + omega_r`.
pub fn doppler_detuning(params: &AtomLaserParams, v_z: f64, direction: Direction) -> f64 {
    direction.sign() * params.k_e * v_z + params.omega_r
}

pub fn beta(params: &AtomLaserParams, p: f64, rabi: f64) -> f64 {
    (params.k_e * p / params.mass()) / (2.0 * rabi)
}

pub fn eta(params: &AtomLaserParams, rabi: f64, v_z: f64) -> Result<f64, PhysicsError> {
    if v_z == 0.0 || !v_z.is_finite() {
        return Err(PhysicsError::EtaUndefined { v_z });
    }
    Ok(rabi / (2.0 * params.k_e * v_z))
}

pub fn mu(params: &AtomLaserParams, rabi: f64) -> f64 {
    params.omega_r / rabi
}

pub fn perturbative_params(
    params: &AtomLaserParams,
    p: f64,
    rabi: f64,
    v_z: f64,
) -> Result<PerturbativeParams, PhysicsError> {
    if !(rabi.is_finite() && rabi > 0.0) {
        return Err(PhysicsError::Domain(format!("Rabi frequency must be positive, got {rabi}")));
    }
    Ok(PerturbativeParams {
        beta: beta(params, p, rabi),
        eta: eta(params, rabi, v_z)?,
        mu: mu(params, rabi),
    })
}

/// `mu_m = sqrt(4 m^2 - 1) / 2`: the Rabi frequencies at which the detuned
/// spectator transition completes whole cycles during a pi pulse.
pub fn special_mu(m: u32) -> Result<f64, PhysicsError> {
    if m < 1 {
        return Err(PhysicsError::Domain("special mu index must be >= 1".into()));
    }
    let m = f64::from(m);
    Ok((4.0 * m * m - 1.0).sqrt() / 2.0)
}

/// Generalised Rabi factor `sqrt(4 mu^2 + 1)`.
pub fn mu_bar(mu: f64) -> f64 {
    (4.0 * mu * mu + 1.0).sqrt()
}

/// `(C_d, S_d)` of the detuned |a,0> <-> |b,-1> oscillation over a pi pulse.
pub fn cd_sd(mu: f64) -> (f64, f64) {
    let mb = mu_bar(mu);
    let arg = PI * mb / 2.0;
    (arg.cos(), arg.sin() / mb)
}

/// Highest cloud temperature for which the second-order beta correction stays
/// below one: `4 m Omega^2 / (D k_B k_e^2)`.
pub fn temperature_bound(params: &AtomLaserParams, rabi: f64, d: f64) -> Result<f64, PhysicsError> {
    if !(rabi > 0.0 && d > 0.0) {
        return Err(PhysicsError::Domain(format!("need Omega > 0 and D > 0, got {rabi}, {d}")));
    }
    Ok(4.0 * params.mass() * rabi * rabi / (d * K_B * params.k_e * params.k_e))
}

pub fn sigma_p_from_temperature(species: &AtomSpecies, t_c: f64) -> Result<f64, PhysicsError> {
    if !(t_c >= 0.0) {
        return Err(PhysicsError::Domain(format!("temperature must be >= 0 K, got {t_c}")));
    }
    Ok((species.mass * K_B * t_c).sqrt())
}

pub fn temperature_from_sigma_p(species: &AtomSpecies, sigma_p: f64) -> f64 {
    sigma_p * sigma_p / (species.mass * K_B)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rb() -> AtomLaserParams {
        derive_params(&AtomSpecies::rb87()).unwrap()
    }

    #[test]
    fn rb87_derived_values() {
        let p = rb();
        assert!((p.k_e - 1.6107e7).abs() / 1.6107e7 < 1e-4, "k_e = {}", p.k_e);
        assert!((p.omega_r - 9.480e4).abs() / 9.480e4 < 1e-3, "omega_r = {}", p.omega_r);
        // omega_r is four single-photon recoils; the recoil is about 3.77 kHz.
        let recoil_hz = p.omega_r / 4.0 / TAU;
        assert!((recoil_hz - 3.77e3).abs() < 10.0, "{recoil_hz}");
    }

    #[test]
    fn wavelength_scaling() {
        let p1 = rb();
        let mut s = AtomSpecies::rb87();
        s.wavelength *= 2.0;
        let p2 = derive_params(&s).unwrap();
        assert!((p2.k_e - p1.k_e / 2.0).abs() < 1e-6);
        assert!((p2.omega_r - p1.omega_r / 4.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_species() {
        assert!(AtomSpecies::new("x", 0.0, 780e-9).is_err());
        assert!(AtomSpecies::new("x", 1e-25, -1.0).is_err());
        let s = AtomSpecies { name: "x".into(), mass: 0.0, wavelength: 1e-6 };
        assert!(matches!(derive_params(&s), Err(PhysicsError::InvalidSpecies { .. })));
    }

    #[test]
    fn doppler() {
        let p = rb();
        assert_eq!(doppler_detuning(&p, 0.0, Direction::Plus), p.omega_r);
        assert_eq!(doppler_detuning(&p, 0.0, Direction::Minus), p.omega_r);
        let d = doppler_detuning(&p, 1.0, Direction::Plus);
        assert!((d - 1.6202e7).abs() / 1.6202e7 < 1e-4);
        for v in [-3.0, 0.1, 7.5] {
            let s = doppler_detuning(&p, v, Direction::Plus) + doppler_detuning(&p, v, Direction::Minus);
            assert!((s - 2.0 * p.omega_r).abs() < 1e-6);
            let diff = doppler_detuning(&p, v, Direction::Plus) - doppler_detuning(&p, v, Direction::Minus);
            assert!((diff - 2.0 * p.k_e * v).abs() <= 1e-9 * diff.abs());
        }
    }

    #[test]
    fn perturbative_parameters() {
        let p = rb();
        let omega = PI / (2.0 * 1e-3);
        let pp = perturbative_params(&p, 0.0, omega, 1.0).unwrap();
        assert!((pp.eta - 4.88e-5).abs() < 0.01e-5, "eta = {}", pp.eta);
        assert_eq!(pp.beta, 0.0);
        let pp = perturbative_params(&p, 0.0, p.omega_r, 1.0).unwrap();
        assert_eq!(pp.mu, 1.0);
        assert!(matches!(
            perturbative_params(&p, 0.0, omega, 0.0),
            Err(PhysicsError::EtaUndefined { .. })
        ));
    }

    #[test]
    fn special_mu_values() {
        let m1 = special_mu(1).unwrap();
        assert!((m1 - 0.866_025_403_784_438_6).abs() < 1e-15);
        assert!((mu_bar(m1) - 2.0).abs() < 1e-15);
        assert!((special_mu(2).unwrap() - 1.936_491_673_103_708_5).abs() < 1e-15);
        let (_, sd) = cd_sd(m1);
        assert!(sd.abs() < 1e-15);
        assert!(special_mu(0).is_err());
    }

    #[test]
    fn special_mu_identity_wide_range() {
        for m in (1..=1_000_000u32).step_by(997).chain([1_000_000]) {
            let mu = special_mu(m).unwrap();
            let lhs = 4.0 * mu * mu + 1.0;
            let rhs = 4.0 * f64::from(m) * f64::from(m);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs, "m = {m}");
        }
    }

    #[test]
    fn temperature_bound_rb87() {
        let p = rb();
        let rabi = p.omega_r / special_mu(1).unwrap();
        let t = temperature_bound(&p, rabi, DEFAULT_D).unwrap();
        assert!((t - 0.32e-6).abs() / 0.32e-6 < 0.01, "T = {t}");
        let t2 = temperature_bound(&p, rabi, 2.0 * DEFAULT_D).unwrap();
        assert!((t2 - t / 2.0).abs() < 1e-20);
        // At the bound the second-order correction is exactly one.
        let sigma = sigma_p_from_temperature(&p.species, t).unwrap();
        let crit = DEFAULT_D * p.k_e.powi(2) * sigma.powi(2) / (2.0 * p.mass() * rabi).powi(2);
        assert!((crit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_temperature_cross_checks() {
        let p = rb();
        let s = &p.species;
        assert_eq!(sigma_p_from_temperature(s, 0.0).unwrap(), 0.0);
        assert!(sigma_p_from_temperature(s, -1e-9).is_err());
        let hk = p.hbar_k();
        let r = sigma_p_from_temperature(s, 1.45e-6).unwrap() / hk;
        assert!((r - 1.0).abs() < 0.01, "{r}");
        let r = sigma_p_from_temperature(s, 0.14e-9).unwrap() / (hk / 100.0);
        assert!((r - 1.0).abs() < 0.02, "{r}");
        let t = temperature_from_sigma_p(s, hk / 100.0);
        assert!((t - 0.145e-9).abs() < 0.002e-9, "{t}");
    }

    #[test]
    fn pure_functions_are_bitwise_repeatable() {
        let a = derive_params(&AtomSpecies::rb87()).unwrap();
        let b = derive_params(&AtomSpecies::rb87()).unwrap();
        assert_eq!(a.k_e.to_bits(), b.k_e.to_bits());
        assert_eq!(a.omega_r.to_bits(), b.omega_r.to_bits());
    }
}
