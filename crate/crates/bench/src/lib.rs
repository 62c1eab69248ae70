//! Shared fixtures for the benchmarks.

use gravsim_core::physics::special_mu;
use gravsim_core::{canonical_gravimeter_sequence, derive_params, AtomSpecies, SequenceSpec};

/// Seven-pulse gravimeter at Omega = omega_R / mu_1.
pub fn gravimeter(t_wait: f64, v0: f64) -> SequenceSpec {
    let species = AtomSpecies::rb87();
    let params = derive_params(&species).expect("Rb87 constants are valid");
    let mu1 = special_mu(1).expect("m = 1 is valid");
    canonical_gravimeter_sequence(t_wait, params.omega_r / mu1, species, v0, 9.81, 9.81)
}
