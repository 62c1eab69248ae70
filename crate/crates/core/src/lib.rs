//! Simulation of a composite Raman-pulse atom gravimeter.
//!
//! Two routes to the same observables:
//! * [`ladder`] integrates the momentum-ladder Schrodinger equation numerically;
//! * [`analytic`] evaluates the first-order perturbative model.
//!
//! [`experiments`] drives scans over either engine, and [`acceptance`] holds the
//! end-to-end checks that `gravsim validate` runs.

pub mod acceptance;
pub mod analytic;
pub mod experiments;
pub mod ladder;
pub mod ode;
pub mod physics;
pub mod sequence;

pub use analytic::{AnalyticError, Amplitudes, FringeCoefficients, Level, PerturbedState, StateLabel};
pub use experiments::{
    contrast, fit_sinusoid, run_scan, single_run, thermal_average, write_results, Engine, ExperimentError, Format, Range, ScanKind,
    RunReport, ScanPoint, ScanResult, ScanSpec, Thermal,
};
pub use ladder::{populations, run_sequence, LadderState, Populations, SimEnv, SimError, Tolerances};
pub use physics::{derive_params, AtomLaserParams, AtomSpecies, Direction, PhysicsError};
pub use sequence::{
    canonical_gravimeter_sequence, parse_sequence, ParseError, PulseSpec, SequenceError, SequenceSpec, Step, WaitSpec,
};

use thiserror::Error;

/// Any failure the library can report, grouped so front ends can map input
/// problems and computation problems to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl Error {
    /// True when the inputs were at fault rather than the computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Parse(_) | Error::Sequence(_) | Error::Physics(_) => true,
            Error::Sim(e) => sim_input(e),
            Error::Analytic(e) => analytic_input(e),
            Error::Experiment(e) => match e {
                ExperimentError::InvalidSpec(_) | ExperimentError::Io { .. } | ExperimentError::Physics(_) => true,
                ExperimentError::Sim(e) => sim_input(e),
                ExperimentError::Model(e) => analytic_input(e),
                _ => false,
            },
        }
    }
}

fn sim_input(e: &SimError) -> bool {
    matches!(e, SimError::Settings(_) | SimError::Sequence(_) | SimError::Physics(_))
}

fn analytic_input(e: &AnalyticError) -> bool {
    matches!(e, AnalyticError::NotCanonical(_) | AnalyticError::Sequence(_))
}
