//! Simulation of an engineered atomic reservoir that drives a microwave
//! cavity field toward nonclassical steady states.
//!
//! A stream of two-level atoms crosses the cavity one by one. Each atom is
//! prepared in a fixed superposition, interacts with the field through a
//! Jaynes-Cummings coupling with a tailored detuning sequence, and is
//! discarded. Tracing over the atoms turns the per-atom propagator into a
//! Kraus map whose fixed point is, depending on the detuning sequence, a
//! coherent state, a multi-component superposition of coherent states, or an
//! entangled two-mode superposition.
//!
//! Module layout:
//!
//! * [`linalg`] - dense complex linear algebra (Hermitian eigensolver,
//!   matrix exponential, small-matrix helpers).
//! * [`quad`] - adaptive quadrature and scalar root finding.
//! * [`fock`] - truncated Fock space, field states, elementary operators.
//! * [`propagators`] - single-mode atom-field propagators: exact integration
//!   of the time-dependent Schrodinger equation, analytic rotation operators,
//!   resonant/adiabatic/composite forms, two-atom transits.
//! * [`reservoir`] - Kraus maps, pointer states, steady-state iteration,
//!   convergence-rate extraction, parameter sweeps.
//! * [`open_systems`] - cavity damping: Lindblad propagation, Monte Carlo
//!   trajectories, reservoir/damping interleaving, the stationary amplitude
//!   distribution of the damped reservoir.
//! * [`phase_space`] - Wigner functions, quadrature marginals, fidelities.
//! * [`two_mode`] - two modes sharing the atom stream: entangling sequence,
//!   exact propagator, per-mode damping, Bell-signal analysis.

use std::fmt;

pub mod fock;
pub mod linalg;
pub mod open_systems;
pub mod phase_space;
pub mod propagators;
pub mod quad;
pub mod reservoir;
pub mod two_mode;

pub use linalg::C64;

/// Errors shared across the simulation modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A Hilbert-space dimension was zero.
    NonPositiveDim,
    /// Operands live in spaces of different dimensions.
    DimensionMismatch { expected: usize, got: usize },
    /// A state lost more norm to truncation than the budget allows.
    TruncationLoss { lost: f64, budget: f64 },
    /// Step control could not reach the requested integration tolerance.
    IntegrationFailure(String),
    /// An iteration stagnated before reaching its target.
    NotConverged(String),
    /// The pointer-state recurrence hit a decoupled Fock level.
    TrappingState { level: usize },
    /// A scalar search never bracketed a sign change.
    NoBracket(String),
    /// Quadrature of the amplitude-distribution normalization failed.
    DivergentNormalization(String),
    /// A two-mode sequence violated the total-time commensurability rule.
    TimingConstraintViolated(String),
    /// An invalid run configuration (bad key, bad value, missing entry).
    ConfigError(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonPositiveDim => write!(f, "Hilbert-space dimension must be positive"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::TruncationLoss { lost, budget } => {
                write!(f, "truncation loss {lost:.3e} exceeds budget {budget:.3e}")
            }
            Error::IntegrationFailure(msg) => write!(f, "integration failure: {msg}"),
            Error::NotConverged(msg) => write!(f, "iteration did not converge: {msg}"),
            Error::TrappingState { level } => {
                write!(f, "trapping state at Fock level {level} blocks the pointer recurrence")
            }
            Error::NoBracket(msg) => write!(f, "root search failed to bracket: {msg}"),
            Error::DivergentNormalization(msg) => {
                write!(f, "amplitude-distribution normalization failed: {msg}")
            }
            Error::TimingConstraintViolated(msg) => {
                write!(f, "timing constraint violated: {msg}")
            }
            Error::ConfigError(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
