//! Time-bin linear-optics simulator for delay-line interferometers.
//!
//! A pulse train enters an unbalanced Mach-Zehnder (or a three-arm cascade)
//! whose arm delay equals the pulse spacing, so partial waves of *different*
//! pulses meet at the output splitter. Blocking one arm lets a click at the
//! otherwise dark port reveal the obstacle through a neighbouring pulse.
//!
//! The crate is organised around one data model and several engines:
//!
//! * [`circuit`] describes the interferometer and unrolls it over time bins
//!   into a single linear map (an isometry onto detector and loss terminals).
//! * [`coherent`] propagates coherent pulse trains, derives threshold-click
//!   statistics, samples Monte-Carlo event logs and evaluates conditional
//!   interaction-free probabilities.
//! * [`singlephoton`] handles a single photon spread over many bins.
//! * [`fock`] is a brute-force truncated Fock-space oracle that walks the
//!   circuit element by element, independent of the unrolled map.
//! * [`multiport`] provides the tritter, triangular two-mode decompositions
//!   and phase-insensitive cascade comparison.
//! * [`scenario`] and [`run`] load scenario files and drive the engines.

pub mod circuit;
pub mod coherent;
pub mod events;
pub mod fock;
pub mod linalg;
pub mod multiport;
pub mod run;
pub mod scenario;
pub mod singlephoton;

pub use circuit::{compile, default_beamsplitter, CircuitSpec, CompiledCircuit, Element, ElementKind};
pub use linalg::{CMatrix, C64};

/// Crate-wide error used by the orchestration layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Circuit(#[from] circuit::CircuitError),
    #[error(transparent)]
    Coherent(#[from] coherent::CoherentError),
    #[error(transparent)]
    SinglePhoton(#[from] singlephoton::SinglePhotonError),
    #[error(transparent)]
    Fock(#[from] fock::FockError),
    #[error(transparent)]
    Multiport(#[from] multiport::MultiportError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Run(#[from] run::RunError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
