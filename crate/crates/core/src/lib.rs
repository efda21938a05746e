//! Periodic homogenization of Lévy-type processes: effective drift and
//! covariance from a Lévy triplet on the torus, plus a Monte Carlo harness
//! that checks the limit by simulating the diffusively scaled process.

pub mod config;
pub mod corrector;
pub mod effective;
pub mod error;
pub mod generator;
pub mod grid;
pub mod invariant;
pub mod json;
pub mod model;
pub mod simulate;
pub mod sparse;
pub mod stats;
pub mod verify;

pub use corrector::{solve_corrector, CorrectorField};
pub use effective::{assemble_sigma, homogenize, EffectiveLaw, Homogenized};
pub use error::{Error, Result};
pub use generator::{assemble, GeneratorMatrix};
pub use grid::{Stencil, TorusGrid};
pub use invariant::{estimate_ergodicity, solve_invariant, ErgodicityEstimate, InvariantMeasure};
pub use model::{LevyTripletModel, ModelSpec, TorusGeometry};
pub use simulate::{simulate_paths, Initial, PathEnsemble, SimulationConfig, SimulationCost, SmallJumps};
pub use config::{RunConfig, SweepConfig, Tolerances};
pub use verify::{check_etp1, check_etp2, check_gaussianity, full_report, VerificationReport};
