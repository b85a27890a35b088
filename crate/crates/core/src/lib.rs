//! Flipped Radau pseudospectral transcription of unconstrained optimal
//! control problems, a Newton solver for the resulting KKT system, costate
//! recovery, and the diagnostics used to study the scheme's convergence.

pub mod error;
pub mod exec;
pub mod harness;

pub mod kkt;
pub mod matrices;
pub mod ocp;
pub mod problems;
pub mod radau;

pub use error::{Error, Result};
pub mod solver;
pub use exec::Execution;
pub use kkt::{DiscreteSolution, KktJacobian, KktLayout, KktResidual};
pub use matrices::{CollocationMatrices, PropertyReport};
pub use ocp::{ControlSystem, HamiltonianHessians, OcpProblem, TimeMap};
pub use radau::{compute_lgr_scheme, CollocationScheme, LagrangeBasis};

pub use solver::{solve, SolveReport, SolverConfig};
