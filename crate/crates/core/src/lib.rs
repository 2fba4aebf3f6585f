//! Exact-computation and simulation laboratory for off-policy evaluation in
//! tabular POMDPs.
//!
//! The crate computes, by exact enumeration at desk scale, every
//! distributional object needed to study future-dependent value functions:
//! belief and outcome matrices, latent values and occupancies, Bellman
//! residual operators, coverage coefficients, and the minimax estimators
//! built on top of them, plus a seeded trajectory simulator, fixture
//! generators, and an executable verification suite.

pub mod coverage;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod fdvf;
pub mod fixtures;
pub mod index;
pub mod linalg;
pub mod pomdp;
pub mod report;
pub mod residual;
pub mod simulate;
pub mod stepfn;
pub mod study;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
pub use exact::{build_step_algebra, latent_value, policy_value, Scenario, StepAlgebra};
pub use fixtures::{generate_fixture, Fixture, FixtureKind, FixtureParams};
pub use index::{FutureIndex, HistoryIndex, SpaceDims};
pub use pomdp::{validate_model, MemorylessPolicy, TabularPomdp, ValidationReport};
pub use simulate::{Trajectory, TrajectoryDataset};
pub use stepfn::{HistoryFunction, StepFunction, ValueFunction};
