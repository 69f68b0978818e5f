//! Nonlocal-dispersal SIS epidemic with free boundaries: dispersal kernels,
//! principal eigenvalues of the linearized operator, explicit time stepping
//! with moving fronts, and parameter sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod config;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod io;
pub mod kernel;
pub mod oracle;
pub mod par;
pub mod sweep;
pub mod verify;

pub use coeffs::{CoefficientModel, SpatialFunction};
pub use config::{parse_config, RunConfig};
pub use dynamics::{simulate, Outcome, OutcomeClass, SimConfig, SimState, Thresholds, TimeStep, Trajectory};
pub use eigen::{principal_eigenvalue, EigenOptions, EigenProblem, EigenResult};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec, KernelTable, QuadratureGrid};
pub use par::Exec;
pub use sweep::{run_sweep, PhaseTable, SweepPlan};
