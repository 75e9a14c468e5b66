//! Functional Itô calculus on discretised path space, path-dependent
//! stochastic control with BSDE costs, and viscosity tests for the
//! associated path-dependent HJB equations.

pub mod bshjb;
pub mod control;
pub mod funcalc;
pub mod gauge;
pub mod pathspace;
pub mod phjb;
pub mod varprinciple;

pub use control::{ControlError, ControlProblem, ControlStrategy};
pub use funcalc::{CalcError, FdScheme, PathFunctional};
pub use gauge::{GaugeError, GaugeParams};
pub use pathspace::{d_infty, sup_distance, GridConfig, Path, PathError};
pub use varprinciple::{borwein_preiss, BpConfig, BpError, BpResult};
