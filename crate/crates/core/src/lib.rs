#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Residence times of Itô systems: simulation, Monte Carlo statistics,
//! Lyapunov certificates, the one-dimensional mean residence problem and
//! domain-aiming feedback synthesis.

pub mod control;
pub mod expr;
pub mod linalg;
pub mod lyap;
pub mod mc;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod sde;

pub use expr::{Expr, ExprError, Scope};
pub use linalg::Matrix;
pub use lyap::{check, Certificate, CertificateKind, CheckReport, LyapunovFn, Region};
pub use mc::{BoundReport, ResidenceStats};
pub use rng::PathRng;
pub use sde::{Domain, PathOutcome, SdeSystem, SimOptions};
