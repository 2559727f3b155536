//! Numerical laboratory for the linear matrix differential equation
//!
//! ```text
//! dX/dt = A^H X + X B + C,    X(0) = D,
//! ```
//!
//! built around history states, clock-block overlaps, Dyson propagators,
//! Krylov baselines and query-cost bookkeeping.

pub mod cli;
pub mod costmodel;
pub mod error;
pub mod fermion;
pub mod histsolve;
pub mod krylov;
pub mod lchsmodel;
pub mod matcore;
pub mod oracle;
pub mod overlap;
pub mod problem;
pub mod timedep;

pub use error::{Error, Result};
